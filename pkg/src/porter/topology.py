"""Communication graphs, mixing matrices and mixing rates."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from porter.rng import Purpose, stream

NAMED_KINDS = ("ring", "complete", "path", "star")

ROW_SUM_TOL = 1e-12
POWER_TOL = 1e-10
POWER_MAX_ITER = 10_000


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph on agents ``0..n-1``.

    Edges are stored as ``(i, j)`` with ``i < j``.
    """

    n: int
    edges: frozenset[tuple[int, int]]

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"graph needs at least one node, got n={self.n}")
        normalized = set()
        for i, j in self.edges:
            if i == j:
                raise ValueError(f"self-loop at node {i}")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ValueError(f"edge ({i}, {j}) outside [0, {self.n})")
            normalized.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(normalized))

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=np.int64)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def adjacency(self) -> np.ndarray:
        A = np.zeros((self.n, self.n), dtype=bool)
        for i, j in self.edges:
            A[i, j] = A[j, i] = True
        return A

    @property
    def connected(self) -> bool:
        if self.n == 1:
            return True
        ncomp, _ = connected_components(csr_matrix(self.adjacency()), directed=False)
        return ncomp == 1

    def to_text(self) -> str:
        lines = [f"n {self.n}"]
        lines += [f"{i} {j}" for i, j in sorted(self.edges)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Graph":
        lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise ValueError("empty edge list")
        head = lines[0].split()
        if len(head) != 2 or head[0] != "n":
            raise ValueError(f"first line must be 'n <count>', got {lines[0]!r}")
        n = int(head[1])
        edges = set()
        for lineno, ln in enumerate(lines[1:], start=2):
            parts = ln.split()
            if len(parts) != 2:
                raise ValueError(f"line {lineno}: expected 'i j', got {ln!r}")
            edges.add((int(parts[0]), int(parts[1])))
        return cls(n, frozenset(edges))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path: str | Path) -> "Graph":
        return cls.from_text(Path(path).read_text())


@dataclass(frozen=True, eq=False)
class MixingMatrix:
    """Mixing matrix ``W`` with its mixing rate.

    ``gamma`` is set only for regularized matrices ``I + gamma (W - I)``.
    Entries may be negative and ``W`` need not be symmetric; only the unit
    row and column sums are required.
    """

    W: np.ndarray
    alpha: float
    gamma: float | None = None

    @property
    def n(self) -> int:
        return self.W.shape[0]


def build_er_graph(n: int, p: float, seed: int) -> Graph:
    """Erdos-Renyi graph: each unordered pair kept independently with probability p."""
    if n < 2:
        raise ValueError(f"ER graph needs n >= 2, got {n}")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"edge probability must be in [0, 1], got {p}")
    rng = stream(seed, Purpose.GRAPH)
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(iu.size) < p
    return Graph(n, frozenset(zip(iu[keep].tolist(), ju[keep].tolist())))


def build_er_connected(n: int, p: float, seed: int, max_tries: int = 100) -> tuple[Graph, int]:
    """Resample ER graphs with seeds ``seed, seed+1, ...`` until one is connected.

    Returns the graph and the seed that produced it.
    """
    for k in range(max_tries):
        g = build_er_graph(n, p, seed + k)
        if g.connected:
            return g, seed + k
    raise ValueError(f"no connected ER(n={n}, p={p}) graph in {max_tries} tries")


def build_named_graph(kind: str, n: int) -> Graph:
    if n < 2:
        raise ValueError(f"graph needs n >= 2, got {n}")
    if kind == "ring":
        edges = {(i, (i + 1) % n) for i in range(n)}
    elif kind == "complete":
        edges = {(i, j) for i in range(n) for j in range(i + 1, n)}
    elif kind == "path":
        edges = {(i, i + 1) for i in range(n - 1)}
    elif kind == "star":
        edges = {(0, j) for j in range(1, n)}
    else:
        raise ValueError(f"unknown graph kind {kind!r}; expected one of {NAMED_KINDS}")
    return Graph(n, frozenset(edges))


def metropolis_weights(g: Graph) -> MixingMatrix:
    """Metropolis-Hastings weights ``1 / (1 + max(deg_i, deg_j))`` on edges."""
    if not g.connected:
        raise ValueError("Metropolis weights need a connected graph (mixing rate would be 1)")
    deg = g.degrees()
    W = np.zeros((g.n, g.n))
    for i, j in g.edges:
        W[i, j] = W[j, i] = 1.0 / (1.0 + max(deg[i], deg[j]))
    np.fill_diagonal(W, 1.0 - W.sum(axis=1))
    return MixingMatrix(W, mixing_rate(W))


def check_mixing_matrix(W: np.ndarray, graph: Graph | None = None, tol: float = ROW_SUM_TOL) -> None:
    """Raise ``ValueError`` unless W has unit row/column sums and respects ``graph``."""
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ValueError(f"mixing matrix must be square, got shape {W.shape}")
    ones = np.ones(W.shape[0])
    row_err = np.max(np.abs(W @ ones - 1.0))
    col_err = np.max(np.abs(W.T @ ones - 1.0))
    if row_err > tol or col_err > tol:
        raise ValueError(f"row/column sums off by {max(row_err, col_err):.3e} (tolerance {tol})")
    if graph is not None:
        if graph.n != W.shape[0]:
            raise ValueError(f"graph has {graph.n} nodes, W is {W.shape[0]}x{W.shape[0]}")
        mask = ~graph.adjacency()
        np.fill_diagonal(mask, False)
        if np.any(W[mask] != 0.0):
            raise ValueError("W has nonzero weight on a non-edge")


def mixing_rate(W: np.ndarray, tol: float = POWER_TOL, max_iter: int = POWER_MAX_ITER) -> float:
    """Operator norm of ``W - 11^T/n`` by power iteration on its Gram matrix.

    The iteration matrix is squared after every step, so step k applies
    ``G^(2^k)``; this keeps nearly-degenerate spectra (e.g. ``I + gamma (W - I)``
    with tiny gamma) within the iteration cap. Stops when the Rayleigh
    quotient changes by less than ``tol`` relative.
    """
    W = np.asarray(W, dtype=np.float64)
    n = W.shape[0]
    D = W - np.full((n, n), 1.0 / n)
    G = D.T @ D
    scale = np.max(np.abs(G))
    if scale == 0.0:
        return 0.0
    # ones + e_0 alone can lie in the null space of W - J (e.g. when column 0
    # of W is uniform); the fixed pseudo-random term makes the start generic
    v = np.ones(n) / np.sqrt(n)
    v[0] += 1e-3
    v += 1e-3 * np.random.default_rng(0).standard_normal(n)
    v /= np.linalg.norm(v)
    P = G / scale
    lam = float(v @ G @ v)
    for _ in range(max_iter):
        w = P @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return float(np.sqrt(max(lam, 0.0)))
        v = w / norm
        lam_new = float(v @ G @ v)
        if abs(lam_new - lam) <= tol * abs(lam_new):
            return float(np.sqrt(max(lam_new, 0.0)))
        lam = lam_new
        P = P @ P
        P /= np.max(np.abs(P))
    raise ConvergenceError(f"power iteration did not reach relative tolerance {tol} in {max_iter} iterations")


def regularize(mix: MixingMatrix, gamma: float) -> MixingMatrix:
    """Regularized matrix ``I + gamma (W - I)`` with its recomputed mixing rate."""
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma must be in (0, 1], got {gamma}")
    n = mix.n
    W_hat = np.eye(n) + gamma * (mix.W - np.eye(n))
    alpha_hat = mixing_rate(W_hat)
    bound = 1.0 + gamma * (mix.alpha - 1.0)
    if alpha_hat > bound + 1e-9:
        raise RuntimeError(f"regularized mixing rate {alpha_hat} exceeds bound {bound}")
    return MixingMatrix(W_hat, alpha_hat, gamma)
