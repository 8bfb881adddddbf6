"""Objectives, per-sample gradient oracles, dataset readers and partitioning."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit, logsumexp

from porter.rng import Purpose, stream

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class ParseError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    name: str = "data"
    n_classes: int = 2

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if features.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {features.shape}")
        if labels.shape != (features.shape[0],):
            raise ValueError(f"{labels.size} labels for {features.shape[0]} rows")
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
            raise ValueError(f"labels outside [0, {self.n_classes})")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @property
    def m(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def subset(self, rows: np.ndarray, name: str | None = None) -> "Dataset":
        return Dataset(self.features[rows], self.labels[rows], name or self.name, self.n_classes)

    def same_as(self, other: "Dataset") -> bool:
        return (
            self.n_classes == other.n_classes
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
        )


class Problem:
    """Finite-sum objective: mean per-sample loss over a dataset.

    Subclasses implement the batched per-sample loss and gradient; everything
    else is derived from them.
    """

    dim: int

    def sample_losses(self, x: np.ndarray, F: np.ndarray, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def per_sample_grads(self, x: np.ndarray, F: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Gradients of each sample's loss, shape ``(len(y), dim)``."""
        raise NotImplementedError

    def loss(self, x: np.ndarray, data: Dataset) -> float:
        return float(np.mean(self.sample_losses(x, data.features, data.labels)))

    def grad(self, x: np.ndarray, data: Dataset) -> np.ndarray:
        return self.batch_grad(x, data.features, data.labels)

    def batch_grad(self, x: np.ndarray, F: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self.per_sample_grads(x, F, y).mean(axis=0)

    def loss_and_grad(self, x: np.ndarray, data: Dataset) -> tuple[float, np.ndarray]:
        return self.loss(x, data), self.grad(x, data)

    def predict(self, x: np.ndarray, F: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def accuracy(self, x: np.ndarray, data: Dataset) -> float:
        return float(np.mean(self.predict(x, data.features) == data.labels))

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            raise ValueError(f"parameter vector has shape {x.shape}, expected ({self.dim},)")
        return x


class LogRegNonconvex(Problem):
    """Logistic loss with the nonconvex penalty ``lam * sum(x_i^2 / (1 + x_i^2))``.

    Labels 0/1 are mapped to signs -1/+1 inside the loss.
    """

    def __init__(self, dim: int, lam: float = 0.2):
        if lam < 0:
            raise ValueError(f"lambda must be >= 0, got {lam}")
        self.dim = dim
        self.lam = lam

    def regularizer(self, x: np.ndarray) -> float:
        return float(self.lam * np.sum(x**2 / (1.0 + x**2)))

    def regularizer_grad(self, x: np.ndarray) -> np.ndarray:
        return self.lam * 2.0 * x / (1.0 + x**2) ** 2

    def sample_losses(self, x, F, y):
        x = self._check(x)
        margins = (2.0 * y - 1.0) * (F @ x)
        return np.logaddexp(0.0, -margins) + self.regularizer(x)

    def per_sample_grads(self, x, F, y):
        x = self._check(x)
        s = 2.0 * y - 1.0
        coef = -s * expit(-s * (F @ x))
        return coef[:, None] * F + self.regularizer_grad(x)

    def batch_grad(self, x, F, y):
        x = self._check(x)
        s = 2.0 * y - 1.0
        coef = -s * expit(-s * (F @ x))
        return F.T @ coef / len(y) + self.regularizer_grad(x)

    def loss_and_grad(self, x, data):
        # one pass over the features for both quantities
        x = self._check(x)
        s = 2.0 * data.labels - 1.0
        margins = s * (data.features @ x)
        loss = float(np.mean(np.logaddexp(0.0, -margins))) + self.regularizer(x)
        coef = -s * expit(-margins)
        return loss, data.features.T @ coef / data.m + self.regularizer_grad(x)

    def predict(self, x, F):
        return (F @ x > 0).astype(np.int64)

    def smoothness(self, data: Dataset) -> float:
        """Smoothness estimate ``||F||_2^2 / (4 m) + 2 lam``."""
        top = np.linalg.norm(data.features, 2) ** 2 / data.m
        return float(top / 4.0 + 2.0 * self.lam)


def logreg_nonconvex(dim: int, lam: float = 0.2) -> LogRegNonconvex:
    return LogRegNonconvex(dim, lam)


class OneHiddenNN(Problem):
    """Sigmoid hidden layer, softmax output, cross-entropy loss.

    Parameters are packed as ``vec(W1, c1, W2, c2)`` with ``W1`` of shape
    ``(hidden, inputs)`` and ``W2`` of shape ``(classes, hidden)``, row-major.
    """

    def __init__(self, inputs: int = 784, hidden: int = 64, classes: int = 10):
        if hidden < 1 or inputs < 1 or classes < 2:
            raise ValueError("need inputs >= 1, hidden >= 1, classes >= 2")
        self.inputs, self.hidden, self.classes = inputs, hidden, classes
        self._sizes = (hidden * inputs, hidden, classes * hidden, classes)
        self.dim = sum(self._sizes)

    def unpack(self, x):
        x = self._check(x)
        a, b, c, _ = np.cumsum(self._sizes)
        W1 = x[:a].reshape(self.hidden, self.inputs)
        c1 = x[a:b]
        W2 = x[b:c].reshape(self.classes, self.hidden)
        c2 = x[c:]
        return W1, c1, W2, c2

    @staticmethod
    def pack(W1, c1, W2, c2) -> np.ndarray:
        return np.concatenate([W1.ravel(), c1, W2.ravel(), c2])

    def init_params(self, seed: int) -> np.ndarray:
        rng = stream(seed, Purpose.INIT)
        W1 = rng.standard_normal((self.hidden, self.inputs)) / np.sqrt(self.inputs)
        W2 = rng.standard_normal((self.classes, self.hidden)) / np.sqrt(self.hidden)
        return self.pack(W1, np.zeros(self.hidden), W2, np.zeros(self.classes))

    def _forward(self, x, F):
        W1, c1, W2, c2 = self.unpack(x)
        H = expit(F @ W1.T + c1)
        Z = H @ W2.T + c2
        return W2, H, Z

    def sample_losses(self, x, F, y):
        _, _, Z = self._forward(x, F)
        return logsumexp(Z, axis=1) - Z[np.arange(len(y)), y]

    def _backward(self, x, F, y):
        W2, H, Z = self._forward(x, F)
        P = np.exp(Z - logsumexp(Z, axis=1, keepdims=True))
        P[np.arange(len(y)), y] -= 1.0
        dA = (P @ W2) * H * (1.0 - H)
        return H, P, dA

    def per_sample_grads(self, x, F, y):
        H, dZ, dA = self._backward(x, F, y)
        b = len(y)
        dW1 = (dA[:, :, None] * F[:, None, :]).reshape(b, -1)
        dW2 = (dZ[:, :, None] * H[:, None, :]).reshape(b, -1)
        return np.concatenate([dW1, dA, dW2, dZ], axis=1)

    def batch_grad(self, x, F, y):
        H, dZ, dA = self._backward(x, F, y)
        b = len(y)
        return self.pack(dA.T @ F / b, dA.mean(axis=0), dZ.T @ H / b, dZ.mean(axis=0))

    def predict(self, x, F):
        _, _, Z = self._forward(x, F)
        return np.argmax(Z, axis=1)


def one_hidden_nn(hidden: int = 64, classes: int = 10, inputs: int = 784) -> OneHiddenNN:
    return OneHiddenNN(inputs, hidden, classes)


def synthetic_problem(
    d: int, m_total: int, seed: int, lam: float = 0.2, noiseless: bool = False, planted_norm: float = 5.0
) -> tuple[LogRegNonconvex, Dataset]:
    """Gaussian features with labels from a planted logistic model.

    With ``noiseless=True`` labels are the sign of the planted margin. The
    planted vector is kept on the returned problem as ``planted``.
    """
    if d < 1 or m_total < 1:
        raise ValueError("need d >= 1 and m_total >= 1")
    rng = stream(seed, Purpose.DATA)
    planted = rng.standard_normal(d)
    planted *= planted_norm / np.linalg.norm(planted)
    F = rng.standard_normal((m_total, d))
    margins = F @ planted
    if noiseless:
        labels = (margins > 0).astype(np.int64)
    else:
        labels = (rng.random(m_total) < expit(margins)).astype(np.int64)
    problem = LogRegNonconvex(d, lam)
    problem.planted = planted
    return problem, Dataset(F, labels, name=f"synthetic-d{d}-m{m_total}-s{seed}")


def partition(ds: Dataset, n: int, seed: int) -> list[Dataset]:
    """Shuffle rows and split into n equal blocks; leftover rows are dropped."""
    if n < 1:
        raise ValueError(f"need at least one agent, got {n}")
    if ds.m < n:
        raise ValueError(f"cannot split {ds.m} rows over {n} agents")
    perm = stream(seed, Purpose.PARTITION).permutation(ds.m)
    size = ds.m // n
    return [ds.subset(perm[i * size : (i + 1) * size], f"{ds.name}[{i}]") for i in range(n)]


def concat(parts: list[Dataset], name: str = "union") -> Dataset:
    return Dataset(
        np.vstack([p.features for p in parts]),
        np.concatenate([p.labels for p in parts]),
        name,
        max(p.n_classes for p in parts),
    )


# --- file formats ----------------------------------------------------------


def parse_libsvm(path: str | Path, n_features: int | None = None) -> Dataset:
    """Read a LIBSVM text file (1-based ``idx:val`` pairs) into a dense dataset.

    Labels {-1, +1} are mapped to {0, 1}; other integer labels are kept.
    """
    path = Path(path)
    rows, labels = [], []
    max_idx = 0
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                label = float(parts[0])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: bad label {parts[0]!r}") from None
            if label != int(label):
                raise ParseError(f"{path}:{lineno}: non-integer label {parts[0]!r}")
            entries = {}
            for tok in parts[1:]:
                idx, sep, val = tok.partition(":")
                try:
                    i, v = int(idx), float(val)
                except ValueError:
                    raise ParseError(f"{path}:{lineno}: bad feature {tok!r}") from None
                if not sep:
                    raise ParseError(f"{path}:{lineno}: bad feature {tok!r}")
                if i < 1:
                    raise ParseError(f"{path}:{lineno}: feature index {i} (indices are 1-based)")
                entries[i] = v
                max_idx = max(max_idx, i)
            rows.append(entries)
            labels.append(int(label))
    if not rows:
        raise ParseError(f"{path}: no data")
    d = max_idx if n_features is None else n_features
    if max_idx > d:
        raise ParseError(f"{path}: feature index {max_idx} exceeds n_features={d}")
    F = np.zeros((len(rows), d))
    for r, entries in enumerate(rows):
        for i, v in entries.items():
            F[r, i - 1] = v
    y = np.array(labels, dtype=np.int64)
    if set(np.unique(y)) <= {-1, 1}:
        y = (y + 1) // 2
        n_classes = 2
    else:
        if y.min() < 0:
            raise ParseError(f"{path}: negative multiclass label")
        n_classes = max(2, int(y.max()) + 1)
    return Dataset(F, y, path.stem, n_classes)


def write_libsvm(ds: Dataset, path: str | Path) -> None:
    with Path(path).open("w") as fh:
        for row, label in zip(ds.features, ds.labels):
            lab = ("+1" if label == 1 else "-1") if ds.n_classes == 2 else str(int(label))
            feats = " ".join(f"{i + 1}:{float(row[i])!r}" for i in np.flatnonzero(row))
            fh.write(f"{lab} {feats}".rstrip() + "\n")


def _read_idx(path: Path, magic: int, ndim: int) -> np.ndarray:
    raw = path.read_bytes()
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise ParseError(f"{path}: truncated header")
    (got,) = struct.unpack(">I", raw[:4])
    if got != magic:
        raise ParseError(f"{path}: magic 0x{got:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims))
    body = raw[header:]
    if len(body) < count:
        raise ParseError(f"{path}: truncated data ({len(body)} of {count} bytes)")
    return np.frombuffer(body, dtype=np.uint8, count=count).reshape(dims)


def parse_idx(images_path: str | Path, labels_path: str | Path, n_classes: int = 10) -> Dataset:
    """Read an IDX image/label pair; pixels are scaled to [0, 1] and flattened."""
    images = _read_idx(Path(images_path), IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(Path(labels_path), IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise ParseError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    F = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(F, labels.astype(np.int64), Path(images_path).stem, n_classes)


def write_idx(ds: Dataset, images_path: str | Path, labels_path: str | Path, rows: int = 28, cols: int = 28) -> None:
    if ds.d != rows * cols:
        raise ValueError(f"feature dimension {ds.d} != {rows}x{cols}")
    pixels = np.rint(ds.features * 255.0)
    if pixels.min() < 0 or pixels.max() > 255:
        raise ValueError("features outside [0, 1]")
    m = ds.m
    Path(images_path).write_bytes(
        struct.pack(">IIII", IDX_IMAGES_MAGIC, m, rows, cols) + pixels.astype(np.uint8).tobytes()
    )
    Path(labels_path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, m) + ds.labels.astype(np.uint8).tobytes())
