"""Sparsifying rho-compression operators applied column-wise to agent matrices.

None of the operators rescale their output, so they are biased; error feedback
in the engine is what keeps the compression error from accumulating.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

KINDS = ("top_k", "random_k_bernoulli", "random_k_subset", "identity")
VALUE_BITS = 64


@dataclass(frozen=True)
class CompressorSpec:
    kind: str
    k: int
    d: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown compressor {self.kind!r}; expected one of {KINDS}")
        if self.d < 1:
            raise ValueError(f"dimension must be positive, got {self.d}")
        if self.kind == "identity":
            object.__setattr__(self, "k", self.d)
        elif not 1 <= self.k <= self.d:
            raise ValueError(f"k must be in [1, {self.d}], got {self.k}")

    @property
    def rho(self) -> float:
        return 1.0 if self.kind == "identity" else self.k / self.d

    @property
    def message_bits(self) -> int:
        """Bits for one agent's compressed message."""
        if self.kind == "identity":
            return self.d * VALUE_BITS
        return self.k * (VALUE_BITS + math.ceil(math.log2(self.d)))

    def to_string(self) -> str:
        return "identity" if self.kind == "identity" else f"{self.kind}:{self.k}"


def parse_compressor(text: str, d: int) -> CompressorSpec:
    """Parse ``"top_k:5"``, ``"random_k:162"``, ``"top_k:5%"`` or ``"identity"``.

    Plain ``random_k`` selects the fixed-size subset variant. A percentage is
    resolved to ``max(1, floor(d * pct / 100))``.
    """
    text = text.strip()
    if text == "identity":
        return CompressorSpec("identity", d, d)
    kind, sep, arg = text.partition(":")
    if not sep or not arg:
        raise ValueError(f"compressor {text!r} needs a count, e.g. 'top_k:5'")
    kind = kind.strip()
    if kind == "random_k":
        kind = "random_k_subset"
    arg = arg.strip()
    if arg.endswith("%"):
        k = max(1, math.floor(d * float(arg[:-1]) / 100.0))
    else:
        k = int(arg)
    return CompressorSpec(kind, k, d)


def _check_k(k: int, d: int) -> None:
    if not 1 <= k <= d:
        raise ValueError(f"k must be in [1, {d}], got {k}")


def top_k(x: np.ndarray, k: int) -> np.ndarray:
    """Keep the k largest-magnitude entries; ties go to the lower index."""
    x = np.asarray(x, dtype=np.float64)
    _check_k(k, x.size)
    keep = np.argsort(-np.abs(x), kind="stable")[:k]
    out = np.zeros_like(x)
    out[keep] = x[keep]
    return out


def random_k(x: np.ndarray, k: int, rng: np.random.Generator, variant: str = "bernoulli") -> np.ndarray:
    """Random sparsification without rescaling.

    ``bernoulli`` keeps each entry independently with probability k/d;
    ``subset`` keeps a uniformly random set of exactly k entries.
    """
    x = np.asarray(x, dtype=np.float64)
    d = x.size
    _check_k(k, d)
    if variant == "bernoulli":
        mask = rng.random(d) < k / d
        return np.where(mask, x, 0.0)
    if variant == "subset":
        out = np.zeros_like(x)
        keep = rng.choice(d, size=k, replace=False)
        out[keep] = x[keep]
        return out
    raise ValueError(f"unknown random_k variant {variant!r}")


def compress(x: np.ndarray, spec: CompressorSpec, rng: np.random.Generator | None) -> np.ndarray:
    if spec.kind == "identity":
        return np.array(x, dtype=np.float64, copy=True)
    if spec.kind == "top_k":
        return top_k(x, spec.k)
    variant = "bernoulli" if spec.kind == "random_k_bernoulli" else "subset"
    return random_k(x, spec.k, rng, variant)


def compress_matrix(
    M: np.ndarray, spec: CompressorSpec, rngs: Sequence[np.random.Generator] | None
) -> tuple[np.ndarray, int]:
    """Compress each column with its agent's stream.

    Returns the compressed matrix and the bits sent (one message per column).
    """
    M = np.asarray(M, dtype=np.float64)
    d, n = M.shape
    if d != spec.d:
        raise ValueError(f"compressor built for d={spec.d}, matrix has d={d}")
    if rngs is None:
        rngs = [None] * n
    out = np.empty_like(M)
    for i in range(n):
        out[:, i] = compress(M[:, i], spec, rngs[i])
    return out, n * spec.message_bits
