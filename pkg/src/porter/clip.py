"""Gradient clipping operators and Gaussian perturbation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

CLIP_KINDS = ("smooth", "piecewise", "none")


@dataclass(frozen=True)
class ClipMode:
    kind: str = "smooth"
    tau: float | None = 1.0

    def __post_init__(self):
        if self.kind not in CLIP_KINDS:
            raise ValueError(f"unknown clip kind {self.kind!r}; expected one of {CLIP_KINDS}")
        if self.kind == "none":
            object.__setattr__(self, "tau", None)
        elif self.tau is None or not self.tau > 0:
            raise ValueError(f"clip threshold tau must be > 0, got {self.tau}")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "smooth":
            return smooth_clip(x, self.tau)
        if self.kind == "piecewise":
            return piecewise_clip(x, self.tau)
        return np.asarray(x, dtype=np.float64)

    def scales(self, norms: np.ndarray) -> np.ndarray:
        """Per-row scale factors for vectors with the given norms."""
        norms = np.asarray(norms, dtype=np.float64)
        if self.kind == "smooth":
            return self.tau / (self.tau + norms)
        if self.kind == "piecewise":
            with np.errstate(divide="ignore"):
                return np.where(norms <= self.tau, 1.0, self.tau / norms)
        return np.ones_like(norms)


def _check_tau(tau: float) -> None:
    if not tau > 0:
        raise ValueError(f"clip threshold tau must be > 0, got {tau}")


def smooth_clip(x: np.ndarray, tau: float) -> np.ndarray:
    """Scale x by ``tau / (tau + ||x||)``; the output norm is always below tau."""
    _check_tau(tau)
    x = np.asarray(x, dtype=np.float64)
    return (tau / (tau + np.linalg.norm(x))) * x


def piecewise_clip(x: np.ndarray, tau: float) -> np.ndarray:
    """Project x onto the ball of radius tau (identity inside, boundary included)."""
    _check_tau(tau)
    x = np.asarray(x, dtype=np.float64)
    norm = np.linalg.norm(x)
    if norm <= tau:
        return x.copy()
    return (tau / norm) * x


def gaussian_perturb(M: np.ndarray, sigma_p: float, rngs: Sequence[np.random.Generator]) -> np.ndarray:
    """Add i.i.d. N(0, sigma_p^2) noise to every entry, column i drawn from ``rngs[i]``."""
    if sigma_p < 0:
        raise ValueError(f"sigma_p must be >= 0, got {sigma_p}")
    M = np.asarray(M, dtype=np.float64)
    if sigma_p == 0:
        return M.copy()
    d, n = M.shape
    out = M.copy()
    for i in range(n):
        out[:, i] += sigma_p * rngs[i].standard_normal(d)
    return out
