"""Local-DP noise calibration and the moments-accountant feasibility check.

All logarithms are natural.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

LAMBDA_MAX = 10**6
REL_TOL = 1e-12


def _check_domain(epsilon: float, delta: float, **positive: float) -> None:
    if not epsilon > 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    if not 0 < delta < 1:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    for name, value in positive.items():
        if not value > 0:
            raise ValueError(f"{name} must be > 0, got {value}")


def compute_sigma_p(T: int, tau: float, m: int, epsilon: float, delta: float) -> float:
    """Per-entry noise std making T noisy clipped steps (epsilon, delta)-LDP."""
    _check_domain(epsilon, delta, T=T, tau=tau, m=m)
    return math.sqrt(T * tau**2 * math.log(1.0 / delta) / (m**2 * epsilon**2))


def compute_phi_m(d: int, m: int, epsilon: float, delta: float) -> float:
    """Baseline utility of a centralized (epsilon, delta)-DP method with m samples."""
    _check_domain(epsilon, delta, d=d, m=m)
    phi = math.sqrt(d * math.log(1.0 / delta)) / (m * epsilon)
    if phi >= 1.0:
        warnings.warn(f"phi_m = {phi:.4g} >= 1: too few samples for a meaningful privacy guarantee", stacklevel=2)
    return phi


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    delta: float
    m: int
    T: int
    tau: float
    d: int
    sigma_p: float = field(init=False)
    phi_m: float = field(init=False)

    def __post_init__(self):
        _check_domain(self.epsilon, self.delta, m=self.m, T=self.T, tau=self.tau, d=self.d)
        object.__setattr__(self, "sigma_p", compute_sigma_p(self.T, self.tau, self.m, self.epsilon, self.delta))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            object.__setattr__(self, "phi_m", compute_phi_m(self.d, self.m, self.epsilon, self.delta))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "PrivacyBudget":
        budget = cls(
            epsilon=float(data["epsilon"]),
            delta=float(data["delta"]),
            m=int(data["m"]),
            T=int(data["T"]),
            tau=float(data["tau"]),
            d=int(data["d"]),
        )
        for name in ("sigma_p", "phi_m"):
            if name in data:
                stored, derived = float(data[name]), getattr(budget, name)
                if abs(stored - derived) > REL_TOL * max(abs(derived), 1e-300):
                    raise ValueError(f"stored {name}={stored!r} disagrees with recomputed {derived!r}")
        return budget


@dataclass
class FeasibilityReport:
    """Advisory check of the conditions behind the LDP guarantee.

    ``lambda_certificate`` is the smallest integer moment order satisfying all
    three accountant inequalities, or ``None`` when no certificate was found
    in ``[1, 10**6]`` (which does not prove infeasibility).
    """

    epsilon_bound: float
    epsilon_ok: bool
    q: float
    q_bound: float
    q_ok: bool
    sigma_p: float
    lambda_certificate: int | None
    notes: list[str] = field(default_factory=list)

    def lines(self) -> list[str]:
        cert = "none found" if self.lambda_certificate is None else str(self.lambda_certificate)
        out = [
            f"epsilon <= T/m^2 ({self.epsilon_bound:.6g}): {'pass' if self.epsilon_ok else 'FAIL'}",
            f"q = 1/m <= tau/(16 sigma_p) ({self.q:.6g} <= {self.q_bound:.6g}): {'pass' if self.q_ok else 'FAIL'}",
            f"sigma_p used: {self.sigma_p:.17g}",
            f"lambda certificate: {cert}",
        ]
        out += [f"note: {n}" for n in self.notes]
        return out

    def to_dict(self) -> dict:
        return asdict(self)


def accountant_conditions(lam: np.ndarray, T: int, q: float, tau: float, sigma_p: float, epsilon: float, delta: float):
    """Boolean arrays for the three moment-order conditions at each lambda."""
    lam = np.asarray(lam, dtype=np.float64)
    c1 = (T * q * tau * lam / sigma_p) ** 2 <= lam * epsilon / 2
    c2 = np.exp(-lam * epsilon / 2) <= delta
    ratio = tau / (q * sigma_p)
    upper = (sigma_p**2 / tau**2) * math.log(ratio) if ratio > 0 else -math.inf
    c3 = lam <= upper
    return c1, c2, c3


def check_privacy_feasibility(
    budget: PrivacyBudget, sigma_p: float | None = None, b: int = 1, sampling: str = "uniform"
) -> FeasibilityReport:
    """Evaluate the accountant conditions for ``budget``.

    ``sigma_p`` defaults to the budget's calibrated value; pass a larger one to
    check a more conservative noise level. The report never raises.
    """
    s = budget.sigma_p if sigma_p is None else float(sigma_p)
    T, m, tau, eps, delta = budget.T, budget.m, budget.tau, budget.epsilon, budget.delta
    q = 1.0 / m
    eps_bound = T / m**2
    q_bound = tau / (16 * s) if s > 0 else math.inf
    cert = None
    if s > 0:
        lam = np.arange(1, LAMBDA_MAX + 1)
        c1, c2, c3 = accountant_conditions(lam, T, q, tau, s, eps, delta)
        hits = np.flatnonzero(c1 & c2 & c3)
        if hits.size:
            cert = int(lam[hits[0]])
    notes = []
    if cert is None and sigma_p is None:
        notes.append(
            "at the calibrated sigma_p the first two conditions require T <= 1/4, "
            "so no certificate exists for T >= 1; the guarantee holds up to constants"
        )
    if sampling != "poisson":
        notes.append("mini-batches are drawn uniformly without replacement; the accountant assumes Poisson sampling with q = 1/m")
    if b > 1:
        notes.append(f"batch size b={b} > 1: the calibration assumes b = 1")
    return FeasibilityReport(
        epsilon_bound=eps_bound,
        epsilon_ok=eps <= eps_bound,
        q=q,
        q_bound=q_bound,
        q_ok=q <= q_bound,
        sigma_p=s,
        lambda_certificate=cert,
        notes=notes,
    )
