"""The PORTER iteration: clipped (and optionally privatized) local gradients,
gradient tracking and error-feedback compression over a mixing matrix.

Agent quantities are ``d x n`` arrays, one column per agent.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from porter.clip import ClipMode, gaussian_perturb
from porter.compress import CompressorSpec, compress_matrix
from porter.metrics import MetricsRecord, measure
from porter.problems import Dataset, Problem, concat
from porter.rng import Purpose, agent_streams, stream
from porter.topology import MixingMatrix

INVARIANT_TOL = 1e-9


class NumericalError(RuntimeError):
    def __init__(self, t: int, what: str):
        super().__init__(f"non-finite values in {what} at iteration {t}")
        self.t = t


class InvariantViolation(RuntimeError):
    pass


@dataclass
class PorterState:
    X: np.ndarray
    V: np.ndarray
    Qx: np.ndarray
    Qv: np.ndarray
    Gp_prev: np.ndarray
    t: int = 0

    @property
    def d(self) -> int:
        return self.X.shape[0]

    @property
    def n(self) -> int:
        return self.X.shape[1]

    def copy(self) -> "PorterState":
        return PorterState(self.X.copy(), self.V.copy(), self.Qx.copy(), self.Qv.copy(), self.Gp_prev.copy(), self.t)


@dataclass(frozen=True)
class HyperParams:
    eta: float
    gamma: float
    b: int
    T: int
    tau: float | None = None
    sigma_p: float = 0.0
    schedule: str = "explicit"
    violations: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError(f"eta must be > 0, got {self.eta}")
        if not 0 < self.gamma <= 1:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.b < 1:
            raise ValueError(f"batch size must be >= 1, got {self.b}")
        if self.T < 0:
            raise ValueError(f"T must be >= 0, got {self.T}")
        if self.sigma_p < 0:
            raise ValueError(f"sigma_p must be >= 0, got {self.sigma_p}")
        if self.tau is not None and not self.tau > 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")


def init_state(x0: np.ndarray, n: int) -> PorterState:
    x0 = np.asarray(x0, dtype=np.float64)
    X = np.tile(x0[:, None], (1, n))
    zeros = np.zeros_like(X)
    return PorterState(X=X, V=zeros.copy(), Qx=X.copy(), Qv=zeros.copy(), Gp_prev=zeros.copy(), t=0)


def _map_agents(fn: Callable[[int], np.ndarray], n: int, executor: ThreadPoolExecutor | None) -> list[np.ndarray]:
    if executor is None:
        return [fn(i) for i in range(n)]
    return list(executor.map(fn, range(n)))


def _draw(data: Dataset, b: int, rng: np.random.Generator) -> np.ndarray:
    if b > data.m:
        raise ValueError(f"batch size {b} exceeds local sample size {data.m}")
    return rng.choice(data.m, size=b, replace=False)


def local_gradients_dp(
    state: PorterState,
    problem: Problem,
    data: Sequence[Dataset],
    clip: ClipMode,
    sigma_p: float,
    b: int,
    batch_rngs: Sequence[np.random.Generator],
    noise_rngs: Sequence[np.random.Generator],
    executor: ThreadPoolExecutor | None = None,
) -> np.ndarray:
    """Option I: clip every per-sample gradient, average, add Gaussian noise."""
    if clip.kind == "none":
        raise ValueError("the private option needs a clipping operator to bound sensitivity")

    def agent(i):
        idx = _draw(data[i], b, batch_rngs[i])
        g = problem.per_sample_grads(state.X[:, i], data[i].features[idx], data[i].labels[idx])
        scales = clip.scales(np.linalg.norm(g, axis=1))
        return (scales[:, None] * g).mean(axis=0)

    G_tau = np.column_stack(_map_agents(agent, state.n, executor))
    return gaussian_perturb(G_tau, sigma_p, noise_rngs)


def local_gradients_gc(
    state: PorterState,
    problem: Problem,
    data: Sequence[Dataset],
    clip: ClipMode,
    b: int,
    batch_rngs: Sequence[np.random.Generator],
    executor: ThreadPoolExecutor | None = None,
) -> np.ndarray:
    """Option II: average a mini-batch of gradients, then clip the average."""

    def agent(i):
        idx = _draw(data[i], b, batch_rngs[i])
        g = problem.batch_grad(state.X[:, i], data[i].features[idx], data[i].labels[idx])
        return clip(g)

    return np.column_stack(_map_agents(agent, state.n, executor))


def _ef_update(Q: np.ndarray, M: np.ndarray, spec: CompressorSpec, rngs) -> tuple[np.ndarray, int]:
    if spec.kind == "identity":
        # the full vector is sent, so receivers hold M exactly
        return M.copy(), M.shape[1] * spec.message_bits
    C, bits = compress_matrix(M - Q, spec, rngs)
    return Q + C, bits


def step(
    state: PorterState,
    G_p: np.ndarray,
    mix: MixingMatrix,
    hp: HyperParams,
    spec: CompressorSpec,
    v_rngs: Sequence[np.random.Generator] | None = None,
    x_rngs: Sequence[np.random.Generator] | None = None,
) -> tuple[PorterState, int]:
    """One communication round. Returns the new state and the bits sent."""
    d, n = state.X.shape
    if G_p.shape != (d, n) or mix.W.shape != (n, n):
        raise ValueError(f"shape mismatch: state {d}x{n}, gradients {G_p.shape}, W {mix.W.shape}")
    W_minus_I = mix.W - np.eye(n)
    Qv, bits_v = _ef_update(state.Qv, state.V, spec, v_rngs)
    # dropping the old gradient first keeps n = 1 exactly equal to SGD in floating point
    V = state.V - state.Gp_prev + hp.gamma * (Qv @ W_minus_I) + G_p
    Qx, bits_x = _ef_update(state.Qx, state.X, spec, x_rngs)
    X = state.X + hp.gamma * (Qx @ W_minus_I) - hp.eta * V
    return PorterState(X=X, V=V, Qx=Qx, Qv=Qv, Gp_prev=G_p.copy(), t=state.t + 1), bits_v + bits_x


# --- hyperparameter schedules ---------------------------------------------


def proof_constraints(gamma: float, eta: float, rho: float, alpha: float, L: float) -> list[str]:
    """Violated step-size conditions from the convergence analysis.

    The regularized mixing rate is replaced by its upper bound
    ``1 + gamma (alpha - 1)``, which makes the eta check sufficient.
    """
    out = []
    if rho < 1 and gamma**2 > rho**2 / (96 * (1 - rho)):
        out.append(f"gamma^2 <= rho^2/(96(1-rho)) violated: {gamma**2:.4g} > {rho**2 / (96 * (1 - rho)):.4g}")
    gap = gamma * (1 - alpha)
    if eta * L > gap ** (4 / 3) / 8:
        out.append(f"eta L <= (1-alpha_hat)^(4/3)/8 violated: {eta * L:.4g} > {gap ** (4 / 3) / 8:.4g}")
    return out


def theoretical_hyperparams(
    which: str,
    rho: float,
    alpha: float,
    L: float,
    *,
    phi_m: float | None = None,
    T: int | None = None,
    tau: float | None = None,
    d: int | None = None,
    sigma_g: float | None = None,
    nu: float | None = None,
    tau_scale: float = 1.0,
) -> HyperParams:
    """Step sizes, threshold, batch and horizon prescribed by the convergence theorems.

    ``thm2``: bounded gradients, needs ``phi_m``, ``tau``, ``d``.
    ``thm3``: private with clipping, needs ``phi_m``, ``sigma_g``, ``d``.
    ``thm4``: clipped SGD without noise, needs ``T``, ``sigma_g``, ``nu``;
    the threshold constant is ``tau_scale``.
    """
    if not 0 < rho <= 1:
        raise ValueError(f"rho must be in (0, 1], got {rho}")
    if not 0 <= alpha < 1:
        raise ValueError(f"alpha must be in [0, 1), got {alpha}")
    if not L > 0:
        raise ValueError(f"L must be > 0, got {L}")
    gamma = (1 - alpha) * rho / 100

    def need(**kw):
        missing = [k for k, v in kw.items() if v is None]
        if missing:
            raise ValueError(f"{which} schedule needs {', '.join(missing)}")

    if which in ("thm2", "thm3"):
        need(phi_m=phi_m, d=d)
        T_ = math.ceil(phi_m**-2 - 1e-9)
        if which == "thm2":
            need(tau=tau)
            eta = gamma ** (4 / 3) * (1 - alpha) ** (4 / 3) * phi_m / (32 * L)
            tau_ = tau
        else:
            need(sigma_g=sigma_g)
            eta = gamma ** (8 / 3) * (1 - alpha) ** (8 / 3) / (8288 * L)
            tau_ = max(365 * rho ** (-4 / 3) * (1 - alpha) ** (-8 / 3) * phi_m**0.5, 24 * sigma_g)
        sigma_p = math.sqrt(T_ * tau_**2 * phi_m**2 / d)
        b = 1
    elif which == "thm4":
        need(T=T, sigma_g=sigma_g, nu=nu)
        T_ = T
        eta = math.sqrt(8 / 2072) / L
        tau_ = tau_scale * rho ** (-2 / 3) * (1 - alpha) ** (-4 / 3) * T ** (-0.5)
        b = max(1, math.ceil((24 * sigma_g / nu) ** 2 - 1e-9))
        sigma_p = 0.0
    else:
        raise ValueError(f"unknown schedule {which!r}; expected thm2, thm3 or thm4")
    violations = tuple(proof_constraints(gamma, eta, rho, alpha, L))
    return HyperParams(eta=eta, gamma=gamma, b=b, T=T_, tau=tau_, sigma_p=sigma_p, schedule=which, violations=violations)


# --- driver -----------------------------------------------------------------


@dataclass
class RunResult:
    records: list[MetricsRecord]
    x_out: np.ndarray
    x_bar: np.ndarray
    state: PorterState
    hyperparams: HyperParams
    bits: int
    max_tracking_gap: float = 0.0
    max_mean_gap: float = 0.0
    wall_time: float = 0.0
    metadata: dict = field(default_factory=dict)


def run_porter(
    problem: Problem,
    data: Sequence[Dataset],
    mix: MixingMatrix,
    hp: HyperParams,
    spec: CompressorSpec,
    clip: ClipMode,
    option: str,
    x0: np.ndarray,
    seed: int,
    stride: int = 1,
    test_data: Dataset | None = None,
    check_invariants: bool = True,
    workers: int = 1,
    on_record: Callable[[MetricsRecord], None] | None = None,
) -> RunResult:
    """Run ``hp.T`` iterations and record metrics every ``stride`` iterations (and at T).

    ``option`` is ``"dp"`` (clip per sample, add noise) or ``"gc"`` (clip the
    mini-batch average). Randomness comes only from ``seed``.
    """
    if option not in ("dp", "gc"):
        raise ValueError(f"option must be 'dp' or 'gc', got {option!r}")
    if option == "gc" and hp.sigma_p > 0:
        raise ValueError("the clipping-only option does not add noise; sigma_p must be 0")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    n = mix.n
    if len(data) != n:
        raise ValueError(f"{len(data)} local datasets for {n} agents")
    started = time.perf_counter()
    full = concat(list(data))
    state = init_state(x0, n)
    records = [measure(state, problem, full, test_data, bits=0)]
    if on_record:
        on_record(records[-1])
    x_out = np.asarray(x0, dtype=np.float64).copy()
    seen = 0
    bits = 0
    max_track = max_mean = 0.0
    executor = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        for t in range(1, hp.T + 1):
            batch_rngs = agent_streams(seed, Purpose.BATCH, n, t)
            if option == "dp":
                G_p = local_gradients_dp(
                    state, problem, data, clip, hp.sigma_p, hp.b, batch_rngs, agent_streams(seed, Purpose.NOISE, n, t), executor
                )
            else:
                G_p = local_gradients_gc(state, problem, data, clip, hp.b, batch_rngs, executor)
            if not np.all(np.isfinite(G_p)):
                raise NumericalError(t, "gradients")
            x_bar_prev = state.X.mean(axis=1)
            state, sent = step(
                state,
                G_p,
                mix,
                hp,
                spec,
                agent_streams(seed, Purpose.COMPRESS_V, n, t),
                agent_streams(seed, Purpose.COMPRESS_X, n, t),
            )
            bits += sent
            if not (np.all(np.isfinite(state.X)) and np.all(np.isfinite(state.V))):
                raise NumericalError(t, "iterates")
            if check_invariants:
                track, mean_gap = invariant_gaps(state, G_p, x_bar_prev, hp.eta)
                max_track, max_mean = max(max_track, track), max(max_mean, mean_gap)
                if track > INVARIANT_TOL or mean_gap > INVARIANT_TOL:
                    raise InvariantViolation(
                        f"iteration {t}: tracking gap {track:.3e}, mean-recursion gap {mean_gap:.3e}"
                    )
            # reservoir sample one of the n*t iterates seen so far
            u = stream(seed, Purpose.OUTPUT, 0, t).random(n)
            for i in range(n):
                seen += 1
                if u[i] * seen < 1.0:
                    x_out = state.X[:, i].copy()
            if t % stride == 0 or t == hp.T:
                records.append(measure(state, problem, full, test_data, bits=bits))
                if on_record:
                    on_record(records[-1])
    finally:
        if executor is not None:
            executor.shutdown()
    return RunResult(
        records=records,
        x_out=x_out,
        x_bar=state.X.mean(axis=1),
        state=state,
        hyperparams=hp,
        bits=bits,
        max_tracking_gap=max_track,
        max_mean_gap=max_mean,
        wall_time=time.perf_counter() - started,
    )


def invariant_gaps(state: PorterState, G_p: np.ndarray, x_bar_prev: np.ndarray, eta: float) -> tuple[float, float]:
    """Scaled deviations from ``mean(V) = mean(G_p)`` and ``x_bar = x_bar_prev - eta mean(V)``."""
    v_bar = state.V.mean(axis=1)
    g_bar = G_p.mean(axis=1)
    track = np.max(np.abs(v_bar - g_bar)) / max(1.0, np.linalg.norm(G_p))
    expected = x_bar_prev - eta * v_bar
    scale = max(1.0, np.linalg.norm(x_bar_prev), eta * np.linalg.norm(v_bar))
    mean_gap = np.max(np.abs(state.X.mean(axis=1) - expected)) / scale
    return float(track), float(mean_gap)


def with_T(hp: HyperParams, T: int) -> HyperParams:
    return replace(hp, T=T)
