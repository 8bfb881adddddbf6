"""Turn a RunConfig into a finished run on disk."""

from __future__ import annotations

import json
import logging
import os
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from porter.clip import ClipMode
from porter.compress import CompressorSpec, parse_compressor
from porter.config import ConfigError, RunConfig
from porter.engine import HyperParams, RunResult, run_porter, theoretical_hyperparams
from porter.metrics import summarize, write_csv
from porter.privacy import FeasibilityReport, PrivacyBudget, check_privacy_feasibility
from porter.problems import (
    Dataset,
    LogRegNonconvex,
    OneHiddenNN,
    Problem,
    concat,
    parse_idx,
    parse_libsvm,
    partition,
    synthetic_problem,
)
from porter.rng import Purpose, stream
from porter.topology import Graph, MixingMatrix, build_er_connected, build_er_graph, build_named_graph, metropolis_weights

log = logging.getLogger(__name__)


@dataclass
class Setup:
    problem: Problem
    data: list[Dataset]
    test: Dataset | None
    graph: Graph
    mix: MixingMatrix
    compressor: CompressorSpec
    clip: ClipMode
    hp: HyperParams
    x0: np.ndarray
    L: float
    budget: PrivacyBudget | None
    feasibility: FeasibilityReport | None
    notes: list[str]


def load_problem(config: RunConfig) -> tuple[Problem, Dataset, Dataset | None]:
    pc, seed = config.problem, config.run.seed
    if pc.kind == "synthetic":
        if pc.model != "logreg":
            raise ConfigError("synthetic data supports model=logreg only")
        problem, ds = synthetic_problem(pc.d, pc.samples + pc.test_samples, seed, lam=pc.lam, noiseless=pc.noiseless)
        test = None
        if pc.test_samples:
            test = ds.subset(np.arange(pc.samples, ds.m), "synthetic-test")
            ds = ds.subset(np.arange(pc.samples))
        return problem, ds, test
    if pc.kind == "libsvm":
        if not pc.train:
            raise ConfigError("problem.kind=libsvm requires problem.train")
        train = parse_libsvm(pc.train)
        test = parse_libsvm(pc.test, n_features=train.d) if pc.test else None
    elif pc.kind == "idx":
        if not (pc.train_images and pc.train_labels):
            raise ConfigError("problem.kind=idx requires problem.train_images and problem.train_labels")
        train = parse_idx(pc.train_images, pc.train_labels)
        test = parse_idx(pc.test_images, pc.test_labels) if pc.test_images and pc.test_labels else None
    else:
        raise ConfigError(f"unknown problem.kind {pc.kind!r}")
    if pc.model == "logreg":
        if train.n_classes != 2:
            raise ConfigError("model=logreg needs binary labels")
        return LogRegNonconvex(train.d, pc.lam), train, test
    if pc.model == "nn":
        return OneHiddenNN(train.d, pc.hidden, train.n_classes), train, test
    raise ConfigError(f"unknown problem.model {pc.model!r}")


def build_graph(config: RunConfig) -> tuple[Graph, list[str]]:
    tc = config.topology
    seed = config.run.seed if tc.seed is None else tc.seed
    notes = []
    if tc.kind == "er":
        if tc.resample:
            g, used = build_er_connected(tc.n, tc.p, seed)
            if used != seed:
                notes.append(f"ER graph resampled: seed {seed} -> {used}")
        else:
            g = build_er_graph(tc.n, tc.p, seed)
    elif tc.n == 1:
        g = Graph(1, frozenset())
    else:
        g = build_named_graph(tc.kind, tc.n)
    return g, notes


def setup(config: RunConfig) -> Setup:
    config.validate()
    notes: list[str] = []
    try:
        problem, train, test = load_problem(config)
        graph, gnotes = build_graph(config)
        notes += gnotes
        if not graph.connected:
            raise ConfigError(f"topology {config.topology.kind} (n={graph.n}) is disconnected; set topology.resample = true")
        mix = metropolis_weights(graph)
        data = partition(train, graph.n, config.run.seed)
        compressor = parse_compressor(config.compressor.spec, problem.dim)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    full = concat(data)
    L = config.problem.L
    if L is None and config.algorithm.schedule != "explicit":
        if not isinstance(problem, LogRegNonconvex):
            raise ConfigError("problem.L must be given for theorem schedules on this model")
        L = problem.smoothness(full)
        notes.append(f"L estimated from data: {L!r}")

    m = data[0].m
    a, pc, r = config.algorithm, config.privacy, config.run
    clip_tau = config.clip.tau
    phi_m = None
    if pc.epsilon is not None and pc.delta is not None:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            phi_m = PrivacyBudget(pc.epsilon, pc.delta, m, 1, 1.0, problem.dim).phi_m

    try:
        if a.schedule == "explicit":
            hp = HyperParams(eta=a.eta, gamma=a.gamma, b=r.b, T=r.T, tau=clip_tau if config.clip.kind != "none" else None)
        else:
            hp = theoretical_hyperparams(
                a.schedule,
                compressor.rho,
                mix.alpha,
                L,
                phi_m=phi_m,
                T=r.T,
                tau=clip_tau,
                d=problem.dim,
                sigma_g=a.sigma_g,
                nu=a.nu,
                tau_scale=a.tau_scale,
            )
            if r.T is not None and r.T != hp.T:
                notes.append(f"run.T={r.T} overrides the schedule horizon {hp.T}")
                hp = HyperParams(**{**asdict(hp), "T": r.T})
            notes += [f"schedule constraint: {v}" for v in hp.violations]
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    if config.clip.kind == "none":
        clip = ClipMode("none", None)
    else:
        clip = ClipMode(config.clip.kind, hp.tau if hp.tau is not None else clip_tau)

    budget = feasibility = None
    if a.option == "dp":
        budget = PrivacyBudget(pc.epsilon, pc.delta, m, max(hp.T, 1), clip.tau, problem.dim)
        sigma_p = budget.sigma_p if pc.sigma_p is None else pc.sigma_p
        if pc.sigma_p is not None:
            notes.append(f"privacy.sigma_p={pc.sigma_p!r} overrides the calibrated {budget.sigma_p!r}")
        hp = HyperParams(**{**asdict(hp), "sigma_p": sigma_p})
        feasibility = check_privacy_feasibility(budget, sigma_p=pc.sigma_p, b=hp.b)
        if hp.b > 1:
            warnings.warn(f"batch size {hp.b} > 1 with the private option: calibration assumes b = 1", stacklevel=2)
    else:
        hp = HyperParams(**{**asdict(hp), "sigma_p": 0.0})

    if config.problem.init == "zeros":
        x0 = np.zeros(problem.dim)
    elif config.problem.init == "gaussian":
        if isinstance(problem, OneHiddenNN):
            x0 = problem.init_params(config.run.seed)
        else:
            x0 = stream(config.run.seed, Purpose.INIT).standard_normal(problem.dim) / np.sqrt(problem.dim)
    else:
        raise ConfigError(f"problem.init must be zeros or gaussian, got {config.problem.init!r}")

    return Setup(problem, data, test, graph, mix, compressor, clip, hp, x0, L, budget, feasibility, notes)


def run(config: RunConfig, workers: int | None = None) -> tuple[RunResult, Setup]:
    s = setup(config)
    result = run_porter(
        s.problem,
        s.data,
        s.mix,
        s.hp,
        s.compressor,
        s.clip,
        config.algorithm.option,
        s.x0,
        config.run.seed,
        stride=config.run.stride,
        test_data=s.test,
        check_invariants=config.run.check_invariants,
        workers=workers or config.run.workers,
    )
    result.metadata = metadata(config, s, result)
    return result, s


def metadata(config: RunConfig, s: Setup, result: RunResult) -> dict:
    summary = summarize(result.records)
    return {
        "config": config.to_text(),
        "config_hash": config.hash(),
        "hyperparams": asdict(s.hp),
        "mixing_rate": s.mix.alpha,
        "graph_edges": s.graph.num_edges,
        "compressor": s.compressor.to_string(),
        "rho": s.compressor.rho,
        "local_samples": s.data[0].m,
        "smoothness": s.L,
        "privacy_budget": s.budget.to_dict() if s.budget else None,
        "feasibility": s.feasibility.to_dict() if s.feasibility else None,
        "feasibility_lines": s.feasibility.lines() if s.feasibility else None,
        "summary": asdict(summary),
        "x_bar_final": result.x_bar.tolist() if result.x_bar.size <= 1000 else None,
        "max_tracking_gap": result.max_tracking_gap,
        "max_mean_gap": result.max_mean_gap,
        "wall_time_s": result.wall_time,
        "notes": s.notes,
    }


def output_dir(config: RunConfig) -> Path:
    return Path(os.environ.get("PORTER_OUT") or config.run.out)


def write_run(result: RunResult, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_csv(result.records, out / "metrics.csv")
    (out / "metadata.json").write_text(json.dumps(result.metadata, indent=2, sort_keys=True) + "\n")
    (out / "config.ini").write_text(result.metadata["config"])
