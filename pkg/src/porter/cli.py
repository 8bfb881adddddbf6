"""Command-line entry point.

Exit codes: 0 success, 2 configuration or usage error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from porter.config import ConfigError, SWEEP_AXES, load_config, sweep_value
from porter.engine import InvariantViolation, NumericalError
from porter.experiment import output_dir, run, write_run
from porter.privacy import PrivacyBudget, check_privacy_feasibility, compute_phi_m
from porter.topology import build_er_graph, build_named_graph, metropolis_weights, regularize

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

log = logging.getLogger("porter")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _split_overrides(extra: list[str]) -> list[str]:
    bad = [e for e in extra if not (e.startswith("--") and "." in e.split("=", 1)[0] and "=" in e)]
    if bad:
        raise ConfigError(f"unrecognized arguments: {' '.join(bad)} (overrides look like --section.key=value)")
    return extra


def cmd_run(args, extra) -> int:
    overrides = _split_overrides(extra)
    if args.seed is not None:
        overrides.append(f"--run.seed={args.seed}")
    config = load_config(args.config, overrides)
    out = Path(args.out) if args.out else output_dir(config)
    try:
        result, _ = run(config)
    except (NumericalError, InvariantViolation) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    write_run(result, out)
    s = result.metadata["summary"]
    print(f"wrote {out / 'metrics.csv'} ({len(result.records)} rows)")
    print(f"avg ||grad f||^2 = {s['avg_grad_norm_sq']:.6g}  min ||grad f|| = {s['min_grad_norm']:.6g}  bits = {s['total_bits']}")
    for line in result.metadata.get("feasibility_lines") or []:
        print(f"privacy: {line}")
    return EXIT_OK


def _sweep_one(job):
    config, out = job
    result, _ = run(config)
    write_run(result, out)
    return result.metadata["summary"]


def cmd_sweep(args, extra) -> int:
    overrides = _split_overrides(extra)
    values = [v for chunk in args.values for v in chunk.split(",") if v.strip()]
    if not values:
        raise ConfigError("sweep needs at least one value")
    if args.axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {args.axis!r}; expected one of {sorted(SWEEP_AXES)}")
    base = load_config(args.config, overrides)
    root = Path(args.out) if args.out else output_dir(base)
    jobs = [(sweep_value(base, args.axis, v), root / f"{args.axis}={v}") for v in values]
    try:
        if args.jobs > 1:
            with ProcessPoolExecutor(args.jobs) as pool:
                summaries = list(pool.map(_sweep_one, jobs))
        else:
            summaries = [_sweep_one(j) for j in jobs]
    except (NumericalError, InvariantViolation) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    root.mkdir(parents=True, exist_ok=True)
    with (root / "summary.csv").open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        cols = ["avg_grad_norm_sq", "min_grad_norm", "final_loss", "final_accuracy", "total_bits"]
        writer.writerow([args.axis] + cols)
        for v, s in zip(values, summaries):
            writer.writerow([v] + ["" if s[c] is None else format(s[c], ".17g") if isinstance(s[c], float) else s[c] for c in cols])
    print(f"wrote {root / 'summary.csv'} ({len(values)} runs)")
    return EXIT_OK


def cmd_check_privacy(args, extra) -> int:
    if extra:
        raise ConfigError(f"unrecognized arguments: {' '.join(extra)}")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        budget = PrivacyBudget(args.epsilon, args.delta, args.m, args.T, args.tau, args.d)
        compute_phi_m(args.d, args.m, args.epsilon, args.delta)
    report = check_privacy_feasibility(budget, sigma_p=args.sigma_p, b=args.b)
    print(f"sigma_p = {budget.sigma_p:.17g}")
    print(f"phi_m = {budget.phi_m:.17g}")
    for w in caught:
        print(f"warning: {w.message}")
    for line in report.lines():
        print(line)
    return EXIT_OK


def cmd_topology(args, extra) -> int:
    if extra:
        raise ConfigError(f"unrecognized arguments: {' '.join(extra)}")
    try:
        if args.kind == "er":
            g = build_er_graph(args.n, args.p, args.seed)
        else:
            g = build_named_graph(args.kind, args.n)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    print(f"n = {g.n}")
    print(f"edges = {g.num_edges}")
    print(f"connected = {str(g.connected).lower()}")
    if g.connected:
        mix = metropolis_weights(g)
        print(f"alpha = {mix.alpha:.17g}")
        if args.gamma is not None:
            try:
                reg = regularize(mix, args.gamma)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
            print(f"alpha_hat(gamma={args.gamma}) = {reg.alpha:.17g}")
    else:
        print("warning: graph is disconnected; no mixing matrix", file=sys.stderr)
    if args.write:
        g.save(args.write)
        print(f"wrote {args.write}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="porter", description="Decentralized clipped, compressed, private SGD simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="run one experiment; extra --section.key=value pairs override the config")
    p.add_argument("config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("sweep", help="one run per value of a scalar parameter")
    p.add_argument("config")
    p.add_argument("--axis", required=True)
    p.add_argument("--values", nargs="*", default=[], help="space- or comma-separated")
    p.add_argument("--jobs", type=int, default=1, help="parallel processes")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("check-privacy", help="noise calibration and accountant feasibility")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--T", type=int, required=True)
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--d", type=int, default=1, help="dimension, used for phi_m")
    p.add_argument("--b", type=int, default=1)
    p.add_argument("--sigma-p", type=float, dest="sigma_p", help="check this noise level instead of the calibrated one")
    p.set_defaults(fn=cmd_check_privacy)

    p = sub.add_parser("topology", help="graph statistics and Metropolis mixing rate")
    p.add_argument("kind", choices=["er", "ring", "complete", "path", "star"])
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--p", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gamma", type=float)
    p.add_argument("--write", help="write the edge list here")
    p.set_defaults(fn=cmd_topology)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args, extra)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
