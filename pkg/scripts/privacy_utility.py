"""Utility of the private option across privacy budgets.

Runs the desk-scale synthetic logistic regression at several epsilon values
and seeds, prints mean average squared gradient norm and final test accuracy,
and writes a CSV table.

    python scripts/privacy_utility.py --eps 0.01 0.03 0.1 0.3 --seeds 3
"""

import argparse
import csv
from pathlib import Path

import numpy as np

from porter.config import load_config
from porter.experiment import run

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "desk_thm4.ini"))
    ap.add_argument("--eps", type=float, nargs="+", default=[0.01, 0.03, 0.1, 0.3])
    ap.add_argument("--delta", type=float, default=1e-3)
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--T", type=int, default=None, help="override run.T")
    ap.add_argument("--out", default="runs/privacy_utility.csv")
    args = ap.parse_args()

    rows = []
    for eps in args.eps:
        util, acc = [], []
        for seed in range(args.seeds):
            overrides = ["--algorithm.option=dp", f"--privacy.epsilon={eps}", f"--privacy.delta={args.delta}", f"--run.seed={seed}"]
            if args.T:
                overrides.append(f"--run.T={args.T}")
            result, s = run(load_config(args.config, overrides))
            summary = result.metadata["summary"]
            util.append(summary["avg_grad_norm_sq"])
            acc.append(summary["final_accuracy"] if summary["final_accuracy"] is not None else np.nan)
        rows.append((eps, s.hp.sigma_p, float(np.mean(util)), float(np.std(util)), float(np.nanmean(acc))))
        print(f"eps={eps:<8g} sigma_p={s.hp.sigma_p:<10.4g} avg||grad||^2={rows[-1][2]:.4g} +- {rows[-1][3]:.2g}  acc={rows[-1][4]:.3f}")

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epsilon", "sigma_p", "avg_grad_norm_sq_mean", "avg_grad_norm_sq_std", "final_accuracy_mean"])
        w.writerows(rows)
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
