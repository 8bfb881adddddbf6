"""Bits sent versus utility for different compressors (clipping-only option).

    python scripts/compression_tradeoff.py --specs identity top_k:10% random_k:10% random_k:5%
"""

import argparse
from pathlib import Path

from porter.config import load_config
from porter.experiment import run

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "synthetic_gc.ini"))
    ap.add_argument("--specs", nargs="+", default=["identity", "top_k:25%", "random_k:25%", "top_k:5%", "random_k:5%"])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    print(f"{'compressor':<16}{'rho':>8}{'bits':>14}{'min ||grad||':>14}{'final loss':>12}")
    for spec in args.specs:
        result, s = run(load_config(args.config, [f"--compressor.spec={spec}", f"--run.seed={args.seed}"]))
        summary = result.metadata["summary"]
        print(f"{spec:<16}{s.compressor.rho:>8.3f}{summary['total_bits']:>14d}{summary['min_grad_norm']:>14.4g}{summary['final_loss']:>12.4f}")


if __name__ == "__main__":
    main()
