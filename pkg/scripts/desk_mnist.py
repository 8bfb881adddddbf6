"""One-hidden-layer network on MNIST IDX files, private versus clipping-only.

Expects the four standard IDX files in --data (not downloaded here).

    python scripts/desk_mnist.py --data data/mnist --T 300 --eps 0.1
"""

import argparse
from pathlib import Path

from porter.config import load_config
from porter.experiment import run, write_run

ROOT = Path(__file__).resolve().parents[1]
FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data", default="data/mnist")
    ap.add_argument("--config", default=str(ROOT / "configs" / "mnist_nn.ini"))
    ap.add_argument("--T", type=int, default=300)
    ap.add_argument("--eps", type=float, default=0.1)
    ap.add_argument("--out", default="runs/mnist")
    args = ap.parse_args()

    data = Path(args.data)
    missing = [f for f in FILES.values() if not (data / f).exists()]
    if missing:
        raise SystemExit(f"missing IDX files in {data}: {', '.join(missing)}")
    paths = [f"--problem.{k}={data / v}" for k, v in FILES.items()]
    for option in ("gc", "dp"):
        overrides = paths + [f"--run.T={args.T}", f"--algorithm.option={option}"]
        if option == "dp":
            overrides.append(f"--privacy.epsilon={args.eps}")
        result, _ = run(load_config(args.config, overrides))
        write_run(result, Path(args.out) / option)
        s = result.metadata["summary"]
        print(f"{option}: final loss {s['final_loss']:.4f}  test accuracy {s['final_accuracy']:.4f}  bits {s['total_bits']}")


if __name__ == "__main__":
    main()
