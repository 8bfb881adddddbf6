"""Per-iteration measurements and their CSV form."""

from __future__ import annotations

import csv
import io
from dataclasses import astuple, dataclass, fields
from pathlib import Path
from typing import Iterable, TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from porter.engine import PorterState
    from porter.problems import Dataset, Problem

CSV_COLUMNS = (
    "t",
    "loss",
    "grad_norm",
    "grad_norm_sq",
    "consensus_x",
    "quant_x",
    "consensus_v",
    "quant_v",
    "test_accuracy",
    "bits",
)


@dataclass(frozen=True)
class MetricsRecord:
    """Measurements at the averaged iterate plus the consensus and
    compression errors of the iterates and gradient trackers."""

    t: int
    loss: float
    grad_norm: float
    grad_norm_sq: float
    consensus_x: float
    quant_x: float
    consensus_v: float
    quant_v: float
    test_accuracy: float | None
    bits: int


def _dispersion(M: np.ndarray) -> float:
    return float(np.sum((M - M.mean(axis=1, keepdims=True)) ** 2))


def measure(state: "PorterState", problem: "Problem", data: "Dataset", test: "Dataset | None" = None, bits: int = 0) -> MetricsRecord:
    """Exact (full-data) loss and gradient at the mean iterate, plus error terms."""
    x_bar = state.X.mean(axis=1)
    loss, g = problem.loss_and_grad(x_bar, data)
    gsq = float(g @ g)
    return MetricsRecord(
        t=state.t,
        loss=loss,
        grad_norm=float(np.sqrt(gsq)),
        grad_norm_sq=gsq,
        consensus_x=_dispersion(state.X),
        quant_x=float(np.sum((state.Qx - state.X) ** 2)),
        consensus_v=_dispersion(state.V),
        quant_v=float(np.sum((state.Qv - state.V) ** 2)),
        test_accuracy=None if test is None else problem.accuracy(x_bar, test),
        bits=int(bits),
    )


@dataclass(frozen=True)
class Summary:
    avg_grad_norm_sq: float
    min_grad_norm: float
    final_loss: float
    final_accuracy: float | None
    total_bits: int


def summarize(records: Iterable[MetricsRecord]) -> Summary:
    """Utility measures over t >= 1 (falls back to the t = 0 record when T = 0)."""
    records = list(records)
    if not records:
        raise ValueError("cannot summarize an empty metrics stream")
    body = [r for r in records if r.t >= 1] or records
    last = records[-1]
    return Summary(
        avg_grad_norm_sq=float(np.mean([r.grad_norm_sq for r in body])),
        min_grad_norm=float(min(r.grad_norm for r in body)),
        final_loss=last.loss,
        final_accuracy=last.test_accuracy,
        total_bits=last.bits,
    )


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def records_to_csv(records: Iterable[MetricsRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in records:
        writer.writerow([_fmt(v) for v in astuple(r)])
    return buf.getvalue()


def write_csv(records: Iterable[MetricsRecord], path: str | Path) -> None:
    Path(path).write_text(records_to_csv(records))


def parse_csv(text: str) -> list[MetricsRecord]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(header) != CSV_COLUMNS:
        raise ValueError(f"unexpected CSV header {header}")
    out = []
    for row in reader:
        vals = dict(zip(header, row))
        out.append(
            MetricsRecord(
                t=int(vals["t"]),
                bits=int(vals["bits"]),
                test_accuracy=float(vals["test_accuracy"]) if vals["test_accuracy"] else None,
                **{f.name: float(vals[f.name]) for f in fields(MetricsRecord) if f.name not in ("t", "bits", "test_accuracy")},
            )
        )
    return out


def read_csv(path: str | Path) -> list[MetricsRecord]:
    return parse_csv(Path(path).read_text())
