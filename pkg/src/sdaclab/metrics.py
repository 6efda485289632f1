"""Per-iteration metrics, CSV persistence and Monte Carlo aggregation.

A metrics file is UTF-8 CSV: ``# ``-prefixed lines carrying the resolved configuration,
then a header row in ``COLUMNS`` order. Parameter-based columns (consensus errors and oracle
quantities) describe the iterate at the start of the iteration, so row 0 holds the
initialization; counters are cumulative through the end of the iteration. Oracle columns are
empty on iterations where the diagnostics cadence did not fire. The objective column is
``J(theta) = E_{s0 ~ mu_0}[V_theta(s0)]``.
"""

from __future__ import annotations

import dataclasses
from collections.abc import Iterable, Mapping, Sequence
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import SchemaError

COLUMNS = (
    "iteration",
    "samples",
    "communications",
    "reward",
    "running_reward",
    "critic_consensus",
    "reward_consensus",
    "critic_gap",
    "grad_norm_sq",
    "objective",
    "app_error_critic",
)

PLOT_COLUMNS = ("series", "x_kind", "x", "mean", "sd")
X_KINDS = ("samples", "communications")


@dataclasses.dataclass(frozen=True)
class MetricsRecord:
    """One row of a run's metrics."""

    iteration: int
    samples: int
    communications: int
    reward: float
    running_reward: float
    critic_consensus: float
    reward_consensus: float
    critic_gap: float = float("nan")
    grad_norm_sq: float = float("nan")
    objective: float = float("nan")
    app_error_critic: float = float("nan")


def records_frame(records: Sequence[MetricsRecord]) -> pd.DataFrame:
    """Records as a frame with the canonical column order."""
    frame = pd.DataFrame([dataclasses.astuple(r) for r in records], columns=list(COLUMNS))
    return frame.astype({"iteration": "int64", "samples": "int64", "communications": "int64"})


def _comment(header: str) -> str:
    return "".join(f"# {line}\n" if line else "#\n" for line in header.splitlines())


def write_metrics(path: Path, frame: pd.DataFrame, header: str = "") -> Path:
    """Write a metrics or aggregate frame, prefixed by ``header`` as comment lines."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        handle.write(_comment(header))
        frame.to_csv(handle, index=False, lineterminator="\n")
    return path


def read_metrics(path: Path, required: Iterable[str] = COLUMNS) -> pd.DataFrame:
    """Read a metrics file, skipping comment lines.

    Raises:
        SchemaError: If any required column is missing.

    """
    frame = pd.read_csv(path, comment="#", float_precision="round_trip", encoding="utf-8")
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise SchemaError(f"{path} lacks columns {missing}")
    return frame


def aggregate(frames: Sequence[pd.DataFrame]) -> pd.DataFrame:
    """Per-iteration mean and population standard deviation across runs.

    Columns are ``iteration`` followed by ``<metric>_mean`` and ``<metric>_sd`` for every
    other metric.

    Raises:
        SchemaError: If no frames are given or their iteration axes differ.

    """
    if not frames:
        raise SchemaError("Nothing to aggregate")
    iterations = frames[0]["iteration"].to_numpy()
    for frame in frames[1:]:
        if not np.array_equal(frame["iteration"].to_numpy(), iterations):
            raise SchemaError("Runs disagree on their iteration axis")
    metrics = [c for c in COLUMNS if c != "iteration"]
    stacked = np.stack([frame[metrics].to_numpy(dtype=float) for frame in frames])
    out = {"iteration": iterations}
    with np.errstate(invalid="ignore"):
        mean = stacked.mean(axis=0)
        sd = stacked.std(axis=0, ddof=0)
    for j, name in enumerate(metrics):
        out[f"{name}_mean"] = mean[:, j]
        out[f"{name}_sd"] = sd[:, j]
    return pd.DataFrame(out)


def aggregate_columns(metric: str) -> tuple[str, ...]:
    """Columns ``emit_plot_data`` needs from an aggregate to plot ``metric``."""
    return ("iteration", "samples_mean", "communications_mean", f"{metric}_mean", f"{metric}_sd")


def long_format(aggregates: Mapping[str, pd.DataFrame], metric: str = "running_reward") -> pd.DataFrame:
    """Tidy plot rows ``(series, x_kind, x, mean, sd)``, samples-indexed rows first per series.

    Raises:
        SchemaError: If an aggregate lacks a required column.

    """
    parts = []
    for series, frame in aggregates.items():
        missing = [c for c in aggregate_columns(metric) if c not in frame.columns]
        if missing:
            raise SchemaError(f"Aggregate {series!r} lacks columns {missing}")
        for kind in X_KINDS:
            parts.append(
                pd.DataFrame(
                    {
                        "series": series,
                        "x_kind": kind,
                        "x": frame[f"{kind}_mean"].to_numpy(),
                        "mean": frame[f"{metric}_mean"].to_numpy(),
                        "sd": frame[f"{metric}_sd"].to_numpy(),
                    }
                )
            )
    if not parts:
        return pd.DataFrame(columns=list(PLOT_COLUMNS))
    return pd.concat(parts, ignore_index=True)[list(PLOT_COLUMNS)]
