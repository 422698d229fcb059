"""Test-set accuracy and oscillation measures on denormalized predictions.

All distances are 3D Euclidean, pooled over the markers: for each time step
and marker we take the norm of the 3-vector error, then aggregate.  The
nRMSE divides by the pooled standard deviation of the ground-truth signal
(per-marker mean-centered), so a constant prediction at the per-marker mean
scores exactly 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

METRIC_NAMES = ("mae_mm", "rmse_mm", "nrmse", "max_error_mm", "jitter_mm")


@dataclass(frozen=True)
class RunMetrics:
    """Five measures of one run over one evaluation interval."""

    mae_mm: float
    rmse_mm: float
    nrmse: float
    max_error_mm: float
    jitter_mm: float


@dataclass(frozen=True)
class MetricValue:
    mean: float
    ci95: float  # half-width of the Gaussian 95% confidence interval


@dataclass(frozen=True)
class MetricsReport:
    """Run-averaged metrics with 95% confidence intervals."""

    mae_mm: MetricValue
    rmse_mm: MetricValue
    nrmse: MetricValue
    max_error_mm: MetricValue
    jitter_mm: MetricValue
    n_runs: int
    metadata: dict = field(default_factory=dict)

    def value(self, name: str) -> MetricValue:
        return getattr(self, name)


def _marker_view(arr: np.ndarray) -> np.ndarray:
    """(T, 3*nM) -> (T, nM, 3)."""
    arr = np.asarray(arr, dtype=float)
    if arr.ndim != 2 or arr.shape[1] % 3 != 0:
        raise ValueError(f"expected (T, 3*n_markers) array, got shape {arr.shape}")
    return arr.reshape(arr.shape[0], -1, 3)


def pooled_std(truth: np.ndarray) -> float:
    """Pooled 3D standard deviation of a signal, per-marker mean-centered.

    sqrt(mean over (t, marker) of ||truth_{t,j} - mean_t truth_{.,j}||^2).
    """
    t = _marker_view(truth)
    centered = t - t.mean(axis=0, keepdims=True)
    return float(np.sqrt((centered**2).sum(axis=2).mean()))


def compute_metrics(
    pred: np.ndarray, truth: np.ndarray, truth_for_stats: np.ndarray | None = None
) -> RunMetrics:
    """Single-run metrics over aligned prediction/ground-truth intervals (mm).

    Args:
        pred: Predicted positions, shape (T, 3*n_markers).
        truth: Ground-truth positions, same shape.
        truth_for_stats: Signal whose pooled standard deviation normalizes
            the nRMSE; defaults to `truth` itself.
    """
    p = _marker_view(pred)
    t = _marker_view(truth)
    if p.shape != t.shape:
        raise ValueError(f"prediction shape {p.shape} != truth shape {t.shape}")
    if p.shape[0] < 2:
        raise ValueError("need at least 2 time steps to compute metrics")
    d = np.linalg.norm(p - t, axis=2)  # (T, nM)
    jumps = np.linalg.norm(p[1:] - p[:-1], axis=2)
    rmse = float(np.sqrt((d**2).mean()))
    denom = pooled_std(truth if truth_for_stats is None else truth_for_stats)
    if denom > 0:
        nrmse = rmse / denom
    else:
        # constant ground truth: perfect prediction scores 0, anything else
        # is infinitely worse than the trivial constant predictor
        nrmse = 0.0 if rmse == 0.0 else float("inf")
    return RunMetrics(
        mae_mm=float(d.mean()),
        rmse_mm=rmse,
        nrmse=nrmse,
        max_error_mm=float(d.max()),
        jitter_mm=float(jumps.mean()),
    )


def aggregate_runs(runs: list[RunMetrics], metadata: dict | None = None) -> MetricsReport:
    """Mean and Gaussian 95% CI (1.96 * sample std / sqrt(n)) per metric."""
    if not runs:
        raise ValueError("cannot aggregate an empty list of runs")
    values = {}
    for name in METRIC_NAMES:
        samples = np.array([getattr(r, name) for r in runs], dtype=float)
        if len(samples) > 1:
            ci = 1.96 * samples.std(ddof=1) / np.sqrt(len(samples))
        else:
            ci = 0.0
        values[name] = MetricValue(mean=float(samples.mean()), ci95=float(ci))
    return MetricsReport(n_runs=len(runs), metadata=metadata or {}, **values)
