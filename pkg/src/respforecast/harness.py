"""Experiment orchestration: per-sequence, per-rate, per-horizon grid-search
cross-validation with run averaging, followed by test evaluation.

Protocol per cell (sequence, sampling rate, horizon, algorithm):
  1. resample the record to the requested rate,
  2. grid-search hyperparameters by cross-validation RMSE averaged over
     seeded runs (online learners warm up on the first 30 s and are scored
     on the next 30 s; batch models fit on 54 s and score on 6 s),
  3. rerun with the selected hyperparameters and report run-averaged
     metrics on the test interval (everything after the first minute).

Online learners never stop updating; the partition only controls which
predictions are scored.  All randomness flows from one master seed through
a counter-based fan-out, so cells are reproducible and order-independent.
"""

from __future__ import annotations

import hashlib
import itertools
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .baselines import LatestPositionForecaster, linreg_fit, svr_fit
from .metrics import METRIC_NAMES, MetricsReport, aggregate_runs, compute_metrics
from .rnn import NumericError, init_weights
from .sequences import (
    DEFAULT_NOISE_GAMMA,
    MarkerSequence,
    NormStats,
    SequencePartition,
    WindowSet,
    downsample,
    denormalize,
    fit_norm_stats,
    upsample_with_noise,
)
from .trainers import (
    DniTrainer,
    FrozenLayerTrainer,
    LmsTrainer,
    RtrlTrainer,
    Snap1Trainer,
    UoroTrainer,
)

# --------------------------------------------------------------------------
# Sampling rates and unit conversions
# --------------------------------------------------------------------------

#: Canonical study rates.  3.33 Hz is stored exactly as 10/3 so that
#: horizon and history conversions stay integral.
CANONICAL_FREQS = {"3.33": 10.0 / 3.0, "10": 10.0, "30": 30.0}


def canonicalize_freq(f: float) -> float:
    for value in CANONICAL_FREQS.values():
        if abs(f - value) <= 0.02:
            return value
    return float(f)


def freq_key(f: float) -> str:
    for key, value in CANONICAL_FREQS.items():
        if abs(f - value) <= 0.02:
            return key
    return f"{f:g}"


def steps_from_seconds(value_s: float, sample_rate_hz: float) -> int:
    """Converts a duration to time steps, requiring integrality."""
    steps = value_s * sample_rate_hz
    rounded = int(round(steps))
    if rounded < 1 or abs(steps - rounded) > 1e-6 * max(1.0, abs(steps)):
        raise ValueError(
            f"{value_s} s is not a whole positive number of steps at {sample_rate_hz} Hz"
        )
    return rounded


def default_horizons_s(f: float) -> tuple[float, ...]:
    """Study horizons: multiples of 0.3 s at 3.33 Hz, of 0.1 s otherwise."""
    if freq_key(f) == "3.33":
        return tuple(np.round(np.arange(1, 8) * 0.3, 10))
    return tuple(np.round(np.arange(1, 22) * 0.1, 10))


def seed_sequence(master_seed: int, *parts) -> np.random.SeedSequence:
    """Counter-based seed derivation: one stream per (cell, phase, run).

    The textual parts are hashed into a spawn key, so streams are
    reproducible and independent of execution order.
    """
    tag = "|".join(str(p) for p in parts)
    digest = hashlib.blake2b(tag.encode(), digest_size=16).digest()
    key = tuple(int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4))
    return np.random.SeedSequence(entropy=int(master_seed), spawn_key=key)


def resample_to(
    seq: MarkerSequence,
    target_hz: float,
    gamma: float = DEFAULT_NOISE_GAMMA,
    master_seed: int = 0,
    tag: str = "",
) -> MarkerSequence:
    """Resamples a record to a target rate (identity, decimation, or
    spline upsampling with seeded noise injection)."""
    target_hz = canonicalize_freq(target_hz)
    ratio = target_hz / seq.sample_rate_hz
    if abs(ratio - 1.0) < 1e-9:
        return seq
    if ratio < 1.0:
        inv = 1.0 / ratio
        if abs(inv - round(inv)) > 1e-6:
            raise ValueError(
                f"cannot decimate {seq.sample_rate_hz} Hz to {target_hz} Hz: non-integer factor"
            )
        return downsample(seq, int(round(inv)))
    rng = np.random.default_rng(seed_sequence(master_seed, "resample", tag, freq_key(target_hz)))
    return upsample_with_noise(seq, target_hz, gamma=gamma, rng_seed=rng)


# --------------------------------------------------------------------------
# Hyperparameter grids
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class HyperParams:
    """One grid point.  Fields irrelevant to an algorithm stay None."""

    eta: float | None = None
    shl_s: float | None = None
    q: int | None = None
    svr_sqrt2_sigma: float | None = None
    svr_epsilon: float | None = None
    svr_c: float | None = None
    tau: float = 100.0
    sigma_init: float = 0.02
    eta_a: float = 0.002

    def to_dict(self) -> dict:
        return {
            "eta": self.eta,
            "shl_s": self.shl_s,
            "q": self.q,
            "svr_sqrt2_sigma": self.svr_sqrt2_sigma,
            "svr_epsilon": self.svr_epsilon,
            "svr_c": self.svr_c,
        }


@dataclass(frozen=True)
class AlgorithmInfo:
    name: str
    stochastic: bool
    offline: bool
    uses_rnn: bool


ALGORITHMS = {
    "rtrl": AlgorithmInfo("rtrl", stochastic=True, offline=False, uses_rnn=True),
    "uoro": AlgorithmInfo("uoro", stochastic=True, offline=False, uses_rnn=True),
    "snap1": AlgorithmInfo("snap1", stochastic=True, offline=False, uses_rnn=True),
    "dni": AlgorithmInfo("dni", stochastic=True, offline=False, uses_rnn=True),
    "dni-simple": AlgorithmInfo("dni-simple", stochastic=True, offline=False, uses_rnn=True),
    "frozen-rnn": AlgorithmInfo("frozen-rnn", stochastic=True, offline=False, uses_rnn=True),
    "lms": AlgorithmInfo("lms", stochastic=False, offline=False, uses_rnn=False),
    "linreg": AlgorithmInfo("linreg", stochastic=False, offline=True, uses_rnn=False),
    "svr": AlgorithmInfo("svr", stochastic=False, offline=True, uses_rnn=False),
    "no-prediction": AlgorithmInfo("no-prediction", stochastic=False, offline=False, uses_rnn=False),
}

SHL_GRID_S = (1.2, 2.4, 3.6, 4.8, 6.0)
RNN_ETA_GRID = (0.005, 0.01, 0.02)
RNN_Q_GRID = (30, 60, 90, 120, 150, 180)
RTRL_Q_GRID = (10, 25, 40)
SVR_SQRT2_SIGMA_GRID = (100.0, 200.0, 500.0, 1000.0)
SVR_EPSILON_GRID = (0.005, 0.01, 0.02, 0.05)
SVR_C_GRID = (100.0, 200.0, 500.0, 1000.0)
LMS_ETA_GRID = {
    "3.33": (0.0002, 0.0005, 0.001),
    "10": (0.0001, 0.0002, 0.0005),
    "30": (0.00005, 0.0001, 0.0002),
}

# Reduced grids so that cross-validation stays CI-runnable (minutes, not
# hours).  Sized to still learn clean periodic signals at 10 Hz.
DESK_SHL_GRID_S = (1.2, 2.4)
DESK_RNN_ETA_GRID = (0.01, 0.02)
DESK_RNN_Q_GRID = (20, 40)
DESK_RTRL_Q_GRID = (5, 10)
DESK_SVR_SQRT2_SIGMA_GRID = (100.0, 1000.0)
DESK_SVR_EPSILON_GRID = (0.01,)
DESK_SVR_C_GRID = (100.0, 1000.0)
DESK_LMS_ETA_GRID = {
    "3.33": (0.0005, 0.001),
    "10": (0.0002, 0.0005),
    "30": (0.0001, 0.0002),
}

PRESET_RUNS = {"paper": (50, 300), "desk": (5, 10)}


def _nearest_lms_grid(table: dict, f: float) -> tuple[float, ...]:
    key = freq_key(f)
    if key in table:
        return table[key]
    # Unlisted rate: borrow the grid of the nearest canonical rate.
    nearest = min(CANONICAL_FREQS, key=lambda k: abs(CANONICAL_FREQS[k] - f))
    return table[nearest]


@dataclass(frozen=True)
class GridSpec:
    """Hyperparameter search space plus run counts for one experiment."""

    preset: str = "paper"
    n_cv: int | None = None
    n_test: int | None = None
    custom: dict | None = None  # algorithm -> tuple of HyperParams, overrides preset

    def __post_init__(self):
        if self.preset not in PRESET_RUNS:
            raise ValueError(f"unknown preset {self.preset!r}; choose from {list(PRESET_RUNS)}")

    @property
    def cv_runs(self) -> int:
        return self.n_cv if self.n_cv is not None else PRESET_RUNS[self.preset][0]

    @property
    def test_runs(self) -> int:
        return self.n_test if self.n_test is not None else PRESET_RUNS[self.preset][1]

    def points(self, algorithm: str, sample_rate_hz: float) -> list[HyperParams]:
        """Grid points in lexicographic (eta, shl, q, ...) order, so that the
        first argmin is also the tie-break winner."""
        if algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {algorithm!r}")
        if self.custom and algorithm in self.custom:
            return list(self.custom[algorithm])
        desk = self.preset == "desk"
        shl = DESK_SHL_GRID_S if desk else SHL_GRID_S
        if algorithm in ("uoro", "snap1", "dni", "dni-simple", "frozen-rnn", "rtrl"):
            etas = DESK_RNN_ETA_GRID if desk else RNN_ETA_GRID
            if algorithm == "rtrl":
                qs = DESK_RTRL_Q_GRID if desk else RTRL_Q_GRID
            else:
                qs = DESK_RNN_Q_GRID if desk else RNN_Q_GRID
            return [
                HyperParams(eta=e, shl_s=s, q=q)
                for e, s, q in itertools.product(sorted(etas), sorted(shl), sorted(qs))
            ]
        if algorithm == "lms":
            etas = _nearest_lms_grid(DESK_LMS_ETA_GRID if desk else LMS_ETA_GRID, sample_rate_hz)
            return [
                HyperParams(eta=e, shl_s=s)
                for e, s in itertools.product(sorted(etas), sorted(shl))
            ]
        if algorithm == "linreg":
            return [HyperParams(shl_s=s) for s in sorted(shl)]
        if algorithm == "svr":
            sigmas = DESK_SVR_SQRT2_SIGMA_GRID if desk else SVR_SQRT2_SIGMA_GRID
            epss = DESK_SVR_EPSILON_GRID if desk else SVR_EPSILON_GRID
            cs = DESK_SVR_C_GRID if desk else SVR_C_GRID
            return [
                HyperParams(shl_s=s, svr_sqrt2_sigma=sg, svr_epsilon=ep, svr_c=c)
                for s, sg, ep, c in itertools.product(
                    sorted(shl), sorted(sigmas), sorted(epss), sorted(cs)
                )
            ]
        # no-prediction has nothing to tune
        return [HyperParams()]


# --------------------------------------------------------------------------
# Single runs
# --------------------------------------------------------------------------


class InfeasibleGridPoint(Exception):
    """The (history, horizon) pair leaves too few examples; skip the point."""


def make_forecaster(
    algorithm: str,
    params: HyperParams,
    input_dim: int,
    output_dim: int,
    rng: np.random.Generator,
):
    """Instantiates the uniform step-interface forecaster for one run."""
    info = ALGORITHMS[algorithm]
    if info.uses_rnn:
        model = init_weights(params.q, input_dim - 1, output_dim, params.sigma_init, rng)
        if algorithm == "rtrl":
            return RtrlTrainer(model, params.eta, params.tau)
        if algorithm == "uoro":
            return UoroTrainer(model, params.eta, params.tau, rng=rng)
        if algorithm == "snap1":
            return Snap1Trainer(model, params.eta, params.tau)
        if algorithm == "dni":
            return DniTrainer(model, params.eta, params.tau, eta_a=params.eta_a, rng=rng)
        if algorithm == "dni-simple":
            return DniTrainer(
                model, params.eta, params.tau, eta_a=params.eta_a, full_update=False, rng=rng
            )
        if algorithm == "frozen-rnn":
            return FrozenLayerTrainer(model, params.eta, params.tau)
    if algorithm == "lms":
        return LmsTrainer(input_dim, output_dim, params.eta, params.tau)
    if algorithm == "no-prediction":
        return LatestPositionForecaster(output_dim)
    raise ValueError(f"unknown algorithm {algorithm!r}")


def _history_steps(params: HyperParams, sample_rate_hz: float) -> int:
    if params.shl_s is None:
        return 1
    return steps_from_seconds(params.shl_s, sample_rate_hz)


def _online_pass(
    seq: MarkerSequence,
    algorithm: str,
    params: HyperParams,
    h_steps: int,
    rng: np.random.Generator,
    stop_target: int | None = None,
):
    """Runs an online learner over a record, predict-then-learn at each step.

    Returns denormalized (mm) predictions and the indices their targets sit
    at.  `stop_target` stops the pass before any example whose target index
    reaches it, which is how grid search avoids touching the test interval.
    """
    part = SequencePartition.for_sequence(seq)
    stats = fit_norm_stats(seq, part)
    history = _history_steps(params, seq.sample_rate_hz)
    ws = WindowSet(seq, stats, history, h_steps)
    count = ws.n_examples
    if stop_target is not None:
        count = min(count, max(0, stop_target - (history + h_steps - 1)))
    if count == 0:
        raise InfeasibleGridPoint(
            f"history={history}, horizon={h_steps} leaves no usable example"
        )
    forecaster = make_forecaster(algorithm, params, ws.input_dim, ws.output_dim, rng)
    preds = np.empty((count, ws.output_dim))
    # BLAS threading is pure overhead on per-step-sized matrices; one thread
    # keeps the sequential pass fast and plays well with process pools.
    with threadpool_limits(limits=1):
        for n in range(count):
            try:
                preds[n] = forecaster.step(ws.input(n), ws.target(n))
            except NumericError as exc:
                raise NumericError(f"step {n}: {exc}") from exc
    return denormalize(preds, stats), ws.target_indices[:count], part


def _offline_fit_predict(
    seq: MarkerSequence,
    algorithm: str,
    params: HyperParams,
    h_steps: int,
    eval_lo: int,
    eval_hi: int | None = None,
):
    """Fits a batch model on the training window and predicts one interval."""
    part = SequencePartition.for_sequence(seq, offline=True)
    stats = fit_norm_stats(seq, part)
    history = _history_steps(params, seq.sample_rate_hz)
    ws = WindowSet(seq, stats, history, h_steps)
    tidx = ws.target_indices
    train_sel = np.where(tidx < part.train.stop)[0]
    mask = tidx >= eval_lo
    if eval_hi is not None:
        mask &= tidx < eval_hi
    eval_sel = np.where(mask)[0]
    if len(train_sel) == 0 or len(eval_sel) < 2:
        raise InfeasibleGridPoint(
            f"history={history}, horizon={h_steps} leaves too few train/eval examples"
        )
    targets = ws.targets_matrix()
    U_train = ws.inputs_for(train_sel)
    if algorithm == "linreg":
        model = linreg_fit(U_train, targets[train_sel])
    elif algorithm == "svr":
        model = svr_fit(
            U_train,
            targets[train_sel],
            sigma=params.svr_sqrt2_sigma / np.sqrt(2.0),
            epsilon=params.svr_epsilon,
            C=params.svr_c,
        )
    else:
        raise ValueError(f"{algorithm!r} is not an offline algorithm")
    preds = model.predict(ws.inputs_for(eval_sel))
    return denormalize(preds, stats), tidx[eval_sel], part


@dataclass
class CvRecord:
    params: HyperParams
    cv_rmse_mm: float  # NaN when the point was infeasible
    n_runs: int


@dataclass
class CvResult:
    best: HyperParams
    best_rmse_mm: float
    records: list[CvRecord]


def cross_validate(
    seq: MarkerSequence,
    algorithm: str,
    grid: GridSpec,
    h_steps: int,
    master_seed: int = 0,
    cell_tag: tuple = (),
) -> CvResult:
    """Grid search minimizing cross-validation RMSE (mm), run-averaged.

    Ties break toward the lexicographically smallest grid point, which is
    the generation order of `GridSpec.points`.  Infeasible (history,
    horizon) combinations are skipped; if everything is skipped, raises.
    """
    info = ALGORITHMS[algorithm]
    points = grid.points(algorithm, seq.sample_rate_hz)
    n_runs = grid.cv_runs if info.stochastic else 1
    if info.offline:
        part = SequencePartition.for_sequence(seq, offline=True)
    else:
        part = SequencePartition.for_sequence(seq)
    cv_lo, cv_hi = part.cross_validation.start, part.cross_validation.stop

    records = []
    for idx, params in enumerate(points):
        rmses = []
        try:
            for run in range(n_runs):
                rng = np.random.default_rng(
                    seed_sequence(master_seed, "cv", *cell_tag, algorithm, idx, run)
                )
                if info.offline:
                    pred_mm, tidx, _ = _offline_fit_predict(
                        seq, algorithm, params, h_steps, eval_lo=cv_lo, eval_hi=cv_hi
                    )
                else:
                    pred_mm, tidx, _ = _online_pass(
                        seq, algorithm, params, h_steps, rng, stop_target=cv_hi
                    )
                    sel = tidx >= cv_lo
                    if sel.sum() < 2:
                        raise InfeasibleGridPoint("fewer than 2 cross-validation examples")
                    pred_mm, tidx = pred_mm[sel], tidx[sel]
                truth = seq.positions[tidx]
                rmses.append(compute_metrics(pred_mm, truth).rmse_mm)
        except InfeasibleGridPoint:
            records.append(CvRecord(params, float("nan"), 0))
            continue
        records.append(CvRecord(params, float(np.mean(rmses)), n_runs))

    feasible = [r for r in records if r.n_runs > 0]
    if not feasible:
        raise ValueError(
            f"every {algorithm} grid point is infeasible for this sequence/horizon"
        )
    best = min(feasible, key=lambda r: r.cv_rmse_mm)
    return CvResult(best=best.params, best_rmse_mm=best.cv_rmse_mm, records=records)


def evaluate(
    seq: MarkerSequence,
    algorithm: str,
    params: HyperParams,
    h_steps: int,
    master_seed: int = 0,
    n_runs: int | None = None,
    cell_tag: tuple = (),
) -> MetricsReport:
    """Test-interval metrics with the given hyperparameters, run-averaged.

    Online algorithms run over the whole record and are scored on targets
    falling after the first minute; offline ones are fit on their training
    window and predict the same test targets.
    """
    info = ALGORITHMS[algorithm]
    if n_runs is None:
        n_runs = 1
    if not info.stochastic:
        n_runs = 1
    part = SequencePartition.for_sequence(seq, offline=info.offline)
    test_lo = part.test.start

    runs = []
    for run in range(n_runs):
        rng = np.random.default_rng(
            seed_sequence(master_seed, "test", *cell_tag, algorithm, run)
        )
        try:
            if info.offline:
                pred_mm, tidx, _ = _offline_fit_predict(
                    seq, algorithm, params, h_steps, eval_lo=test_lo
                )
            else:
                pred_mm, tidx, _ = _online_pass(seq, algorithm, params, h_steps, rng)
                sel = tidx >= test_lo
                if sel.sum() < 2:
                    raise InfeasibleGridPoint("fewer than 2 test examples")
                pred_mm, tidx = pred_mm[sel], tidx[sel]
        except NumericError as exc:
            raise NumericError(f"{algorithm} run {run}: {exc}") from exc
        runs.append(compute_metrics(pred_mm, seq.positions[tidx]))

    metadata = {
        "algorithm": algorithm,
        "label": seq.label,
        "frequency": freq_key(seq.sample_rate_hz),
        "horizon_steps": h_steps,
        "hyperparams": params.to_dict(),
    }
    return aggregate_runs(runs, metadata)


# --------------------------------------------------------------------------
# Sweeps
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepSpec:
    """What to sweep: rates, horizons, algorithms, and noise settings."""

    frequencies: tuple[float, ...] = tuple(CANONICAL_FREQS.values())
    algorithms: tuple[str, ...] = ("snap1",)
    horizons_s: dict | None = None  # freq key -> tuple of horizons; None = defaults
    gamma: float = DEFAULT_NOISE_GAMMA

    def horizons_for(self, f: float) -> tuple[float, ...]:
        if self.horizons_s:
            key = freq_key(f)
            if key in self.horizons_s:
                return tuple(self.horizons_s[key])
        return default_horizons_s(f)


RESULT_COLUMNS = (
    ["sequence", "label", "algorithm", "frequency", "horizon_s", "horizon_steps"]
    + ["eta", "shl_s", "q", "svr_sqrt2_sigma", "svr_epsilon", "svr_c"]
    + ["cv_rmse_mm", "n_runs"]
    + [f"{name}{suffix}" for name in METRIC_NAMES for suffix in ("", "_ci95")]
    + ["error"]
)

SUMMARY_COLUMNS = (
    ["scope", "algorithm", "frequency", "horizon_s", "sequence", "n_cells"]
    + [f"{name}{suffix}" for name in METRIC_NAMES for suffix in ("", "_ci95")]
)


def _cell_row(
    seq_name: str,
    label: str,
    algorithm: str,
    f: float,
    h_s: float,
    h_steps: int | None,
    params: HyperParams | None,
    cv_rmse: float | None,
    report: MetricsReport | None,
    error: str | None,
) -> dict:
    row = {
        "sequence": seq_name,
        "label": label,
        "algorithm": algorithm,
        "frequency": freq_key(f),
        "horizon_s": h_s,
        "horizon_steps": h_steps,
        "cv_rmse_mm": cv_rmse,
        "error": error,
    }
    row.update((params.to_dict() if params else HyperParams().to_dict()))
    if report is not None:
        row["n_runs"] = report.n_runs
        for name in METRIC_NAMES:
            value = report.value(name)
            row[name] = value.mean
            row[f"{name}_ci95"] = value.ci95
    else:
        row["n_runs"] = 0
        for name in METRIC_NAMES:
            row[name] = None
            row[f"{name}_ci95"] = None
    return row


def run_cell(
    seq_name: str,
    seq_native: MarkerSequence,
    algorithm: str,
    grid: GridSpec,
    f: float,
    h_s: float,
    master_seed: int,
    gamma: float = DEFAULT_NOISE_GAMMA,
) -> dict:
    """One sweep cell: resample, cross-validate, evaluate, return a row."""
    seq = resample_to(seq_native, f, gamma=gamma, master_seed=master_seed, tag=seq_name)
    h_steps = steps_from_seconds(h_s, seq.sample_rate_hz)
    cell_tag = (seq_name, freq_key(f), f"{h_s:g}")
    cv = cross_validate(seq, algorithm, grid, h_steps, master_seed, cell_tag)
    report = evaluate(
        seq, algorithm, cv.best, h_steps, master_seed, n_runs=grid.test_runs, cell_tag=cell_tag
    )
    return _cell_row(
        seq_name, seq.label, algorithm, f, h_s, h_steps, cv.best, cv.best_rmse_mm, report, None
    )


def _run_cell_payload(payload: dict) -> dict:
    try:
        return run_cell(**payload)
    except Exception as exc:  # partial failures are recorded, not fatal
        return _cell_row(
            payload["seq_name"],
            payload["seq_native"].label,
            payload["algorithm"],
            payload["f"],
            payload["h_s"],
            None,
            None,
            None,
            None,
            f"{type(exc).__name__}: {exc}",
        )


@dataclass
class SweepResult:
    rows: list[dict]
    summary: list[dict]

    @property
    def n_failed(self) -> int:
        return sum(1 for r in self.rows if r.get("error"))

    def failures(self) -> list[dict]:
        return [r for r in self.rows if r.get("error")]


def _combine_rows(rows: list[dict], scope: str, **fixed) -> dict:
    """Averages metric means over cells; CIs combine as independent runs."""
    out = {
        "scope": scope,
        "algorithm": fixed.get("algorithm"),
        "frequency": fixed.get("frequency"),
        "horizon_s": fixed.get("horizon_s"),
        "sequence": fixed.get("sequence"),
        "n_cells": len(rows),
    }
    for name in METRIC_NAMES:
        means = np.array([r[name] for r in rows], dtype=float)
        cis = np.array([r[f"{name}_ci95"] for r in rows], dtype=float)
        out[name] = float(means.mean())
        out[f"{name}_ci95"] = float(np.sqrt((cis**2).sum()) / len(rows))
    return out


def summarize(rows: list[dict]) -> list[dict]:
    """Marginal means over horizons and sequences, plus breathing-regularity
    group means.  The slow-motion label joins neither regularity group."""
    ok = [r for r in rows if not r.get("error")]
    summary = []
    keyf = lambda r: (r["algorithm"], r["frequency"])
    for (algo, f), group in itertools.groupby(sorted(ok, key=keyf), key=keyf):
        group = list(group)
        summary.append(_combine_rows(group, "overall", algorithm=algo, frequency=f))
        for lbl, scope in (("regular", "regular"), ("irregular", "irregular")):
            sub = [r for r in group if r["label"] == lbl]
            if sub:
                summary.append(_combine_rows(sub, scope, algorithm=algo, frequency=f))
        for h in sorted({r["horizon_s"] for r in group}):
            sub = [r for r in group if r["horizon_s"] == h]
            summary.append(
                _combine_rows(sub, "by-horizon", algorithm=algo, frequency=f, horizon_s=h)
            )
        for s in sorted({r["sequence"] for r in group}):
            sub = [r for r in group if r["sequence"] == s]
            summary.append(
                _combine_rows(sub, "by-sequence", algorithm=algo, frequency=f, sequence=s)
            )
    return summary


def sweep(
    sequences: list[tuple[str, MarkerSequence]],
    spec: SweepSpec,
    grid: GridSpec,
    master_seed: int = 0,
    workers: int = 1,
) -> SweepResult:
    """Full protocol over (sequence, rate, horizon, algorithm) cells.

    Cells are independent work items; failures are recorded per cell and the
    sweep continues.  Results are deterministic for a fixed master seed
    regardless of worker count.
    """
    payloads = []
    for (name, seq), f in itertools.product(sequences, spec.frequencies):
        f = canonicalize_freq(f)
        for h_s in spec.horizons_for(f):
            for algorithm in spec.algorithms:
                payloads.append(
                    dict(
                        seq_name=name,
                        seq_native=seq,
                        algorithm=algorithm,
                        grid=grid,
                        f=f,
                        h_s=h_s,
                        master_seed=master_seed,
                        gamma=spec.gamma,
                    )
                )
    if workers > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_cell_payload, payloads))
    else:
        rows = [_run_cell_payload(p) for p in payloads]
    order = {
        (p["seq_name"], p["f"], p["h_s"], p["algorithm"]): i for i, p in enumerate(payloads)
    }
    rows.sort(key=lambda r: order[(r["sequence"], CANONICAL_FREQS.get(r["frequency"], float(r["frequency"])), r["horizon_s"], r["algorithm"])])
    return SweepResult(rows=rows, summary=summarize(rows))


# --------------------------------------------------------------------------
# Timing profile
# --------------------------------------------------------------------------


def synthetic_breathing(
    n_markers: int = 3,
    sample_rate_hz: float = 10.0,
    duration_s: float = 120.0,
    seed: int | np.random.SeedSequence = 0,
    noise_mm: float = 0.0,
    label: str = "regular",
) -> MarkerSequence:
    """Breathing-like test signal: two seeded sinusoids per coordinate.

    Shared ~0.25 Hz fundamental with a weaker second harmonic, per-coordinate
    amplitudes of a few to ~15 mm around random offsets, optional additive
    Gaussian noise.  Used by the timing profile and by synthetic experiments.
    """
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sample_rate_hz))
    t = np.arange(n) / sample_rate_hz
    width = 3 * n_markers
    f0 = 0.25
    pos = np.empty((n, width))
    for c in range(width):
        a1 = rng.uniform(5.0, 15.0)
        a2 = rng.uniform(1.0, 3.0)
        ph1, ph2 = rng.uniform(0.0, 2.0 * np.pi, 2)
        offset = rng.uniform(-20.0, 20.0)
        pos[:, c] = (
            offset
            + a1 * np.sin(2 * np.pi * f0 * t + ph1)
            + a2 * np.sin(2 * np.pi * 2 * f0 * t + ph2)
        )
    if noise_mm > 0:
        pos += rng.standard_normal(pos.shape) * noise_mm
    return MarkerSequence(sample_rate_hz=sample_rate_hz, times=t, positions=pos, label=label)


def time_profile(
    algorithms: tuple[str, ...],
    q_values: tuple[int, ...],
    shl_values_s: tuple[float, ...],
    sample_rate_hz: float,
    n_markers: int = 3,
    n_steps: int = 1000,
    warmup: int = 50,
    master_seed: int = 0,
) -> list[dict]:
    """Median per-step wall time per (algorithm, q, history) cell.

    Each online learner runs on a normalized breathing-like stream (so the
    arithmetic stays in its realistic operating range) long enough for
    `n_steps` timed steps after `warmup` untimed ones.  Offline baselines
    are fit once and their per-example prediction is timed instead.
    """
    if n_steps <= 0:
        return []
    rows = []
    width = 3 * n_markers
    with threadpool_limits(limits=1):
        return _profile_cells(
            algorithms, q_values, shl_values_s, sample_rate_hz, n_markers, n_steps,
            warmup, master_seed, rows, width,
        )


def _profile_cells(
    algorithms, q_values, shl_values_s, sample_rate_hz, n_markers, n_steps,
    warmup, master_seed, rows, width,
):
    for algorithm in algorithms:
        info = ALGORITHMS[algorithm]
        for shl_s in shl_values_s:
            history = steps_from_seconds(shl_s, sample_rate_hz)
            input_dim = 1 + history * width
            for q in q_values if info.uses_rnn else (None,):
                seed = seed_sequence(master_seed, "profile", algorithm, q, f"{shl_s:g}")
                rng = np.random.default_rng(seed)
                params = HyperParams(eta=0.01, shl_s=shl_s, q=q)
                n_total = warmup + n_steps
                seq = synthetic_breathing(
                    n_markers,
                    sample_rate_hz,
                    duration_s=(n_total + history + 1) / sample_rate_hz,
                    seed=seed,
                    noise_mm=0.2,
                )
                stats = NormStats(seq.positions.mean(axis=0), seq.positions.std(axis=0))
                ws = WindowSet(seq, stats, history, 1)
                elapsed = np.empty(n_steps)
                if info.offline:
                    sel = np.arange(min(warmup + 1, ws.n_examples))
                    U, Y = ws.inputs_for(sel), ws.targets_matrix()[sel]
                    if algorithm == "linreg":
                        model = linreg_fit(U, Y)
                    else:
                        model = svr_fit(U, Y, 100.0, 0.01, 100.0)
                    for i in range(n_steps):
                        u = ws.input(warmup + i)[None, :]
                        t0 = time.perf_counter()
                        model.predict(u)
                        elapsed[i] = time.perf_counter() - t0
                else:
                    forecaster = make_forecaster(algorithm, params, input_dim, width, rng)
                    for i in range(warmup):
                        forecaster.step(ws.input(i), ws.target(i))
                    for i in range(n_steps):
                        u, y = ws.input(warmup + i), ws.target(warmup + i)
                        t0 = time.perf_counter()
                        forecaster.step(u, y)
                        elapsed[i] = time.perf_counter() - t0
                rows.append(
                    {
                        "algorithm": algorithm,
                        "frequency": freq_key(sample_rate_hz),
                        "q": q,
                        "shl_s": shl_s,
                        "history_steps": history,
                        "median_step_s": float(np.median(elapsed)),
                        "n_steps": n_steps,
                    }
                )
    return rows
