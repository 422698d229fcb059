"""Marker-trajectory records: loading, resampling, normalization, windowing.

A record holds the 3D positions of ``n_markers`` reflective markers sampled
at a fixed rate, stored in millimeters.  The functions here turn such a
record into the supervised input/output pairs consumed by the forecasting
algorithms: a sliding window of past positions (with a leading bias 1) maps
to the positions one horizon ahead.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

VALID_LABELS = ("regular", "irregular", "slow")

#: Default proportionality constant between a coordinate's peak-to-peak range
#: and the standard deviation of the noise injected during upsampling.
DEFAULT_NOISE_GAMMA = 1.0 / 150.0

#: Tolerance on time-grid uniformity, in seconds.
TIME_GRID_TOL = 1e-9


class ParseError(ValueError):
    """A record file could not be parsed into a valid marker sequence."""


class DegenerateDataError(ValueError):
    """The data cannot support the requested statistic (e.g. zero variance)."""


@dataclass(frozen=True)
class MarkerSequence:
    """Time-indexed 3D positions of external markers.

    Attributes:
        sample_rate_hz: Sampling rate of the record.
        times: Sample times in seconds, strictly increasing and uniform.
        positions: Array of shape (n_steps, 3 * n_markers), millimeters.
            Columns are ordered marker-major: m1x, m1y, m1z, m2x, ..., mNz.
        label: Breathing-regularity tag, one of 'regular', 'irregular', 'slow'.
    """

    sample_rate_hz: float
    times: np.ndarray
    positions: np.ndarray
    label: str = "regular"

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        positions = np.asarray(self.positions, dtype=float)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "positions", positions)
        if self.sample_rate_hz <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate_hz}")
        if self.label not in VALID_LABELS:
            raise ValueError(f"label must be one of {VALID_LABELS}, got {self.label!r}")
        if times.ndim != 1 or positions.ndim != 2:
            raise ValueError("times must be 1-D and positions 2-D")
        if len(times) != len(positions):
            raise ValueError(
                f"times ({len(times)}) and positions ({len(positions)}) disagree in length"
            )
        if positions.shape[1] % 3 != 0 or positions.shape[1] == 0:
            raise ValueError(
                f"positions must have 3 coordinates per marker, got {positions.shape[1]} columns"
            )
        if not np.all(np.isfinite(positions)):
            raise ValueError("positions contain non-finite values")
        if len(times) > 1:
            dt = np.diff(times)
            if np.any(dt <= 0):
                raise ValueError("times must be strictly increasing")
            if np.any(np.abs(dt - 1.0 / self.sample_rate_hz) > TIME_GRID_TOL):
                raise ValueError(
                    f"times are not uniform at {self.sample_rate_hz} Hz within {TIME_GRID_TOL} s"
                )

    @property
    def n_markers(self) -> int:
        return self.positions.shape[1] // 3

    @property
    def width(self) -> int:
        """Number of coordinate traces (3 * n_markers)."""
        return self.positions.shape[1]

    def __len__(self) -> int:
        return len(self.times)

    @property
    def duration_s(self) -> float:
        return float(self.times[-1] - self.times[0])


@dataclass(frozen=True)
class NormStats:
    """Per-coordinate mean and standard deviation of the training interval."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        std = np.asarray(self.std, dtype=float)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)
        if mean.shape != std.shape:
            raise ValueError("mean/std shape mismatch")
        if np.any(std <= 0):
            raise DegenerateDataError("every std component must be strictly positive")


@dataclass(frozen=True)
class SequencePartition:
    """Index ranges splitting a record into training / cross-validation / test.

    Online learners warm up on the first 30 s and are scored for model
    selection on the next 30 s; offline learners get 54 s of training data
    and 6 s of cross-validation.  Everything after the first minute is the
    test interval in both cases.
    """

    train: range
    cross_validation: range
    test: range

    def __post_init__(self):
        t, c, s = self.train, self.cross_validation, self.test
        if not (t.start == 0 and t.stop == c.start and c.stop == s.start):
            raise ValueError("partition ranges must be contiguous and ordered")
        if t.stop <= t.start or c.stop <= c.start:
            raise ValueError("train and cross-validation ranges must be non-empty")

    @classmethod
    def for_sequence(
        cls,
        seq: MarkerSequence,
        offline: bool = False,
        train_s: float | None = None,
        cv_end_s: float = 60.0,
    ) -> "SequencePartition":
        """Builds the standard partition for a record.

        Args:
            seq: The sequence to partition.
            offline: If True, uses the 54 s / 6 s split for batch-fit models
                instead of the 30 s / 30 s split for online learners.
            train_s: Optional override of the training-interval length.
            cv_end_s: End of the development (train + cv) period in seconds.
        """
        f = seq.sample_rate_hz
        if train_s is None:
            train_s = 54.0 if offline else cv_end_s / 2.0
        train_end = int(round(train_s * f))
        cv_end = int(round(cv_end_s * f))
        n = len(seq)
        if cv_end > n:
            raise ValueError(
                f"sequence of {n} samples ({seq.duration_s:.1f} s) is shorter than "
                f"the {cv_end_s:.0f} s development period"
            )
        return cls(range(0, train_end), range(train_end, cv_end), range(cv_end, n))


@dataclass(frozen=True)
class WindowedExample:
    """One supervised example: bias-augmented input window and its target."""

    input: np.ndarray
    target: np.ndarray
    step_index: int


def _parse_row(tokens: list[str], row_num: int, n_cols: int) -> list[float]:
    if len(tokens) != n_cols:
        raise ParseError(
            f"row {row_num}: expected {n_cols - 1} coordinates after the timestamp, "
            f"got {len(tokens) - 1}"
        )
    try:
        return [float(tok) for tok in tokens]
    except ValueError as exc:
        raise ParseError(f"row {row_num}: {exc}") from None


def load_sequence(path: str | Path, n_markers: int = 3, label: str = "regular") -> MarkerSequence:
    """Loads a delimiter-separated marker record.

    Expected layout: one row per time step, a timestamp in seconds followed
    by 3 * n_markers coordinates in millimeters.  Commas or whitespace both
    work as delimiters; a single non-numeric header line is skipped.

    Raises:
        ParseError: malformed row, non-monotone time, or NaN coordinate,
            naming the offending row number.
    """
    path = Path(path)
    n_cols = 1 + 3 * n_markers
    rows = []
    row_nums = []  # file line number of each data row, for error messages
    with open(path) as fh:
        for row_num, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            tokens = line.replace(",", " ").split()
            if row_num == 1:
                try:
                    float(tokens[0])
                except ValueError:
                    continue  # header line
            rows.append(_parse_row(tokens, row_num, n_cols))
            row_nums.append(row_num)
    if len(rows) < 2:
        raise ParseError(f"{path}: need at least 2 data rows, got {len(rows)}")
    data = np.array(rows, dtype=float)
    times, positions = data[:, 0], data[:, 1:]
    if not np.all(np.isfinite(data)):
        bad = int(np.where(~np.isfinite(data).all(axis=1))[0][0])
        raise ParseError(f"row {row_nums[bad]}: non-finite value")
    dt = np.diff(times)
    if np.any(dt <= 0):
        bad = int(np.where(dt <= 0)[0][0])
        raise ParseError(f"row {row_nums[bad + 1]}: timestamps not strictly increasing")
    rate = 1.0 / float(np.median(dt))
    try:
        return MarkerSequence(sample_rate_hz=rate, times=times, positions=positions, label=label)
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None


def save_sequence(seq: MarkerSequence, path: str | Path, metadata: dict | None = None) -> None:
    """Writes a record back to disk; optional sidecar JSON next to it."""
    path = Path(path)
    data = np.column_stack([seq.times, seq.positions])
    header = "t " + " ".join(
        f"m{i + 1}{axis}" for i in range(seq.n_markers) for axis in "xyz"
    )
    # Timestamps need full precision to survive a round trip; positions are
    # stored at one-decimal precision so a short format suffices.
    fmt = ["%.17g"] + ["%.10g"] * seq.width
    np.savetxt(path, data, header=header, fmt=fmt)
    if metadata is not None:
        sidecar = path.with_suffix(path.suffix + ".meta.json")
        sidecar.write_text(json.dumps(metadata, indent=2, sort_keys=True) + "\n")


def downsample(seq: MarkerSequence, factor: int) -> MarkerSequence:
    """Keeps one sample every `factor` time steps, dividing the rate."""
    if int(factor) != factor or factor < 1:
        raise ValueError(f"downsampling factor must be a positive integer, got {factor}")
    factor = int(factor)
    if factor == 1:
        return seq
    return MarkerSequence(
        sample_rate_hz=seq.sample_rate_hz / factor,
        times=seq.times[::factor],
        positions=seq.positions[::factor],
        label=seq.label,
    )


def _truncate_1dp(values: np.ndarray) -> np.ndarray:
    """Truncates toward zero to one decimal place (not rounding)."""
    return np.trunc(values * 10.0) / 10.0


def upsample_with_noise(
    seq: MarkerSequence,
    target_hz: float,
    gamma: float = DEFAULT_NOISE_GAMMA,
    rng_seed: int | np.random.Generator = 0,
) -> MarkerSequence:
    """Upsamples a record by natural cubic-spline interpolation plus noise.

    The new grid must be an integer multiple of the source rate.  Samples
    that coincide with the source grid keep their original values.  Newly
    interpolated samples receive zero-mean Gaussian noise whose per-coordinate
    standard deviation is ``gamma`` times that coordinate's peak-to-peak range,
    emulating sensor noise and local breathing unsteadiness.  All output
    values are then truncated toward zero to one decimal place, matching the
    precision of the source records.
    """
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    ratio = target_hz / seq.sample_rate_hz
    factor = int(round(ratio))
    if factor < 1 or abs(ratio - factor) > 1e-9:
        raise ValueError(
            f"target rate {target_hz} Hz is not an integer multiple of {seq.sample_rate_hz} Hz"
        )
    rng = np.random.default_rng(rng_seed)
    n_out = (len(seq) - 1) * factor + 1
    new_times = seq.times[0] + np.arange(n_out) / target_hz
    spline = CubicSpline(seq.times, seq.positions, axis=0, bc_type="natural")
    values = spline(new_times)

    on_grid = np.zeros(n_out, dtype=bool)
    on_grid[::factor] = True
    values[on_grid] = seq.positions
    sigma = gamma * (seq.positions.max(axis=0) - seq.positions.min(axis=0))
    noise = rng.standard_normal((int((~on_grid).sum()), seq.width)) * sigma
    values[~on_grid] += noise

    return MarkerSequence(
        sample_rate_hz=float(target_hz),
        times=new_times,
        positions=_truncate_1dp(values),
        label=seq.label,
    )


def fit_norm_stats(seq: MarkerSequence, part: SequencePartition) -> NormStats:
    """Per-coordinate mean/std over the training interval only.

    Raises:
        DegenerateDataError: some coordinate is constant over the interval.
    """
    segment = seq.positions[part.train.start : part.train.stop]
    if len(segment) == 0:
        raise ValueError("training range is empty")
    mean = segment.mean(axis=0)
    std = segment.std(axis=0)
    if np.any(std <= 0):
        bad = int(np.argmin(std))
        raise DegenerateDataError(
            f"coordinate {bad} has zero variance over the training interval"
        )
    return NormStats(mean=mean, std=std)


def normalize(values: np.ndarray, stats: NormStats) -> np.ndarray:
    return (values - stats.mean) / stats.std


def denormalize(pred: np.ndarray, stats: NormStats) -> np.ndarray:
    """Exact affine inverse of `normalize` (back to millimeters)."""
    pred = np.asarray(pred, dtype=float)
    if pred.shape[-1] != stats.mean.shape[0]:
        raise ValueError(
            f"prediction width {pred.shape[-1]} does not match stats width {stats.mean.shape[0]}"
        )
    return stats.std * pred + stats.mean


class WindowSet:
    """Lazy view of the supervised examples of one (history length, horizon).

    Example ``n`` pairs the normalized positions at steps ``n .. n+L-1``
    (flattened time-major behind a leading bias 1) with the normalized
    positions at step ``n + L + h - 1``.
    """

    def __init__(self, seq: MarkerSequence, stats: NormStats, history: int, horizon: int):
        if history < 1 or horizon < 1:
            raise ValueError("history length and horizon must both be >= 1")
        self.history = int(history)
        self.horizon = int(horizon)
        self.width = seq.width
        self._norm = normalize(seq.positions, stats)
        self.n_examples = max(0, len(seq) - self.history - self.horizon + 1)
        self.input_dim = 1 + self.history * self.width
        self.output_dim = self.width

    def input(self, n: int) -> np.ndarray:
        u = np.empty(self.input_dim)
        u[0] = 1.0
        u[1:] = self._norm[n : n + self.history].ravel()
        return u

    def target(self, n: int) -> np.ndarray:
        return self._norm[self.target_index(n)]

    def target_index(self, n: int) -> int:
        return n + self.history + self.horizon - 1

    @property
    def target_indices(self) -> np.ndarray:
        return np.arange(self.n_examples) + self.history + self.horizon - 1

    def targets_matrix(self) -> np.ndarray:
        """All targets stacked, shape (n_examples, width)."""
        return self._norm[self.history + self.horizon - 1 :][: self.n_examples]

    def inputs_for(self, indices) -> np.ndarray:
        """Materializes the input windows of selected examples.

        Intended for batch-fit models on short training spans; online passes
        should call `input` one step at a time instead.
        """
        indices = np.asarray(indices, dtype=int)
        out = np.empty((len(indices), self.input_dim))
        for k, n in enumerate(indices):
            out[k] = self.input(int(n))
        return out


def make_windows(seq: MarkerSequence, stats: NormStats, history: int, horizon: int):
    """Yields the WindowedExample stream for one (L, h) configuration.

    A sequence too short for even one example yields nothing (after a
    warning) so that grid search can skip infeasible configurations.
    """
    ws = WindowSet(seq, stats, history, horizon)
    if ws.n_examples == 0:
        warnings.warn(
            f"sequence of {len(seq)} samples is too short for history={history}, "
            f"horizon={horizon}; no examples produced",
            stacklevel=2,
        )
        return
    for n in range(ws.n_examples):
        yield WindowedExample(input=ws.input(n), target=ws.target(n), step_index=n)
