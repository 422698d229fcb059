import numpy as np
import pytest

from respforecast.harness import synthetic_breathing
from respforecast.sequences import MarkerSequence


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def breathing_seq():
    """Three-marker breathing-like record, 10 Hz, 100 s."""
    return synthetic_breathing(n_markers=3, sample_rate_hz=10.0, duration_s=100.0, seed=7)


def make_sequence(positions, rate=10.0, label="regular"):
    positions = np.asarray(positions, dtype=float)
    times = np.arange(len(positions)) / rate
    return MarkerSequence(sample_rate_hz=rate, times=times, positions=positions, label=label)


def write_record(path, times, positions, header=True):
    with open(path, "w") as fh:
        if header:
            fh.write("t m1x m1y m1z m2x m2y m2z m3x m3y m3z\n")
        for t, row in zip(times, positions):
            fh.write(" ".join([f"{t:.17g}"] + [f"{v:.10g}" for v in row]) + "\n")
    return path
