"""Experiment configuration: a small YAML schema mapped onto the harness."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .harness import ALGORITHMS, CANONICAL_FREQS, GridSpec, SweepSpec, canonicalize_freq
from .sequences import DEFAULT_NOISE_GAMMA, VALID_LABELS


@dataclass
class SequenceSpec:
    path: str
    label: str = "regular"
    name: str = ""

    def __post_init__(self):
        if not self.name:
            self.name = Path(self.path).stem


@dataclass
class ExperimentConfig:
    sequences: list[SequenceSpec] = field(default_factory=list)
    algorithms: list[str] = field(default_factory=lambda: ["snap1"])
    preset: str = "desk"
    frequencies: list[float] = field(default_factory=lambda: list(CANONICAL_FREQS.values()))
    horizons: dict | None = None  # frequency key -> list of horizons in seconds
    seed: int = 0
    out_dir: str = "results"
    workers: int | None = None  # None -> one worker per logical core
    n_markers: int = 3
    gamma: float = DEFAULT_NOISE_GAMMA
    n_cv: int | None = None
    n_test: int | None = None

    def sweep_spec(self) -> SweepSpec:
        return SweepSpec(
            frequencies=tuple(canonicalize_freq(f) for f in self.frequencies),
            algorithms=tuple(self.algorithms),
            horizons_s={k: tuple(v) for k, v in self.horizons.items()} if self.horizons else None,
            gamma=self.gamma,
        )

    def grid_spec(self) -> GridSpec:
        return GridSpec(preset=self.preset, n_cv=self.n_cv, n_test=self.n_test)


def load_config(path: str | Path) -> ExperimentConfig:
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: top level must be a mapping")
    sequences = [
        SequenceSpec(**entry) if isinstance(entry, dict) else SequenceSpec(path=entry)
        for entry in raw.pop("sequences", [])
    ]
    known = {f.name for f in ExperimentConfig.__dataclass_fields__.values()}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"{path}: unknown config keys {sorted(unknown)}")
    return ExperimentConfig(sequences=sequences, **raw)


def validate_config(cfg: ExperimentConfig) -> list[str]:
    """Returns every violation found (empty list means valid)."""
    problems = []
    if not cfg.sequences:
        problems.append("no sequences declared")
    for s in cfg.sequences:
        if not Path(s.path).exists():
            problems.append(f"sequence file not found: {s.path}")
        if s.label not in VALID_LABELS:
            problems.append(f"sequence {s.name}: label {s.label!r} not in {VALID_LABELS}")
    for a in cfg.algorithms:
        if a not in ALGORITHMS:
            problems.append(f"unknown algorithm {a!r} (known: {sorted(ALGORITHMS)})")
    if cfg.preset not in ("paper", "desk"):
        problems.append(f"preset must be 'paper' or 'desk', got {cfg.preset!r}")
    for f in cfg.frequencies:
        if not f > 0:
            problems.append(f"frequency must be positive, got {f}")
    if cfg.n_markers < 1:
        problems.append(f"n_markers must be >= 1, got {cfg.n_markers}")
    if cfg.gamma <= 0:
        problems.append(f"gamma must be positive, got {cfg.gamma}")
    if cfg.workers is not None and cfg.workers < 1:
        problems.append(f"workers must be >= 1, got {cfg.workers}")
    return problems
