"""Command-line entry point binding the pipeline.

Subcommands: resample records across rates, evaluate one configuration,
run a full sweep, profile per-step timing, and export tidy tables for
external plotting.  Every flag can also be set through an environment
variable with the RESPFORECAST_ prefix (e.g. RESPFORECAST_SEED).
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from pathlib import Path

import numpy as np

from .config import load_config, validate_config
from .harness import (
    ALGORITHMS,
    HyperParams,
    RESULT_COLUMNS,
    SUMMARY_COLUMNS,
    canonicalize_freq,
    evaluate,
    freq_key,
    resample_to,
    steps_from_seconds,
    time_profile,
)
from .metrics import METRIC_NAMES
from .sequences import DEFAULT_NOISE_GAMMA, load_sequence, save_sequence

ENV_PREFIX = "RESPFORECAST_"


def _env_default(name: str, fallback=None, cast=str):
    raw = os.environ.get(ENV_PREFIX + name.upper().replace("-", "_"))
    if raw is None:
        return fallback
    return cast(raw)


def _fmt(value) -> str:
    if value is None:
        return ""
    return str(value)


def write_csv(path: Path, rows: list[dict], columns: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row.get(col)) for col in columns])


def read_csv(path: Path) -> tuple[list[str], list[dict]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return list(reader.fieldnames or []), list(reader)


# --------------------------------------------------------------------------
# resample
# --------------------------------------------------------------------------


def cmd_resample(args) -> int:
    out_dir = Path(args.out)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create output directory {out_dir}: {exc}", file=sys.stderr)
        return 2
    for in_path in args.input:
        try:
            seq = load_sequence(in_path, n_markers=args.n_markers)
        except (OSError, ValueError) as exc:
            print(f"error: {in_path}: {exc}", file=sys.stderr)
            return 2
        for rate in args.rates:
            target = canonicalize_freq(rate)
            key = freq_key(target)
            resampled = resample_to(
                seq, target, gamma=args.gamma, master_seed=args.seed, tag=Path(in_path).stem
            )
            out_path = out_dir / f"{Path(in_path).stem}_{key}Hz.csv"
            meta = {
                "source": str(in_path),
                "source_rate_hz": seq.sample_rate_hz,
                "target_rate_hz": target,
                "gamma": args.gamma,
                "seed": args.seed,
            }
            try:
                save_sequence(resampled, out_path, metadata=meta)
            except OSError as exc:
                print(f"error: cannot write {out_path}: {exc}", file=sys.stderr)
                return 2
            print(f"wrote {out_path} ({len(resampled)} samples at {key} Hz)")
    return 0


# --------------------------------------------------------------------------
# run-one
# --------------------------------------------------------------------------

_RNN_ALGOS = ("rtrl", "uoro", "snap1", "dni", "dni-simple", "frozen-rnn")


def _validate_run_one(args) -> list[str]:
    problems = []
    if not Path(args.data).exists():
        problems.append(f"dataset path not found: {args.data}")
    if args.algo not in ALGORITHMS:
        problems.append(f"unknown algorithm {args.algo!r} (known: {sorted(ALGORITHMS)})")
        return problems
    if args.freq <= 0:
        problems.append(f"frequency must be positive, got {args.freq}")
    if args.horizon <= 0:
        problems.append(f"horizon must be positive, got {args.horizon}")
    else:
        try:
            steps_from_seconds(args.horizon, canonicalize_freq(args.freq))
        except ValueError as exc:
            problems.append(str(exc))
    need = []
    if args.algo in _RNN_ALGOS:
        need = [("eta", args.eta), ("shl", args.shl), ("q", args.q)]
    elif args.algo == "lms":
        need = [("eta", args.eta), ("shl", args.shl)]
    elif args.algo == "linreg":
        need = [("shl", args.shl)]
    elif args.algo == "svr":
        need = [
            ("shl", args.shl),
            ("svr-sqrt2-sigma", args.svr_sqrt2_sigma),
            ("svr-epsilon", args.svr_epsilon),
            ("svr-c", args.svr_c),
        ]
    for flag, value in need:
        if value is None:
            problems.append(f"--{flag} is required for algorithm {args.algo}")
    return problems


def cmd_run_one(args) -> int:
    problems = _validate_run_one(args)
    if problems:
        for p in problems:
            print(f"config error: {p}", file=sys.stderr)
        return 1
    seq = load_sequence(args.data, n_markers=args.n_markers, label=args.label)
    f = canonicalize_freq(args.freq)
    seq = resample_to(seq, f, gamma=args.gamma, master_seed=args.seed, tag=Path(args.data).stem)
    h_steps = steps_from_seconds(args.horizon, seq.sample_rate_hz)
    params = HyperParams(
        eta=args.eta,
        shl_s=args.shl,
        q=args.q,
        svr_sqrt2_sigma=args.svr_sqrt2_sigma,
        svr_epsilon=args.svr_epsilon,
        svr_c=args.svr_c,
        tau=args.tau,
        sigma_init=args.sigma_init,
        eta_a=args.eta_a,
    )
    n_runs = args.n_test if ALGORITHMS[args.algo].stochastic else 1
    report = evaluate(seq, args.algo, params, h_steps, args.seed, n_runs=n_runs)

    print(f"algorithm: {args.algo}   sequence: {Path(args.data).name}   "
          f"rate: {freq_key(f)} Hz   horizon: {args.horizon:g} s ({h_steps} steps)   "
          f"runs: {report.n_runs}")
    print(f"{'metric':<14}{'mean':>12}{'ci95':>12}")
    for name in METRIC_NAMES:
        v = report.value(name)
        print(f"{name:<14}{v.mean:>12.4f}{v.ci95:>12.4f}")

    if args.out:
        row = {
            "sequence": Path(args.data).stem,
            "label": args.label,
            "algorithm": args.algo,
            "frequency": freq_key(f),
            "horizon_s": args.horizon,
            "horizon_steps": h_steps,
            "cv_rmse_mm": None,
            "n_runs": report.n_runs,
            "error": None,
        }
        row.update(params.to_dict())
        for name in METRIC_NAMES:
            row[name] = report.value(name).mean
            row[f"{name}_ci95"] = report.value(name).ci95
        write_csv(Path(args.out), [row], RESULT_COLUMNS)
        print(f"wrote {args.out}")

    if args.dump_predictions:
        _dump_predictions(seq, args, params, h_steps)
        print(f"wrote {args.dump_predictions}")
    return 0


def _dump_predictions(seq, args, params: HyperParams, h_steps: int) -> None:
    """One deterministic run; tidy (time, marker, axis, truth, prediction) rows."""
    from .harness import _offline_fit_predict, _online_pass, seed_sequence

    rng = np.random.default_rng(seed_sequence(args.seed, "dump", args.algo))
    if ALGORITHMS[args.algo].offline:
        part_lo = 0
        pred_mm, tidx, _ = _offline_fit_predict(seq, args.algo, params, h_steps, eval_lo=part_lo)
    else:
        pred_mm, tidx, _ = _online_pass(seq, args.algo, params, h_steps, rng)
    rows = []
    axes = "xyz"
    for k, ti in enumerate(tidx):
        for j in range(seq.n_markers):
            for a in range(3):
                rows.append(
                    {
                        "t_s": seq.times[ti],
                        "marker": j + 1,
                        "axis": axes[a],
                        "truth_mm": seq.positions[ti, 3 * j + a],
                        "prediction_mm": pred_mm[k, 3 * j + a],
                    }
                )
    write_csv(
        Path(args.dump_predictions), rows, ["t_s", "marker", "axis", "truth_mm", "prediction_mm"]
    )


# --------------------------------------------------------------------------
# sweep
# --------------------------------------------------------------------------


def cmd_sweep(args) -> int:
    from .harness import sweep

    try:
        cfg = load_config(args.config)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.seed is not None:
        cfg.seed = args.seed
    if args.preset:
        cfg.preset = args.preset
    if args.out:
        cfg.out_dir = args.out
    if args.workers:
        cfg.workers = args.workers
    if args.algos:
        cfg.algorithms = args.algos.split(",")
    if args.freqs:
        cfg.frequencies = [float(x) for x in args.freqs.split(",")]
    if args.horizons:
        horizons = [float(x) for x in args.horizons.split(",")]
        cfg.horizons = {freq_key(canonicalize_freq(f)): horizons for f in cfg.frequencies}
    problems = validate_config(cfg)
    if problems:
        for p in problems:
            print(f"config error: {p}", file=sys.stderr)
        return 1

    sequences = [
        (s.name, load_sequence(s.path, n_markers=cfg.n_markers, label=s.label))
        for s in cfg.sequences
    ]
    workers = cfg.workers if cfg.workers else (os.cpu_count() or 1)
    result = sweep(sequences, cfg.sweep_spec(), cfg.grid_spec(), cfg.seed, workers=workers)

    out_dir = Path(cfg.out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        write_csv(out_dir / "results.csv", result.rows, RESULT_COLUMNS)
        write_csv(out_dir / "summary.csv", result.summary, SUMMARY_COLUMNS)
    except OSError as exc:
        print(f"error: cannot write results to {out_dir}: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {out_dir / 'results.csv'} ({len(result.rows)} cells) and "
          f"{out_dir / 'summary.csv'} ({len(result.summary)} aggregate rows)")
    if result.n_failed:
        for row in result.failures():
            print(
                f"cell failed: {row['sequence']} {row['algorithm']} "
                f"{row['frequency']} Hz h={row['horizon_s']}: {row['error']}",
                file=sys.stderr,
            )
        return 1
    return 0


# --------------------------------------------------------------------------
# profile
# --------------------------------------------------------------------------


def cmd_profile(args) -> int:
    algos = tuple(args.algos.split(","))
    for a in algos:
        if a not in ALGORITHMS:
            print(f"config error: unknown algorithm {a!r}", file=sys.stderr)
            return 1
    rows = []
    for f in args.freqs:
        rows.extend(
            time_profile(
                algos,
                q_values=tuple(args.qs),
                shl_values_s=tuple(args.shls),
                sample_rate_hz=canonicalize_freq(f),
                n_steps=args.steps,
                master_seed=args.seed,
            )
        )
    out = Path(args.out)
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        write_csv(
            out,
            rows,
            ["algorithm", "frequency", "q", "shl_s", "history_steps", "median_step_s", "n_steps"],
        )
    except OSError as exc:
        print(f"error: cannot write {out}: {exc}", file=sys.stderr)
        return 2
    # Summary grid: one mean per (algorithm, frequency), milliseconds.
    print(f"{'algorithm':<14}" + "".join(f"{freq_key(canonicalize_freq(f)) + ' Hz':>12}" for f in args.freqs))
    for a in algos:
        cells = []
        for f in args.freqs:
            key = freq_key(canonicalize_freq(f))
            vals = [r["median_step_s"] for r in rows if r["algorithm"] == a and r["frequency"] == key]
            cells.append(f"{1e3 * float(np.mean(vals)):>12.4f}" if vals else f"{'-':>12}")
        print(f"{a:<14}" + "".join(cells))
    print(f"wrote {out}")
    return 0


# --------------------------------------------------------------------------
# export
# --------------------------------------------------------------------------

EXPORT_COLUMNS = [
    "sequence", "label", "algorithm", "frequency", "horizon_s", "metric", "value", "ci95",
]


def cmd_export(args) -> int:
    try:
        _, rows = read_csv(Path(args.results))
    except OSError as exc:
        print(f"error: cannot read {args.results}: {exc}", file=sys.stderr)
        return 2
    tidy = []
    for row in rows:
        if row.get("error"):
            continue
        for name in METRIC_NAMES:
            tidy.append(
                {
                    "sequence": row.get("sequence"),
                    "label": row.get("label"),
                    "algorithm": row.get("algorithm"),
                    "frequency": row.get("frequency"),
                    "horizon_s": row.get("horizon_s"),
                    "metric": name,
                    "value": row.get(name),
                    "ci95": row.get(f"{name}_ci95"),
                }
            )
    try:
        write_csv(Path(args.out), tidy, EXPORT_COLUMNS)
    except OSError as exc:
        print(f"error: cannot write {args.out}: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {args.out} ({len(tidy)} rows)")
    return 0


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="respforecast",
        description="Online-learning RNN forecasting of respiratory marker motion",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--seed", type=int, default=_env_default("seed", 0, int),
                       help="master seed; all randomness derives from it")

    p = sub.add_parser("resample", help="resample records across sampling rates")
    p.add_argument("--input", action="append", required=True, help="input record (repeatable)")
    p.add_argument("--out", default=_env_default("out", "resampled"), help="output directory")
    p.add_argument("--rates", type=float, nargs="+", default=[10.0 / 3.0, 10.0, 30.0])
    p.add_argument("--gamma", type=float, default=_env_default("gamma", DEFAULT_NOISE_GAMMA, float),
                   help="noise std as a fraction of each coordinate's range")
    p.add_argument("--n-markers", type=int, default=3)
    add_common(p)
    p.set_defaults(func=cmd_resample)

    p = sub.add_parser("run-one", help="evaluate a single configuration")
    p.add_argument("--data", required=True)
    p.add_argument("--algo", required=True)
    p.add_argument("--freq", type=float, required=True)
    p.add_argument("--horizon", type=float, required=True, help="horizon in seconds")
    p.add_argument("--label", default="regular", choices=["regular", "irregular", "slow"])
    p.add_argument("--eta", type=float)
    p.add_argument("--shl", type=float, help="signal history length in seconds")
    p.add_argument("--q", type=int, help="hidden layer size")
    p.add_argument("--svr-sqrt2-sigma", type=float)
    p.add_argument("--svr-epsilon", type=float)
    p.add_argument("--svr-c", type=float)
    p.add_argument("--tau", type=float, default=100.0)
    p.add_argument("--sigma-init", type=float, default=0.02)
    p.add_argument("--eta-a", type=float, default=0.002)
    p.add_argument("--n-test", type=int, default=_env_default("n_test", 10, int))
    p.add_argument("--n-markers", type=int, default=3)
    p.add_argument("--gamma", type=float, default=DEFAULT_NOISE_GAMMA)
    p.add_argument("--out", default=_env_default("out"))
    p.add_argument("--dump-predictions", help="write per-step truth/prediction CSV")
    add_common(p)
    p.set_defaults(func=cmd_run_one)

    p = sub.add_parser("sweep", help="run the full cross-validation + evaluation protocol")
    p.add_argument("--config", required=True)
    p.add_argument("--preset", choices=["paper", "desk"], default=_env_default("preset"))
    p.add_argument("--algos", default=_env_default("algos"), help="comma-separated override")
    p.add_argument("--freqs", default=_env_default("freqs"), help="comma-separated override")
    p.add_argument("--horizons", default=_env_default("horizons"),
                   help="comma-separated horizons in seconds, applied to every swept rate")
    p.add_argument("--out", default=_env_default("out"))
    p.add_argument("--workers", type=int,
                   default=_env_default("workers", None, int) or None)
    p.add_argument("--seed", type=int, default=_env_default("seed", None, int))
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("profile", help="per-step wall-time profile")
    p.add_argument("--algos", default="rtrl,uoro,snap1,dni")
    p.add_argument("--freqs", type=float, nargs="+", default=[10.0 / 3.0, 10.0, 30.0])
    p.add_argument("--qs", type=int, nargs="+", default=[30, 60])
    p.add_argument("--shls", type=float, nargs="+", default=[1.2])
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--out", default=_env_default("out", "timings.csv"))
    add_common(p)
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("export", help="re-shape a results file into tidy long format")
    p.add_argument("--results", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
