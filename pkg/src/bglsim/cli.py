"""Command-line interface: presets, config files, runs and comparisons.

Configs are flat INI files with one section per concern (backend, policy,
integrator, output).  ``run`` executes a preset or config and writes the
trajectory CSV, a manifest, a gnuplot script and rendered figures into the
output directory.  ``compare`` interpolates two trajectory CSVs onto common
sample times and reports per-column deviations.

Exit codes: 0 run completed (or comparison passed), 1 configuration or usage
error (comparison failed), 3 controller breakdown ended the run, 4 numerical
failure (step-size underflow).
"""

from __future__ import annotations

import argparse
import configparser
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, report
from .engine import ConfigError, RunConfig, evolve
from .control import VARIANTS
from .observables import CSV_COLUMNS

__all__ = ["main", "PRESETS", "ExperimentPreset", "build_config", "compare_csv"]

EXIT_COMPLETED = 0
EXIT_ERROR = 1
EXIT_BREAKDOWN = 3
EXIT_NUMERICAL = 4


@dataclass
class ExperimentPreset:
    """A ready-to-run configuration with its expected outcome."""

    name: str
    description: str
    config: dict
    expected: dict = field(default_factory=dict)


PRESETS = {
    "fig2": ExperimentPreset(
        name="fig2",
        description="exact many-body run with the coherence-freezing controller (N=110)",
        config=dict(
            backend="ExactBH", variant="FeedbackMB", gamma=0.5, j12=1.0, g=0.1,
            n=5.0, n0=50.0, n3=50.0, n_particles=110, n_embedded=10,
            t_end=10.0, sample_dt=0.1,
        ),
        expected=dict(breakdown_window="(7, 9)", breakdown_cause="jt23"),
    ),
    "fig4": ExperimentPreset(
        name="fig4",
        description="exact many-body run with the stationary-current controller (N=110)",
        config=dict(
            backend="ExactBH", variant="FeedbackBGL", gamma=0.5, j12=1.0, g=0.1,
            n=5.0, n0=50.0, n3=50.0, n_particles=110, n_embedded=10,
            t_end=10.0, sample_dt=0.1,
        ),
        expected=dict(
            breakdown_cause="jt01",
            stationary="n1, n2, jt12 within 1% until breakdown",
        ),
    ),
    "fig5": ExperimentPreset(
        name="fig5",
        description="moment-hierarchy run with the stationary-current controller (N=1100)",
        config=dict(
            backend="BBR", variant="FeedbackBGL", gamma=0.5, j12=1.0, g=0.1,
            n=50.0, n0=500.0, n3=500.0, n_particles=1100, n_embedded=100,
            t_end=10.0, sample_dt=0.05,
        ),
        expected=dict(breakdown_window="(9, 10)", purity="P4, P2 start at 1"),
    ),
    "mf-reference": ExperimentPreset(
        name="mf-reference",
        description="mean-field lattice with the closed-form parameter schedule",
        config=dict(
            backend="FourModeMF", variant="AnalyticMF", gamma=0.5, j12=1.0, g=0.1,
            n=5.0, n0=50.0, n3=50.0, t_end=10.0, sample_dt=0.05,
        ),
        expected=dict(breakdown_window="10 +- 0.05", breakdown_cause="jt01"),
    ),
}


# ---------------------------------------------------------------------------
# config files
# ---------------------------------------------------------------------------

_SECTION_KEYS = {
    "backend": {
        "kind": str, "n": float, "n0": float, "n3": float,
        "N": int, "N2": int, "t_end": float, "memory_cap_mb": float,
    },
    "policy": {
        "variant": str, "gamma": float, "j12": float, "g": float,
        "epsilon_breakdown": float,
    },
    "integrator": {"abs_tol": float, "rel_tol": float},
    "output": {"sample_dt": float, "figures": bool},
}

_KEY_TO_FIELD = {
    ("backend", "kind"): "backend",
    ("backend", "n"): "n",
    ("backend", "n0"): "n0",
    ("backend", "n3"): "n3",
    ("backend", "N"): "n_particles",
    ("backend", "N2"): "n_embedded",
    ("backend", "t_end"): "t_end",
    ("backend", "memory_cap_mb"): "memory_cap_mb",
    ("policy", "variant"): "variant",
    ("policy", "gamma"): "gamma",
    ("policy", "j12"): "j12",
    ("policy", "g"): "g",
    ("policy", "epsilon_breakdown"): "epsilon_breakdown",
    ("integrator", "abs_tol"): "abs_tol",
    ("integrator", "rel_tol"): "rel_tol",
    ("output", "sample_dt"): "sample_dt",
}


def parse_config_file(path: Path) -> tuple[dict, bool]:
    """Read a flat INI config; returns (RunConfig kwargs, render figures)."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    # keep case of keys like N and N2
    parser.optionxform = str
    try:
        read = parser.read(path)
    except configparser.Error as exc:
        # configparser reports the offending line in its message
        raise ConfigError(str(exc)) from None
    if not read:
        raise ConfigError(f"config file not found: {path}")
    kwargs: dict = {}
    figures = True
    for section in parser.sections():
        if section not in _SECTION_KEYS:
            raise ConfigError(f"[{section}]: unknown config section")
        for key, raw in parser[section].items():
            if key not in _SECTION_KEYS[section]:
                raise ConfigError(f"[{section}] {key}: unknown config key")
            kind = _SECTION_KEYS[section][key]
            try:
                if kind is bool:
                    value = parser[section].getboolean(key)
                else:
                    value = kind(raw)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key} = {raw!r}: {exc}") from None
            if (section, key) == ("output", "figures"):
                figures = value
            else:
                field_name = _KEY_TO_FIELD[(section, key)]
                kwargs[field_name] = value
    if kwargs.get("variant") in ("", "none", "None"):
        kwargs["variant"] = None
    return kwargs, figures


def build_config(kwargs: dict) -> RunConfig:
    required = ("backend", "gamma", "j12", "g", "n", "n0", "n3")
    missing = [k for k in required if k not in kwargs]
    if missing:
        raise ConfigError(f"missing required config keys: {', '.join(missing)}")
    kwargs.setdefault("variant", None)
    try:
        config = RunConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    config.validate()
    return config


# ---------------------------------------------------------------------------
# comparison
# ---------------------------------------------------------------------------

def compare_csv(path_a: Path, path_b: Path, columns: list[str] | None = None):
    """Interpolate both trajectories onto common times within the overlap
    and report (max, rms) deviation per column."""
    table_a = report.read_csv(path_a)
    table_b = report.read_csv(path_b)
    t_a, t_b = table_a["t"], table_b["t"]
    lo = max(t_a.min(), t_b.min())
    hi = min(t_a.max(), t_b.max())
    if hi <= lo:
        raise ConfigError(
            f"disjoint time ranges: [{t_a.min()}, {t_a.max()}] vs "
            f"[{t_b.min()}, {t_b.max()}]"
        )
    grid = np.unique(np.concatenate([t_a, t_b]))
    grid = grid[(grid >= lo) & (grid <= hi)]

    if columns is None:
        columns = [
            c
            for c in CSV_COLUMNS
            if c != "t"
            and np.isfinite(table_a[c]).any()
            and np.isfinite(table_b[c]).any()
        ]
    stats = {}
    for col in columns:
        if col not in table_a or col not in table_b:
            raise ConfigError(f"column {col!r} missing from one of the files")
        va, vb = table_a[col], table_b[col]
        if not (np.isfinite(va).any() and np.isfinite(vb).any()):
            raise ConfigError(f"column {col!r} is empty in one of the files")
        ia = np.interp(grid, t_a, va)
        ib = np.interp(grid, t_b, vb)
        diff = np.abs(ia - ib)
        stats[col] = (float(diff.max()), float(np.sqrt(np.mean(diff**2))))
    return stats


# ---------------------------------------------------------------------------
# entry points
# ---------------------------------------------------------------------------

def _cmd_run(args) -> int:
    try:
        if args.config is not None:
            kwargs, figures = parse_config_file(Path(args.config))
            run_name = Path(args.config).stem
            expected = {}
        elif args.preset is not None:
            if args.preset not in PRESETS:
                known = ", ".join(sorted(PRESETS))
                raise ConfigError(f"unknown preset {args.preset!r} (known: {known})")
            preset = PRESETS[args.preset]
            kwargs = dict(preset.config)
            figures = True
            run_name = preset.name
            expected = {f"expected_{k}": v for k, v in preset.expected.items()}
        else:
            raise ConfigError("give a preset name or --config FILE")

        if args.policy is not None:
            kwargs["variant"] = None if args.policy == "none" else args.policy
        if args.abs_tol is not None:
            kwargs["abs_tol"] = args.abs_tol
        if args.rel_tol is not None:
            kwargs["rel_tol"] = args.rel_tol
        if args.memory_cap is not None:
            kwargs["memory_cap_mb"] = args.memory_cap
        if args.t_end is not None:
            kwargs["t_end"] = args.t_end
        if args.no_figures:
            figures = False

        config = build_config(kwargs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_ERROR

    trajectory = evolve(config)
    out_dir = Path(args.out) / run_name if args.subdir else Path(args.out)
    paths = report.write_run(trajectory, out_dir, figures=figures, extra_manifest=expected)
    print(f"{run_name}: {trajectory.status.describe()}")
    print(f"  samples: {len(trajectory.records)}  steps: {trajectory.stats['accepted']}")
    print(f"  wrote {paths['csv']}")

    if trajectory.status.kind == "completed":
        return EXIT_COMPLETED
    if trajectory.status.kind == "breakdown":
        return EXIT_BREAKDOWN
    return EXIT_NUMERICAL


def _cmd_compare(args) -> int:
    columns = args.columns.split(",") if args.columns else None
    try:
        stats = compare_csv(Path(args.file_a), Path(args.file_b), columns)
    except ConfigError as exc:
        print(f"compare error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    width = max(len(c) for c in stats)
    print(f"{'column':<{width}}  {'max deviation':>14}  {'rms deviation':>14}")
    worst = 0.0
    for col, (dmax, drms) in stats.items():
        print(f"{col:<{width}}  {dmax:>14.6e}  {drms:>14.6e}")
        worst = max(worst, dmax)
    if args.tolerance is not None:
        verdict = worst <= args.tolerance
        print(f"max over columns: {worst:.6e} "
              f"{'<=' if verdict else '>'} tolerance {args.tolerance:.6e} "
              f"-> {'pass' if verdict else 'fail'}")
        return EXIT_COMPLETED if verdict else EXIT_ERROR
    return EXIT_COMPLETED


def _cmd_presets(_args) -> int:
    for name, preset in PRESETS.items():
        cfg = preset.config
        print(f"{name:13} {preset.description}")
        print(f"{'':13}   backend={cfg['backend']} policy={cfg['variant']} "
              f"N={cfg.get('n_particles', '-')} t_end={cfg['t_end']}")
    return EXIT_COMPLETED


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bglsim",
        description="Balanced gain/loss in a controlled four-mode lattice: "
        "mean-field, exact many-body, and moment-hierarchy runs.",
        epilog="run exit codes: 0 completed, 1 config error, 3 breakdown, "
        "4 numerical failure",
    )
    parser.add_argument("--version", action="version", version=f"bglsim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a preset or config file")
    run.add_argument("preset", nargs="?", help=f"preset name ({', '.join(PRESETS)})")
    run.add_argument("--config", help="path to an INI config file")
    run.add_argument("--out", default="runs", help="output directory (default: runs)")
    run.add_argument("--subdir", action="store_true",
                     help="write into <out>/<run-name>/ instead of <out>/")
    run.add_argument("--policy", choices=list(VARIANTS) + ["none"],
                     help="override the control policy")
    run.add_argument("--abs-tol", type=float, help="override absolute tolerance")
    run.add_argument("--rel-tol", type=float, help="override relative tolerance")
    run.add_argument("--t-end", type=float, help="override the end time")
    run.add_argument("--memory-cap", type=float,
                     help="memory cap in MB for the exact back-end")
    run.add_argument("--no-figures", action="store_true",
                     help="skip rendering PNG figures")
    run.set_defaults(func=_cmd_run)

    cmp_parser = sub.add_parser("compare", help="compare two trajectory CSVs")
    cmp_parser.add_argument("file_a")
    cmp_parser.add_argument("file_b")
    cmp_parser.add_argument("--columns", help="comma-separated column names")
    cmp_parser.add_argument("--tolerance", type=float,
                            help="pass/fail threshold on the max deviation")
    cmp_parser.set_defaults(func=_cmd_compare)

    presets = sub.add_parser("presets", help="list shipped experiment presets")
    presets.set_defaults(func=_cmd_presets)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
