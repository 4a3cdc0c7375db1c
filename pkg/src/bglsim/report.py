"""Run artifacts: trajectory CSV, manifest, gnuplot script, figure rendering.

The CSV schema is fixed (one column per observable-record field); observables
a back-end does not define are written as empty cells, never zeros.  Figures
are rendered to PNG files next to the CSV; a gnuplot script referencing the
CSV is emitted for consumers without a Python toolchain.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from . import __version__
from .engine import Trajectory
from .observables import CSV_COLUMNS

__all__ = [
    "write_csv",
    "read_csv",
    "write_manifest",
    "write_gnuplot_script",
    "write_figures",
    "write_run",
]


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float) and math.isnan(value):
        return ""
    return f"{value:.17g}"


def write_csv(trajectory: Trajectory, path: Path) -> None:
    lines = [",".join(CSV_COLUMNS)]
    for rec in trajectory.records:
        lines.append(",".join(_format(v) for v in rec.as_row()))
    Path(path).write_text("\n".join(lines) + "\n")


def read_csv(path: Path) -> dict[str, np.ndarray]:
    """Columns as float arrays; empty cells become NaN."""
    text = Path(path).read_text().strip().splitlines()
    header = text[0].split(",")
    rows = [line.split(",") for line in text[1:]]
    out = {}
    for k, name in enumerate(header):
        out[name] = np.array(
            [float(r[k]) if r[k] != "" else math.nan for r in rows]
        )
    return out


def write_manifest(trajectory: Trajectory, path: Path, extra: dict | None = None) -> None:
    cfg = trajectory.config
    abs_tol, rel_tol = cfg.resolved_tolerances()
    entries = {
        "version": __version__,
        "backend": cfg.backend,
        "policy": cfg.variant if cfg.variant is not None else "none",
        "gamma": cfg.gamma,
        "J12": cfg.j12,
        "g": cfg.g,
        "n": cfg.n,
        "n0_initial": cfg.n0,
        "n3_initial": cfg.n3,
        "N": cfg.n_particles,
        "N2": cfg.n_embedded,
        "t_end": cfg.t_end,
        "abs_tol": abs_tol,
        "rel_tol": rel_tol,
        "sample_dt": cfg.sample_dt,
        "epsilon_breakdown": cfg.epsilon_breakdown,
        "memory_cap_mb": cfg.memory_cap_mb,
        "status": trajectory.status.kind,
        "breakdown_cause": trajectory.status.cause,
        "breakdown_time": trajectory.status.time,
        "samples": len(trajectory.records),
        "accepted_steps": trajectory.stats.get("accepted"),
        "rejected_steps": trajectory.stats.get("rejected"),
        "rhs_evaluations": trajectory.stats.get("rhs_evaluations"),
        "max_delta_asymmetry": trajectory.stats.get("max_delta_asymmetry"),
    }
    if extra:
        entries.update(extra)
    lines = [f"{key} = {'' if val is None else val}" for key, val in entries.items()]
    Path(path).write_text("\n".join(lines) + "\n")


_GNUPLOT_PANELS = [
    ("populations", ["n0", "n1", "n2", "n3"], "occupation"),
    ("currents", ["jt01", "jt12", "jt23"], "reduced current"),
    ("coherences", ["c01", "c12", "c23"], "coherence"),
    ("tunneling", ["J01", "J23"], "tunneling rate"),
    ("onsite", ["mu0", "mu3"], "on-site energy"),
    ("purity", ["P4", "P2"], "purity"),
    ("variances", ["var_n1", "var_n2", "var_jt12"], "variance"),
]


def write_gnuplot_script(csv_name: str, path: Path) -> None:
    col = {name: k + 1 for k, name in enumerate(CSV_COLUMNS)}
    lines = [
        "# gnuplot script for a trajectory CSV; run: gnuplot <this file>",
        "set datafile separator ','",
        "set key autotitle columnhead outside",
        "set xlabel 't'",
        "set terminal pngcairo size 900,600",
    ]
    for name, columns, ylabel in _GNUPLOT_PANELS:
        plots = ", ".join(
            f"'{csv_name}' using 1:{col[c]} with lines title '{c}'" for c in columns
        )
        lines.append(f"set output '{name}.png'")
        lines.append(f"set ylabel '{ylabel}'")
        lines.append(f"plot {plots}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_figures(trajectory: Trajectory, directory: Path) -> list[Path]:
    """Render one PNG per observable group; panels without data are skipped."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    times = trajectory.times()
    written = []
    for name, columns, ylabel in _GNUPLOT_PANELS:
        series = [(c, trajectory.column(c)) for c in columns]
        series = [(c, v) for c, v in series if np.isfinite(v).any()]
        if not series:
            continue
        fig, ax = plt.subplots(figsize=(7.0, 4.2))
        for c, v in series:
            ax.plot(times, v, label=c, linewidth=1.2)
        ax.set_xlabel("t")
        ax.set_ylabel(ylabel)
        ax.legend(frameon=False, fontsize=9)
        if trajectory.status.kind == "breakdown":
            ax.axvline(trajectory.status.time, color="0.4", linestyle=":", linewidth=1)
        fig.tight_layout()
        target = directory / f"{name}.png"
        fig.savefig(target, dpi=130)
        plt.close(fig)
        written.append(target)
    return written


def write_run(trajectory: Trajectory, out_dir: Path, figures: bool = True,
              extra_manifest: dict | None = None) -> dict[str, Path]:
    """Emit the full artifact set for one run into a directory."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "csv": out_dir / "trajectory.csv",
        "manifest": out_dir / "manifest.txt",
        "plot_script": out_dir / "plot.gp",
    }
    write_csv(trajectory, paths["csv"])
    write_manifest(trajectory, paths["manifest"], extra=extra_manifest)
    write_gnuplot_script(paths["csv"].name, paths["plot_script"])
    if figures:
        for fig_path in write_figures(trajectory, out_dir / "figures"):
            paths[f"figure:{fig_path.stem}"] = fig_path
    return paths
