"""CSV bundles and static SVG plots for finished runs.

Every CSV has a header row and a deterministic row order. Plots are drawn
from the CSV files alone, so a bundle can be re-plotted without re-running.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .power import Trajectory, mr_speed, received_power_matrix
from .scenario import ScenarioConfig

__all__ = [
    "BUNDLE_FILES",
    "write_bundle",
    "write_csv",
    "read_csv",
    "plot_bundle",
    "plot_series",
    "summary_text",
]

BUNDLE_FILES = ("convergence.csv", "trajectory.csv", "speed.csv", "received_power.csv", "harvested.csv")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for r in rows:
            wr.writerow([_fmt(v) for v in r])
    return path


def read_csv(path) -> tuple[list[str], list[dict]]:
    with Path(path).open(newline="") as fh:
        rd = csv.DictReader(fh)
        return list(rd.fieldnames or []), list(rd)


def _trajectory_rows(traj: Trajectory):
    wp = traj.waypoints
    rows = []
    for i, q in enumerate(wp):
        if i == 0:
            role, dwell = "start", 0.0
        elif i == wp.size - 1:
            role, dwell = "finish", 0.0
        elif traj.protocol == "FHB":
            role, dwell = "hover", traj.durations[i - 1]
        else:
            role, dwell = "waypoint", 0.0
        rows.append((i, q.real, q.imag, role, dwell))
    return rows


def _speed_rows(traj: Trajectory, cfg: ScenarioConfig):
    d = traj.segment_lengths
    if traj.protocol == "PD":
        t = traj.durations
        v = traj.speeds
    else:
        vmr = mr_speed(cfg.rotor)
        v = np.full(d.size, vmr)
        t = d / vmr
    return [(l, d[l], t[l], v[l]) for l in range(d.size)]


def write_bundle(report, cfg: ScenarioConfig, out_dir) -> dict[str, Path]:
    """Write the five CSV files plus summary.txt; returns {name: path}."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    paths["convergence.csv"] = write_csv(out / "convergence.csv", report.COLUMNS,
                                         [[r.get(c, "") for c in report.COLUMNS] for r in report.rows])
    traj = report.trajectory
    if traj is not None:
        paths["trajectory.csv"] = write_csv(out / "trajectory.csv", ("index", "x_m", "y_m", "role", "hover_s"),
                                            _trajectory_rows(traj))
        paths["speed.csv"] = write_csv(out / "speed.csv", ("segment", "length_m", "duration_s", "speed_mps"),
                                       _speed_rows(traj, cfg))
        pos = traj.radiating_positions
        M = cfg.ris_elements
        phis = report.plan.phi if (M > 0 and report.plan is not None) else np.zeros((pos.size, 0), complex)
        P = received_power_matrix(pos, phis, cfg) if pos.size else np.zeros((0, cfg.num_sensors))
        K = cfg.num_sensors
        dur = traj.durations
        header = ("block", "x_m", "y_m", "duration_s") + tuple(f"P{k + 1}_W" for k in range(K))
        rows = [(l, pos[l].real, pos[l].imag, dur[l], *P[l]) for l in range(pos.size)]
        paths["received_power.csv"] = write_csv(out / "received_power.csv", header, rows)
    if report.harvested is not None:
        req = cfg.energy_req_array
        rows = [(k + 1, s.real, s.imag, report.harvested[k], req[k], report.harvested[k] / req[k])
                for k, s in enumerate(cfg.sensor_array)]
        paths["harvested.csv"] = write_csv(out / "harvested.csv",
                                           ("sensor", "x_m", "y_m", "harvested_J", "required_J", "ratio"), rows)
    summary = out / "summary.txt"
    summary.write_text(summary_text(report))
    paths["summary.txt"] = summary
    return paths


def summary_text(report, extra: dict | None = None) -> str:
    lines = [
        f"protocol: {report.protocol}",
        f"ris_elements: {report.ris_elements}",
        f"status: {report.status}" + (f" ({report.message})" if report.message else ""),
        f"outer_iterations: {len(report.rows)}",
        f"kept_iteration: {getattr(report, 'best_iter', '')}",
        f"energy_J: {report.energy:.6f}",
        f"repair_factor: {report.repair_factor:.9f}",
        f"feasible: {report.feasible}",
        f"wall_clock_s: {report.wall_clock:.2f}",
    ]
    if report.harvested is not None:
        ratios = report.harvested / report.energy_req
        lines.append("harvested_over_required: " + " ".join(f"{r:.6f}" for r in ratios))
    for k, v in (extra or {}).items():
        lines.append(f"{k}: {v}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# plots


def _figure():
    import matplotlib

    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    ax.grid(True, alpha=0.3)
    return plt, fig, ax


def plot_series(path, series, xlabel: str, ylabel: str, title: str = "", scatter=None, equal=False) -> Path:
    """Line plot of ``series`` = [(label, x, y), ...] plus optional scatter [(label, x, y)]."""
    plt, fig, ax = _figure()
    for label, x, y in series:
        ax.plot(x, y, label=label, linewidth=1.4)
    for label, x, y in scatter or ():
        ax.scatter(x, y, label=label, s=18, zorder=3)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if equal:
        ax.set_aspect("equal", adjustable="datalim")
    if len(series) + len(scatter or ()) > 1:
        ax.legend(fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path


def _col(rows, name):
    out = []
    for r in rows:
        try:
            out.append(float(r[name]))
        except (TypeError, ValueError):
            out.append(math.nan)
    return np.array(out)


def plot_bundle(out_dir, sensors=None) -> list[Path]:
    """Render an SVG next to each CSV present in ``out_dir``."""
    out = Path(out_dir)
    made = []
    f = out / "convergence.csv"
    if f.exists():
        _, rows = read_csv(f)
        made.append(plot_series(out / "convergence.svg", [("E_U", _col(rows, "iter"), _col(rows, "E_U_J"))],
                                "outer iteration", "UAV energy (J)"))
    f = out / "trajectory.csv"
    if f.exists():
        _, rows = read_csv(f)
        scatter = []
        if sensors is not None:
            s = np.asarray(sensors, dtype=complex)
            scatter.append(("sensors", s.real, s.imag))
        made.append(plot_series(out / "trajectory.svg", [("UAV path", _col(rows, "x_m"), _col(rows, "y_m"))],
                                "x (m)", "y (m)", scatter=scatter, equal=True))
    f = out / "speed.csv"
    if f.exists():
        _, rows = read_csv(f)
        made.append(plot_series(out / "speed.svg", [("speed", _col(rows, "segment"), _col(rows, "speed_mps"))],
                                "segment", "speed (m/s)"))
    f = out / "received_power.csv"
    if f.exists():
        header, rows = read_csv(f)
        blk = _col(rows, "block")
        series = [(h.removesuffix("_W"), blk, _col(rows, h)) for h in header if h.startswith("P")]
        made.append(plot_series(out / "received_power.svg", series, "radiating block", "expected power (W)"))
    f = out / "harvested.csv"
    if f.exists():
        _, rows = read_csv(f)
        k = _col(rows, "sensor")
        made.append(plot_series(out / "harvested.svg", [("required", k, _col(rows, "required_J"))], "sensor",
                                "energy (J)", scatter=[("harvested", k, _col(rows, "harvested_J"))]))
    return made
