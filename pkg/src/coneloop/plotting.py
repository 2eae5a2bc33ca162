"""Static diagnostic figures from a run log.

Emits one trajectory-over-course figure plus one plan figure per sensor
frame recorded in the log (vehicle-frame view with the fitted boundary
curves and the target point). Output is SVG with a pinned hash salt and no
date metadata, so the same log always produces byte-identical files.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import numpy.polynomial.polynomial as npoly

from .harness import EmptyLog, course_gates, gate_midpoints
from .runlog import RunLogRecord
from .sensors import Cone

_SVG_OPTS = {"format": "svg", "metadata": {"Date": None}}


def _deterministic_rc():
    return matplotlib.rc_context({"svg.hashsalt": "coneloop"})


def _draw_cones(ax, cones, to_frame=None) -> None:
    for cone in cones:
        x, y = (cone.x_m, cone.y_m) if to_frame is None else to_frame(cone)
        ax.add_patch(
            plt.Circle((x, y), cone.radius_m, color=cone.color, fill=False, linewidth=1.2)
        )


def plot_trajectory(records: list[RunLogRecord], course, path: Path) -> None:
    with _deterministic_rc():
        fig, ax = plt.subplots(figsize=(8, 5))
        _draw_cones(ax, course)
        mids = gate_midpoints(course_gates(course))
        if len(mids) >= 2:
            ax.plot([m[0] for m in mids], [m[1] for m in mids], "k--", linewidth=0.8,
                    label="centerline")
        xs = [r.state.x_m for r in records]
        ys = [r.state.y_m for r in records]
        ax.plot(xs, ys, "b-", linewidth=1.5, label="trajectory")
        ax.plot(xs[:1], ys[:1], "bo", markersize=5)
        ax.set_aspect("equal")
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
        ax.legend(loc="upper left")
        ax.grid(True, alpha=0.3)
        fig.savefig(path, **_SVG_OPTS)
        plt.close(fig)


def plot_frame(record: RunLogRecord, course, path: Path) -> None:
    """Vehicle-frame view of one planning frame: cones, fits, target."""
    state = record.state
    cos_y = math.cos(state.yaw_rad)
    sin_y = math.sin(state.yaw_rad)

    def to_frame(cone: Cone):
        dx = cone.x_m - state.x_m
        dy = cone.y_m - state.y_m
        return dx * cos_y + dy * sin_y, -dx * sin_y + dy * cos_y

    with _deterministic_rc():
        fig, ax = plt.subplots(figsize=(6, 6))
        _draw_cones(ax, course, to_frame)
        span = np.linspace(0.3, 8.0, 60)
        for coeffs, color in ((record.plan_left, "red"), (record.plan_right, "green")):
            if coeffs:
                ax.plot(span, npoly.polyval(span, list(coeffs)), color=color,
                        linewidth=1.0, alpha=0.8)
        if record.target is not None:
            ax.plot([record.target[0]], [record.target[1]], "b*", markersize=12,
                    label="target")
            ax.legend(loc="upper left")
        ax.set_xlim(-1.0, 9.0)
        ax.set_ylim(-4.0, 4.0)
        ax.set_aspect("equal")
        ax.set_xlabel("forward [m]")
        ax.set_ylabel("left [m]")
        ax.set_title(f"frame {record.frame} (t={record.sim_time_s:.2f}s)")
        ax.grid(True, alpha=0.3)
        fig.savefig(path, **_SVG_OPTS)
        plt.close(fig)


def plot(records: list[RunLogRecord], course, out_dir: str | Path) -> list[Path]:
    """Write the trajectory figure and per-frame plan figures into out_dir.

    Returns the written paths: trajectory.svg first, then plan_NNNN.svg for
    every record that latched a new sensor frame.

    Raises EmptyLog when records is empty.
    """
    if not records:
        raise EmptyLog("no records to plot")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    trajectory = out / "trajectory.svg"
    plot_trajectory(records, course, trajectory)
    written.append(trajectory)

    for record in records:
        if record.frame is None:
            continue
        path = out / f"plan_{record.frame:04d}.svg"
        plot_frame(record, course, path)
        written.append(path)
    return written
