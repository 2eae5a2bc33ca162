"""Run logs: one canonical-JSON object per line, one record per dynamics step.

The format is append-safe, streamable and diff-friendly; because each line is
canonical JSON, a run with a fixed seed produces a byte-identical file every
time. ``read_log(write_log(records))`` is the identity.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .twin import ActuationCommand, VehicleState
from .wire import canonical_json


class MalformedLine(Exception):
    """A log line failed to parse; carries the 1-based line number."""

    def __init__(self, line_number: int, message: str):
        self.line_number = line_number
        super().__init__(f"line {line_number}: {message}")


@dataclass(frozen=True)
class RunLogRecord:
    """State, applied command and latched autonomy diagnostics for one step.

    ``frame`` is the sensor-frame index whose outputs took effect at this
    step, or None when the step just carried the previous latch forward.
    ``plan_left``/``plan_right`` are the boundary fit coefficients logged on
    those same steps for diagnostic plotting.
    """

    step: int
    sim_time_s: float
    state: VehicleState
    command: ActuationCommand
    detections_count: int
    plan_valid: bool
    target: tuple[float, float] | None
    frame: int | None = None
    plan_left: tuple[float, ...] | None = None
    plan_right: tuple[float, ...] | None = None


def record_to_obj(record: RunLogRecord) -> dict:
    return {
        "step": record.step,
        "sim_time_s": record.sim_time_s,
        "state": {
            "x_m": record.state.x_m,
            "y_m": record.state.y_m,
            "yaw_rad": record.state.yaw_rad,
            "speed_mps": record.state.speed_mps,
            "steer_rad": record.state.steer_rad,
            "sim_time_s": record.state.sim_time_s,
        },
        "command": {
            "throttle": record.command.throttle,
            "braking": record.command.braking,
            "steering": record.command.steering,
        },
        "detections_count": record.detections_count,
        "plan_valid": record.plan_valid,
        "target": list(record.target) if record.target is not None else None,
        "frame": record.frame,
        "plan_left": list(record.plan_left) if record.plan_left is not None else None,
        "plan_right": list(record.plan_right) if record.plan_right is not None else None,
    }


def record_from_obj(obj: dict) -> RunLogRecord:
    state = obj["state"]
    command = obj["command"]
    return RunLogRecord(
        step=obj["step"],
        sim_time_s=obj["sim_time_s"],
        state=VehicleState(
            x_m=state["x_m"],
            y_m=state["y_m"],
            yaw_rad=state["yaw_rad"],
            speed_mps=state["speed_mps"],
            steer_rad=state["steer_rad"],
            sim_time_s=state["sim_time_s"],
        ),
        command=ActuationCommand(
            throttle=command["throttle"],
            braking=command["braking"],
            steering=command["steering"],
        ),
        detections_count=obj["detections_count"],
        plan_valid=obj["plan_valid"],
        target=tuple(obj["target"]) if obj["target"] is not None else None,
        frame=obj.get("frame"),
        plan_left=tuple(obj["plan_left"]) if obj.get("plan_left") is not None else None,
        plan_right=tuple(obj["plan_right"]) if obj.get("plan_right") is not None else None,
    )


def write_log(records: list[RunLogRecord], path: str | Path) -> None:
    """Write records as line-delimited canonical JSON.

    Raises ValueError when step numbers are not strictly increasing.
    """
    last_step = None
    lines = []
    for record in records:
        if last_step is not None and record.step <= last_step:
            raise ValueError(
                f"record steps must be strictly increasing ({record.step} after {last_step})"
            )
        last_step = record.step
        lines.append(canonical_json(record_to_obj(record)))
    Path(path).write_bytes(b"".join(line + b"\n" for line in lines))


def read_log(path: str | Path) -> list[RunLogRecord]:
    """Parse a log file back into records.

    Raises:
        MalformedLine: a line is not valid JSON or not a valid record; the
            exception carries the 1-based line number.
        OSError: the file cannot be read.
    """
    records: list[RunLogRecord] = []
    text = Path(path).read_text(encoding="utf-8")
    if not text:
        return records
    for number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            raise MalformedLine(number, "blank line")
        try:
            obj = json.loads(line)
        except ValueError as exc:
            raise MalformedLine(number, f"invalid JSON: {exc}") from exc
        try:
            records.append(record_from_obj(obj))
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedLine(number, f"invalid record: {exc}") from exc
    return records
