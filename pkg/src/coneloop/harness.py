"""Closed-loop runner (single-process or distributed) and run metrics.

Both deployment shapes drive the same simulation loop; only the channel the
autonomy pipeline talks over differs. Per dynamics step:

  * on sensor-frame steps, the sim detects cones and emits the detection and
    vehicle-state payloads (through the wire codecs in both modes, so the two
    shapes see byte-identical inputs);
  * the command computed from frame k takes effect at step k+1 -- one
    dynamics step of actuation latency. In distributed mode that latency is
    exactly what the lock-step barrier provides (the autonomy's reply to the
    step-k messages rides the step-k+1 exchange), so local and distributed
    runs produce identical command streams by construction;
  * the vehicle advances by dynamics_dt_s with the latched command held
    (zero-order hold) and one log record is appended.

The run stops at max_duration_s, on crossing the final cone gate while
heading forward through it, or on the first cone strike when fail-fast is
set. Ground-truth pose lives on the sim side; the autonomy side consumes
detections plus measured speed and never reads the pose.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .autonomy import SAFE_STOP, DegenerateRow, control, estimate_cone_position, plan
from .bridge import (
    BridgeError,
    EndpointConfig,
    Handshake,
    Session,
    SyncPolicy,
    establish,
)
from .codecs import default_registry
from .config import Scenario
from .runlog import RunLogRecord, write_log
from .sensors import Cone, detect, lidar_scan
from .twin import ActuationCommand, VehicleState, step as twin_step
from .wire import canonical_json

TOPIC_DETECTIONS = "detections"
TOPIC_STATE = "vehicle_state"
TOPIC_SCAN = "laser_scan"
TOPIC_COMMAND = "vehicle_input"
TOPIC_PLAN = "plan_diag"
TOPIC_CONTROL = "run_control"

SIM_PUBLICATIONS = (
    (TOPIC_DETECTIONS, "Detections2D"),
    (TOPIC_STATE, "VehicleState"),
    (TOPIC_SCAN, "LaserScan"),
    (TOPIC_CONTROL, "RunControl"),
)
SIM_SUBSCRIPTIONS = (
    (TOPIC_COMMAND, "VehicleInput"),
    (TOPIC_PLAN, "PlanDiag"),
)


class EmptyLog(Exception):
    """Metrics or plots requested over a log with no records."""


class ScenarioInvalid(Exception):
    """A scenario object cannot be run as given."""


@dataclass
class RunReport:
    """Aggregate outcome of one run. Distance fields are None when the course
    cannot define them (no gates)."""

    completed: bool
    steps: int
    cones_struck: int
    max_cross_track_m: float | None
    mean_cross_track_m: float | None
    min_cone_clearance_m: float | None
    wall_time_s: float

    def to_obj(self) -> dict[str, Any]:
        return {
            "completed": self.completed,
            "steps": self.steps,
            "cones_struck": self.cones_struck,
            "max_cross_track_m": self.max_cross_track_m,
            "mean_cross_track_m": self.mean_cross_track_m,
            "min_cone_clearance_m": self.min_cone_clearance_m,
            "wall_time_s": self.wall_time_s,
        }

    def to_json(self) -> bytes:
        return canonical_json(self.to_obj())


# ---------------------------------------------------------------------------
# Course geometry

def course_gates(course) -> list[tuple[Cone, Cone]]:
    """Pair the i-th red cone with the i-th green cone, in course order."""
    reds = [c for c in course if c.color == "red"]
    greens = [c for c in course if c.color == "green"]
    return list(zip(reds, greens))


def gate_midpoints(gates: list[tuple[Cone, Cone]]) -> list[tuple[float, float]]:
    return [((r.x_m + g.x_m) / 2.0, (r.y_m + g.y_m) / 2.0) for r, g in gates]


def point_segment_distance(
    px: float, py: float, ax: float, ay: float, bx: float, by: float
) -> float:
    abx, aby = bx - ax, by - ay
    apx, apy = px - ax, py - ay
    denom = abx * abx + aby * aby
    if denom == 0.0:
        return math.hypot(apx, apy)
    t = min(1.0, max(0.0, (apx * abx + apy * aby) / denom))
    return math.hypot(px - (ax + t * abx), py - (ay + t * aby))


def point_polyline_distance(px: float, py: float, points: list[tuple[float, float]]) -> float:
    if len(points) == 1:
        return math.hypot(px - points[0][0], py - points[0][1])
    best = math.inf
    for (ax, ay), (bx, by) in zip(points, points[1:]):
        best = min(best, point_segment_distance(px, py, ax, ay, bx, by))
    return best


def _segments_intersect(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1 = orient(q1, q2, p1)
    d2 = orient(q1, q2, p2)
    d3 = orient(p1, p2, q1)
    d4 = orient(p1, p2, q2)
    if ((d1 > 0) != (d2 > 0) or d1 == 0 or d2 == 0) and (
        (d3 > 0) != (d4 > 0) or d3 == 0 or d4 == 0
    ):
        # Conservative: counts touching endpoints as a crossing, which is the
        # right call for a physical gate.
        return (
            min(p1[0], p2[0]) <= max(q1[0], q2[0])
            and min(q1[0], q2[0]) <= max(p1[0], p2[0])
            and min(p1[1], p2[1]) <= max(q1[1], q2[1])
            and min(q1[1], q2[1]) <= max(p1[1], p2[1])
        )
    return False


class FinishGate:
    """Segment between the final cone pair, crossed heading-forward."""

    def __init__(self, gates: list[tuple[Cone, Cone]]):
        self._enabled = bool(gates)
        if not gates:
            return
        red, green = gates[-1]
        self.a = (red.x_m, red.y_m)
        self.b = (green.x_m, green.y_m)
        mids = gate_midpoints(gates)
        if len(mids) >= 2:
            dx = mids[-1][0] - mids[-2][0]
            dy = mids[-1][1] - mids[-2][1]
        else:
            dx, dy = 1.0, 0.0
        norm = math.hypot(dx, dy) or 1.0
        self.direction = (dx / norm, dy / norm)

    def crossed(self, prev: VehicleState, new: VehicleState) -> bool:
        if not self._enabled:
            return False
        if not _segments_intersect(
            (prev.x_m, prev.y_m), (new.x_m, new.y_m), self.a, self.b
        ):
            return False
        heading = (math.cos(new.yaw_rad), math.sin(new.yaw_rad))
        return heading[0] * self.direction[0] + heading[1] * self.direction[1] > 0.0


def footprint_clearance(state: VehicleState, cone: Cone, wheelbase: float, track: float) -> float:
    """Distance from the vehicle footprint to the cone disc edge, >= 0.

    The footprint is the wheelbase-by-track rectangle spanning rear axle to
    front axle of the rear-axle-origin pose. Zero means contact.
    """
    dx = cone.x_m - state.x_m
    dy = cone.y_m - state.y_m
    cos_y = math.cos(state.yaw_rad)
    sin_y = math.sin(state.yaw_rad)
    local_x = dx * cos_y + dy * sin_y
    local_y = -dx * sin_y + dy * cos_y
    nearest_x = min(max(local_x, 0.0), wheelbase)
    nearest_y = min(max(local_y, -track / 2.0), track / 2.0)
    dist = math.hypot(local_x - nearest_x, local_y - nearest_y)
    return max(0.0, dist - cone.radius_m)


def strikes_at(state: VehicleState, course, wheelbase: float, track: float) -> set[int]:
    return {
        i
        for i, cone in enumerate(course)
        if footprint_clearance(state, cone, wheelbase, track) <= 0.0
    }


# ---------------------------------------------------------------------------
# Autonomy pipeline over payloads (the half that would live on the second box)

class AutonomyCore:
    """The per-frame pipeline, consuming and producing wire payloads.

    Feeding it payloads rather than domain objects keeps the single-process
    run on the exact bytes a distributed run would see.
    """

    def __init__(self, scenario: Scenario):
        self._scenario = scenario
        self._registry = default_registry()

    def on_frame(
        self, frame_index: int, detections_payload: Any, state_payload: Any
    ) -> tuple[Any, Any]:
        """Returns (command payload, plan-diagnostic payload) for one frame."""
        scenario = self._scenario
        detections = self._registry.decode_payload("Detections2D", detections_payload)
        estimates = []
        for det in detections:
            try:
                estimates.append(estimate_cone_position(det, scenario.camera))
            except DegenerateRow:
                continue
        frame_plan = plan(estimates, scenario.planner)
        measured = self._registry.decode_payload("VehicleState", state_payload)
        cmd = control(frame_plan, measured, scenario.controller)
        diag = {
            "frame": frame_index,
            "detections": len(detections),
            "valid": frame_plan.valid,
            "target": [frame_plan.target_x_m, frame_plan.target_y_m]
            if frame_plan.valid
            else None,
            "left": list(frame_plan.left_coeffs) if frame_plan.left_coeffs else None,
            "right": list(frame_plan.right_coeffs) if frame_plan.right_coeffs else None,
        }
        return self._registry.encode_payload("VehicleInput", cmd), diag


# A frame bundle is (frame_index, detections_payload, state_payload,
# scan_payload-or-None); channels return (command_payload, diag_payload) when
# a command update arrived for this step, else None.

class _LocalChannel:
    """In-process stand-in for the bridge with the same one-step latency."""

    def __init__(self, core: AutonomyCore):
        self._core = core
        self._pending: tuple[Any, Any] | None = None

    def exchange(self, sim_time: float, frame) -> tuple[Any, Any] | None:
        ready, self._pending = self._pending, None
        if frame is not None:
            index, detections_payload, state_payload, _scan = frame
            self._pending = self._core.on_frame(index, detections_payload, state_payload)
        return ready

    def finish(self, completed: bool) -> None:
        pass


class _BridgeChannel:
    """Sim-side lock-step exchange: frame payloads out, command back."""

    def __init__(self, session: Session):
        self._session = session

    def exchange(self, sim_time: float, frame) -> tuple[Any, Any] | None:
        outgoing: list[tuple[str, Any]] = []
        if frame is not None:
            _, detections_payload, state_payload, scan_payload = frame
            outgoing.append((TOPIC_DETECTIONS, detections_payload))
            outgoing.append((TOPIC_STATE, state_payload))
            if scan_payload is not None:
                outgoing.append((TOPIC_SCAN, scan_payload))
        incoming = self._session.step_exchange(outgoing, sim_time)
        command_payload = None
        diag_payload = None
        for envelope in incoming:
            if envelope.topic == TOPIC_COMMAND:
                command_payload = envelope.payload
            elif envelope.topic == TOPIC_PLAN:
                diag_payload = envelope.payload
        if command_payload is None:
            return None
        return command_payload, diag_payload

    def finish(self, completed: bool) -> None:
        sim_time = self._session.step_index * self._session.sync.step_dt
        self._session.step_exchange(
            [(TOPIC_CONTROL, {"done": True, "completed": completed})], sim_time
        )


def _detect_payloads(scenario: Scenario, state: VehicleState, frame_index: int):
    registry = default_registry()
    detections = detect(
        state, scenario.camera, list(scenario.course), (scenario.seed, frame_index, 0)
    )
    detections_payload = registry.encode_payload("Detections2D", detections)
    state_payload = registry.encode_payload("VehicleState", state)
    scan_payload = None
    if scenario.lidar is not None:
        ranges = lidar_scan(
            state, scenario.lidar, list(scenario.course), (scenario.seed, frame_index, 1)
        )
        scan_payload = {"fov": scenario.lidar.fov_rad, "ranges": ranges}
    return frame_index, detections_payload, state_payload, scan_payload


def _run_sim_loop(
    scenario: Scenario,
    channel,
    fail_fast: bool,
    records: list[RunLogRecord],
) -> bool:
    """Drive the loop, appending to ``records`` in place (so a caller can
    flush a partial log if the channel dies mid-run). Returns completion."""
    if scenario.decimation < 1:
        raise ScenarioInvalid("sensor_period_s must be at least one dynamics step")
    registry = default_registry()
    dt = scenario.dynamics_dt_s
    decimation = scenario.decimation
    total_steps = round(scenario.max_duration_s / dt)
    gates = course_gates(scenario.course)
    finish = FinishGate(gates)

    state = VehicleState()
    latched_cmd: ActuationCommand = SAFE_STOP
    latched_count = 0
    latched_valid = False
    latched_target: tuple[float, float] | None = None

    struck: set[int] = set()
    completed = False
    frame_index = 0

    for k in range(total_steps):
        frame = None
        if k % decimation == 0:
            frame = _detect_payloads(scenario, state, frame_index)
            frame_index += 1

        update = channel.exchange(k * dt, frame)
        new_frame: int | None = None
        plan_left = plan_right = None
        if update is not None:
            command_payload, diag = update
            latched_cmd = registry.decode_payload("VehicleInput", command_payload)
            if diag is not None:
                new_frame = diag["frame"]
                latched_count = diag["detections"]
                latched_valid = diag["valid"]
                latched_target = tuple(diag["target"]) if diag["target"] else None
                plan_left = tuple(diag["left"]) if diag.get("left") else None
                plan_right = tuple(diag["right"]) if diag.get("right") else None

        prev_state = state
        state = twin_step(state, latched_cmd, dt, scenario.chassis, scenario.motor)

        records.append(
            RunLogRecord(
                step=k,
                sim_time_s=state.sim_time_s,
                state=state,
                command=latched_cmd,
                detections_count=latched_count,
                plan_valid=latched_valid,
                target=latched_target,
                frame=new_frame,
                plan_left=plan_left,
                plan_right=plan_right,
            )
        )

        struck |= strikes_at(
            state, scenario.course, scenario.chassis.wheelbase_m, scenario.chassis.track_m
        )
        if finish.crossed(prev_state, state):
            completed = True
            break
        if fail_fast and struck:
            break

    channel.finish(completed)
    return completed


def run_local(
    scenario: Scenario, log_path: str | Path | None = None, fail_fast: bool = False
) -> tuple[RunReport, list[RunLogRecord]]:
    """Run the closed loop in one process; returns (report, records).

    Deterministic for a fixed scenario and seed: repeated runs write
    byte-identical logs.
    """
    started = time.perf_counter()
    channel = _LocalChannel(AutonomyCore(scenario))
    records: list[RunLogRecord] = []
    completed = _run_sim_loop(scenario, channel, fail_fast, records)
    wall = time.perf_counter() - started
    report = _report_from_records(records, scenario, completed, wall)
    if log_path is not None:
        write_log(records, log_path)
    return report, records


def sim_handshake(node_name: str = "sim") -> Handshake:
    return Handshake(node_name, SIM_PUBLICATIONS, SIM_SUBSCRIPTIONS)


def autonomy_handshake(node_name: str = "autonomy") -> Handshake:
    return Handshake(node_name, SIM_SUBSCRIPTIONS, SIM_PUBLICATIONS)


def run_distributed(
    role: str,
    scenario: Scenario,
    config: EndpointConfig | None = None,
    session: Session | None = None,
    log_path: str | Path | None = None,
    fail_fast: bool = False,
) -> tuple[RunReport, list[RunLogRecord]]:
    """Run one side of the two-process deployment over the bridge.

    The ``sim`` role owns the twin and the sensors and writes the full log;
    the ``autonomy`` role owns the pipeline and logs nothing (its report
    carries step and wall-time counts only). Pass ``session`` to reuse an
    established session (tests, loopback); otherwise ``config`` opens TCP.
    If the bridge fails mid-run (StepTimeout, peer gone), the partial log is
    flushed to ``log_path`` before the error propagates.
    """
    if role not in ("sim", "autonomy"):
        raise ValueError(f"role must be 'sim' or 'autonomy', got {role!r}")
    if scenario.sync.mode != "lock_step":
        raise ScenarioInvalid("distributed runs require a lock_step sync policy")
    if session is None:
        if config is None:
            raise ValueError("either config or session is required")
        handshake = sim_handshake() if role == "sim" else autonomy_handshake()
        session = establish(
            config, handshake, sync=SyncPolicy("lock_step", scenario.dynamics_dt_s)
        )

    started = time.perf_counter()
    try:
        if role == "sim":
            records: list[RunLogRecord] = []
            try:
                completed = _run_sim_loop(
                    scenario, _BridgeChannel(session), fail_fast, records
                )
            except BridgeError:
                if log_path is not None:
                    write_log(records, log_path)
                raise
            wall = time.perf_counter() - started
            report = _report_from_records(records, scenario, completed, wall)
            if log_path is not None:
                write_log(records, log_path)
            return report, records
        return _run_autonomy_role(scenario, session, started)
    finally:
        session.close()


def _run_autonomy_role(
    scenario: Scenario, session: Session, started: float
) -> tuple[RunReport, list[RunLogRecord]]:
    core = AutonomyCore(scenario)
    dt = scenario.dynamics_dt_s
    pending: list[tuple[str, Any]] = []
    steps = 0
    completed = False
    while True:
        incoming = session.step_exchange(pending, steps * dt)
        pending = []
        detections_payload = None
        state_payload = None
        frame_index = 0
        done = False
        for envelope in incoming:
            if envelope.topic == TOPIC_DETECTIONS:
                detections_payload = envelope.payload
                frame_index = envelope.sequence     # one publish per frame
            elif envelope.topic == TOPIC_STATE:
                state_payload = envelope.payload
            elif envelope.topic == TOPIC_CONTROL:
                done = True
                completed = bool(envelope.payload.get("completed", False))
        if done:
            break
        if detections_payload is not None and state_payload is not None:
            command_payload, diag = core.on_frame(
                frame_index, detections_payload, state_payload
            )
            pending = [(TOPIC_COMMAND, command_payload), (TOPIC_PLAN, diag)]
        steps += 1
    wall = time.perf_counter() - started
    return RunReport(completed, steps, 0, None, None, None, wall), []


# ---------------------------------------------------------------------------
# Metrics

def metrics(
    records: list[RunLogRecord],
    course,
    wall_time_s: float = 0.0,
    wheelbase_m: float = 0.47,
    track_m: float = 0.34,
) -> RunReport:
    """Aggregate a log into a RunReport.

    Cross-track error per step is the distance from the vehicle position to
    the centerline polyline through the gate midpoints; a cone counts as
    struck when the vehicle footprint rectangle touches its disc at any step.
    Completion is a forward crossing of the final gate anywhere in the log.

    Raises EmptyLog when there are no records.
    """
    if not records:
        raise EmptyLog("no records")
    gates = course_gates(course)
    midpoints = gate_midpoints(gates)
    finish = FinishGate(gates)

    cross: list[float] = []
    if len(midpoints) >= 2:
        for record in records:
            cross.append(
                point_polyline_distance(record.state.x_m, record.state.y_m, midpoints)
            )

    struck: set[int] = set()
    clearance = math.inf
    for record in records:
        for i, cone in enumerate(course):
            c = footprint_clearance(record.state, cone, wheelbase_m, track_m)
            clearance = min(clearance, c)
            if c <= 0.0:
                struck.add(i)

    completed = False
    prev = records[0].state
    for record in records[1:]:
        if finish.crossed(prev, record.state):
            completed = True
            break
        prev = record.state

    return RunReport(
        completed=completed,
        steps=records[-1].step + 1,
        cones_struck=len(struck),
        max_cross_track_m=max(cross) if cross else None,
        mean_cross_track_m=sum(cross) / len(cross) if cross else None,
        min_cone_clearance_m=clearance if math.isfinite(clearance) else None,
        wall_time_s=wall_time_s,
    )


def _report_from_records(records, scenario: Scenario, completed: bool, wall: float) -> RunReport:
    if not records:
        return RunReport(completed, 0, 0, None, None, None, wall)
    report = metrics(
        records,
        scenario.course,
        wall_time_s=wall,
        wheelbase_m=scenario.chassis.wheelbase_m,
        track_m=scenario.chassis.track_m,
    )
    report.completed = completed
    return report
