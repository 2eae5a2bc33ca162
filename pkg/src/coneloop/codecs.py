"""Standard payload codecs for the bridge message types.

Wire schemas (all SI units):

  VehicleState  {x, y, yaw, speed, steering}
  Detections2D  [{u_min, v_min, u_max, v_max, label, confidence}, ...]
  VehicleInput  {throttle, braking, steering}
  LaserScan     {fov, ranges: [...]}

Detection boxes are real-valued in process; they are rounded half-up to
integer pixels here, at emission, so the wire format is integral and golden
byte tests are deterministic. Anything not registered passes through a
session as raw JSON.
"""

from __future__ import annotations

import math
from typing import Any

from .sensors import Detection
from .twin import ActuationCommand, VehicleState
from .wire import CodecRegistry


def round_half_up(value: float) -> int:
    return math.floor(value + 0.5)


def encode_vehicle_state(state: VehicleState) -> dict[str, Any]:
    return {
        "x": state.x_m,
        "y": state.y_m,
        "yaw": state.yaw_rad,
        "speed": state.speed_mps,
        "steering": state.steer_rad,
    }


def decode_vehicle_state(payload: dict[str, Any]) -> VehicleState:
    # The envelope carries the timestamp; the payload is pose + speed only.
    return VehicleState(
        x_m=payload["x"],
        y_m=payload["y"],
        yaw_rad=payload["yaw"],
        speed_mps=payload["speed"],
        steer_rad=payload["steering"],
        sim_time_s=0.0,
    )


def encode_detections(detections: list[Detection]) -> list[dict[str, Any]]:
    out = []
    for det in detections:
        u_min = round_half_up(det.u_min)
        v_min = round_half_up(det.v_min)
        u_max = round_half_up(det.u_max)
        v_max = round_half_up(det.v_max)
        if u_min >= u_max or v_min >= v_max:
            continue                      # box collapsed by rounding
        out.append(
            {
                "u_min": u_min,
                "v_min": v_min,
                "u_max": u_max,
                "v_max": v_max,
                "label": det.label,
                "confidence": det.confidence,
            }
        )
    return out


def decode_detections(payload: list[dict[str, Any]]) -> list[Detection]:
    return [
        Detection(
            u_min=float(d["u_min"]),
            v_min=float(d["v_min"]),
            u_max=float(d["u_max"]),
            v_max=float(d["v_max"]),
            label=d["label"],
            confidence=d["confidence"],
        )
        for d in payload
    ]


def encode_command(cmd: ActuationCommand) -> dict[str, Any]:
    return {"throttle": cmd.throttle, "braking": cmd.braking, "steering": cmd.steering}


def decode_command(payload: dict[str, Any]) -> ActuationCommand:
    return ActuationCommand(
        throttle=payload["throttle"],
        braking=payload["braking"],
        steering=payload["steering"],
    )


def encode_laser_scan(scan: dict[str, Any]) -> dict[str, Any]:
    return {"fov": scan["fov"], "ranges": list(scan["ranges"])}


def decode_laser_scan(payload: dict[str, Any]) -> dict[str, Any]:
    return {"fov": payload["fov"], "ranges": list(payload["ranges"])}


def default_registry() -> CodecRegistry:
    registry = CodecRegistry()
    registry.register("VehicleState", encode_vehicle_state, decode_vehicle_state)
    registry.register("Detections2D", encode_detections, decode_detections)
    registry.register("VehicleInput", encode_command, decode_command)
    registry.register("LaserScan", encode_laser_scan, decode_laser_scan)
    return registry
