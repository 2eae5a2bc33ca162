"""Cone-lane autonomy pipeline: detections -> cone positions -> plan -> command.

Three stateless stages, run once per sensor frame:

  1. estimate_cone_position: ground-plane inversion of a bounding box into a
     vehicle-frame cone position (exact for a zero-pitch camera).
  2. plan: per-boundary polynomial least squares, centerline, and a single
     lookahead target point.
  3. control: pure pursuit on the target point plus a proportional speed loop.

Label convention: red cones mark the left lane boundary, green the right.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import numpy.polynomial.polynomial as npoly

from .sensors import CameraModel, Detection
from .twin import ActuationCommand, VehicleState

SAFE_STOP = ActuationCommand(throttle=0.0, braking=1.0, steering=0.0)


class DegenerateRow(Exception):
    """Box bottom row at or above the horizon: the ground ray never lands."""


@dataclass(frozen=True)
class ConeEstimate:
    """Cone base position in the vehicle frame (x forward, y left)."""

    x_m: float
    y_m: float
    label: str

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x_m) and math.isfinite(self.y_m)):
            raise ValueError("cone estimate must be finite")
        if self.x_m <= 0.0:
            raise ValueError("only cones ahead of the vehicle are estimated")


@dataclass(frozen=True)
class PlannerParams:
    lookahead_m: float = 2.0
    poly_degree: int = 2
    min_per_side: int = 2
    lane_halfwidth_m: float = 0.5

    def __post_init__(self) -> None:
        if self.lookahead_m <= 0:
            raise ValueError("lookahead_m must be positive")
        if self.poly_degree < 0:
            raise ValueError("poly_degree must be >= 0")
        if self.min_per_side < 1:
            raise ValueError("min_per_side must be >= 1")
        if self.lane_halfwidth_m <= 0:
            raise ValueError("lane_halfwidth_m must be positive")


@dataclass(frozen=True)
class ControllerParams:
    target_speed_mps: float = 1.5
    kp_speed: float = 0.8
    wheelbase_m: float = 0.47
    max_steer_rad: float = 0.44

    def __post_init__(self) -> None:
        if self.target_speed_mps < 0:
            raise ValueError("target_speed_mps must be non-negative")
        if self.kp_speed <= 0 or self.wheelbase_m <= 0 or self.max_steer_rad <= 0:
            raise ValueError("kp_speed, wheelbase_m and max_steer_rad must be positive")


@dataclass(frozen=True)
class Plan:
    """Boundary fits (coefficients lowest degree first, or None per side) and
    the lookahead target point. An invalid plan is a value, not an error."""

    left_coeffs: tuple[float, ...] | None
    right_coeffs: tuple[float, ...] | None
    target_x_m: float
    target_y_m: float
    valid: bool


INVALID_PLAN = Plan(None, None, 0.0, 0.0, False)


def estimate_cone_position(det: Detection, cam: CameraModel) -> ConeEstimate:
    """Back-project a detection's bottom-center pixel onto the ground plane.

    With a zero-pitch camera at height h, the bottom-center pixel (u_b, v_b)
    of the box determines depth Z = fy*h/(v_b - cy) and lateral offset
    X = (u_b - cx)*Z/fx; the vehicle-frame position is (Z + mount_x, -X).

    Raises:
        DegenerateRow: v_b <= cy + 1 (ray at or above the horizon).
    """
    u_b = (det.u_min + det.u_max) / 2.0
    v_b = det.v_max
    if v_b <= cam.cy + 1.0:
        raise DegenerateRow(f"bottom row {v_b} too close to horizon row {cam.cy}")
    z = cam.fy * cam.mount_height_m / (v_b - cam.cy)
    x_lateral = (u_b - cam.cx) * z / cam.fx
    return ConeEstimate(x_m=z + cam.mount_x_m, y_m=-x_lateral, label=det.label)


def _fit_side(cones: list[ConeEstimate], params: PlannerParams) -> tuple[float, ...] | None:
    if len(cones) < params.min_per_side:
        return None
    xs = np.array([c.x_m for c in cones])
    ys = np.array([c.y_m for c in cones])
    degree = min(params.poly_degree, len(cones) - 1)
    with warnings.catch_warnings():
        # Coincident cone abscissas make the fit rank-deficient; the
        # least-norm solution is still finite and the command is clamped
        # downstream, so the conditioning warning is just noise here.
        warnings.simplefilter("ignore", np.exceptions.RankWarning)
        coeffs = npoly.polyfit(xs, ys, degree)
    return tuple(float(c) for c in coeffs)


def plan(cones: list[ConeEstimate], params: PlannerParams) -> Plan:
    """Fit boundary curves and pick the lookahead target point.

    Cones are split by label and each side with at least min_per_side cones
    gets a least-squares polynomial y(x) of degree min(poly_degree, n-1). The
    centerline is the mean of both fits when both exist; with one boundary it
    is that fit shifted lane_halfwidth_m toward the lane center. The target is
    the centerline evaluated at the lookahead distance. With no usable side
    the plan is invalid.
    """
    left = [c for c in cones if c.label == "red"]
    right = [c for c in cones if c.label == "green"]
    left_fit = _fit_side(left, params)
    right_fit = _fit_side(right, params)

    if left_fit is None and right_fit is None:
        return INVALID_PLAN

    x_t = params.lookahead_m
    if left_fit is not None and right_fit is not None:
        y_t = (float(npoly.polyval(x_t, left_fit)) + float(npoly.polyval(x_t, right_fit))) / 2.0
    elif left_fit is not None:
        y_t = float(npoly.polyval(x_t, left_fit)) - params.lane_halfwidth_m
    else:
        y_t = float(npoly.polyval(x_t, right_fit)) + params.lane_halfwidth_m
    return Plan(left_fit, right_fit, x_t, y_t, True)


def control(p: Plan, state: VehicleState, params: ControllerParams) -> ActuationCommand:
    """Pure pursuit steering plus proportional speed control.

    For a valid plan the commanded wheel angle puts the target point on a
    circular arc through the vehicle origin tangent to the heading:

        alpha = atan2(y_t, x_t)
        delta = atan(2 * wheelbase * sin(alpha) / |target|)

    normalized by max_steer_rad and clamped. Speed: throttle and braking are
    the positive/negative parts of kp * (target_speed - speed), clamped to
    [0, 1]. An invalid plan commands a safe stop (full brake, wheel centered).

    Only ``state.speed_mps`` is read; the controller never uses the pose.
    """
    if not p.valid:
        return SAFE_STOP
    alpha = math.atan2(p.target_y_m, p.target_x_m)
    lookahead_dist = math.hypot(p.target_x_m, p.target_y_m)
    delta = math.atan(2.0 * params.wheelbase_m * math.sin(alpha) / lookahead_dist)
    steering = delta / params.max_steer_rad
    speed_error = params.target_speed_mps - state.speed_mps
    return ActuationCommand(
        throttle=params.kp_speed * speed_error,
        braking=-params.kp_speed * speed_error,
        steering=steering,
    )
