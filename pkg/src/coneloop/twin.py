"""Planar digital twin of the 1/6th-scale vehicle.

Kinematic bicycle with longitudinal dynamics, rear-axle reference point:

    x'   = v cos(yaw)
    y'   = v sin(yaw)
    yaw' = v tan(delta) / wheelbase
    v'   = (F_motor - F_brake - F_resist) / mass

F_motor comes from a lumped linear torque-speed motor/ESC model, F_brake is a
commanded friction force opposing motion, and F_resist is rolling resistance
plus quadratic aerodynamic drag. Integration is classical fixed-step RK4.

Only the wheelbase (0.47 m) and track (0.34 m) are measured values; every
other default below is an engineering placeholder and should be treated as
configuration, not ground truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

GRAVITY_MPS2 = 9.81


class NonFiniteState(Exception):
    """Integration produced NaN/inf, which signals pathological parameters."""


class ZeroSteer(Exception):
    """Turn radius is undefined (infinite) at zero wheel angle."""


def _require_positive(value: float, name: str) -> None:
    if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
        raise ValueError(f"{name} must be a finite positive number, got {value!r}")


@dataclass(frozen=True)
class ChassisParams:
    wheelbase_m: float = 0.47
    track_m: float = 0.34
    mass_kg: float = 12.0
    max_steer_rad: float = 0.44
    c_rr: float = 0.015            # rolling resistance, dimensionless
    c_drag: float = 0.05           # aero drag, N per (m/s)^2

    def __post_init__(self) -> None:
        for name in ("wheelbase_m", "track_m", "mass_kg", "max_steer_rad", "c_rr", "c_drag"):
            _require_positive(getattr(self, name), name)
        if self.max_steer_rad >= math.pi / 2:
            raise ValueError("max_steer_rad must be below pi/2")


@dataclass(frozen=True)
class MotorParams:
    stall_torque_Nm: float = 3.0          # at the wheel, after gearing
    no_load_speed_radps: float = 180.0    # wheel speed at zero torque
    wheel_radius_m: float = 0.095
    brake_force_max_N: float = 40.0

    def __post_init__(self) -> None:
        for name in ("stall_torque_Nm", "no_load_speed_radps", "wheel_radius_m", "brake_force_max_N"):
            _require_positive(getattr(self, name), name)


@dataclass(frozen=True)
class VehicleState:
    """Planar pose, signed longitudinal speed, wheel angle and sim clock."""

    x_m: float = 0.0
    y_m: float = 0.0
    yaw_rad: float = 0.0
    speed_mps: float = 0.0
    steer_rad: float = 0.0
    sim_time_s: float = 0.0

    def __post_init__(self) -> None:
        for name in ("x_m", "y_m", "yaw_rad", "speed_mps", "steer_rad", "sim_time_s"):
            if not math.isfinite(getattr(self, name)):
                raise NonFiniteState(f"{name} is not finite")


def _clamped(value: float, lo: float, hi: float) -> float:
    if math.isnan(value):
        return 0.0
    return min(max(value, lo), hi)


@dataclass(frozen=True)
class ActuationCommand:
    """Normalized throttle/braking/steering triple.

    Ranges are enforced by clamping at construction (throttle and braking to
    [0, 1], steering to [-1, 1]); NaN clamps to 0. Construction never raises.
    """

    throttle: float = 0.0
    braking: float = 0.0
    steering: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "throttle", _clamped(float(self.throttle), 0.0, 1.0))
        object.__setattr__(self, "braking", _clamped(float(self.braking), 0.0, 1.0))
        object.__setattr__(self, "steering", _clamped(float(self.steering), -1.0, 1.0))


def steering_map(steering: float, chassis: ChassisParams) -> float:
    """Normalized steering input [-1, 1] to front wheel angle in radians.

    Linear map: delta = max_steer_rad * steering. Odd, monotone, and onto
    [-max_steer_rad, +max_steer_rad]. The true Pitman-arm kinematics are
    nonlinear; only the endpoint angle is calibrated, so the map is kept
    linear and isolated here for later replacement.
    """
    steering = _clamped(steering, -1.0, 1.0)
    return chassis.max_steer_rad * steering


def motor_force(throttle: float, speed_mps: float, motor: MotorParams) -> float:
    """Tractive force at the wheel from the lumped motor/ESC model.

    Linear torque-speed curve: full torque at stall, zero at no-load wheel
    speed, scaled by throttle. Never negative (no regenerative braking).
    """
    throttle = _clamped(throttle, 0.0, 1.0)
    omega = speed_mps / motor.wheel_radius_m
    scale = max(0.0, 1.0 - omega / motor.no_load_speed_radps)
    return throttle * (motor.stall_torque_Nm / motor.wheel_radius_m) * scale


def _sign(value: float) -> float:
    if value > 0.0:
        return 1.0
    if value < 0.0:
        return -1.0
    return 0.0


def _accel(
    speed: float, cmd: ActuationCommand, chassis: ChassisParams, motor: MotorParams
) -> float:
    f_motor = motor_force(cmd.throttle, speed, motor)
    f_brake = cmd.braking * motor.brake_force_max_N * _sign(speed)
    f_resist = (
        chassis.c_rr * chassis.mass_kg * GRAVITY_MPS2 * _sign(speed)
        + chassis.c_drag * speed * abs(speed)
    )
    return (f_motor - f_brake - f_resist) / chassis.mass_kg


def _advance_time(sim_time_s: float, dt: float) -> float:
    # Keep the clock exact: when the current time sits on the dt grid, the
    # next time is computed as (k+1)*dt rather than by repeated addition, so
    # after n steps the clock reads exactly n*dt.
    k = round(sim_time_s / dt)
    if abs(sim_time_s - k * dt) <= 1e-9 * max(1.0, abs(sim_time_s)):
        return (k + 1) * dt
    return sim_time_s + dt


def step(
    state: VehicleState,
    cmd: ActuationCommand,
    dt: float,
    chassis: ChassisParams,
    motor: MotorParams,
) -> VehicleState:
    """Advance the twin by one fixed step of ``dt`` seconds (classical RK4).

    The wheel angle is algebraic (no servo dynamics): delta follows the
    steering command instantly and is held constant across the step. Speed
    that crosses zero while the commanded drive force cannot sustain motion
    (braking/resistance dominate) clamps to zero, so braking never reverses
    the vehicle.

    Raises:
        NonFiniteState: an output became NaN/inf.
        ValueError: dt is not a finite positive number.
    """
    if not (isinstance(dt, (int, float)) and math.isfinite(dt) and dt > 0):
        raise ValueError(f"dt must be a finite positive number, got {dt!r}")
    delta = steering_map(cmd.steering, chassis)
    tan_delta = math.tan(delta)
    wheelbase = chassis.wheelbase_m

    def derivs(yaw: float, v: float) -> tuple[float, float, float, float]:
        return (
            v * math.cos(yaw),
            v * math.sin(yaw),
            v * tan_delta / wheelbase,
            _accel(v, cmd, chassis, motor),
        )

    yaw0, v0 = state.yaw_rad, state.speed_mps
    k1 = derivs(yaw0, v0)
    v_a = v0 + 0.5 * dt * k1[3]
    k2 = derivs(yaw0 + 0.5 * dt * k1[2], v_a)
    v_b = v0 + 0.5 * dt * k2[3]
    k3 = derivs(yaw0 + 0.5 * dt * k2[2], v_b)
    v_c = v0 + dt * k3[3]
    k4 = derivs(yaw0 + dt * k3[2], v_c)

    sixth = dt / 6.0
    x = state.x_m + sixth * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
    y = state.y_m + sixth * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
    yaw = yaw0 + sixth * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
    v = v0 + sixth * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3])

    # Brake-induced zero crossing: stop dead instead of oscillating around the
    # v=0 force discontinuity when the drive force at standstill cannot beat
    # brake + rolling drag. Stage velocities count as crossings too, otherwise
    # a braked vehicle creeps at the millimeter scale forever.
    if v0 != 0.0 and (v * v0 < 0.0 or v_a * v0 < 0.0 or v_b * v0 < 0.0 or v_c * v0 < 0.0):
        drive_at_rest = cmd.throttle * motor.stall_torque_Nm / motor.wheel_radius_m
        holding = (
            cmd.braking * motor.brake_force_max_N
            + chassis.c_rr * chassis.mass_kg * GRAVITY_MPS2
        )
        if drive_at_rest <= holding:
            v = 0.0

    new_state = VehicleState(
        x_m=x,
        y_m=y,
        yaw_rad=yaw,
        speed_mps=v,
        steer_rad=delta,
        sim_time_s=_advance_time(state.sim_time_s, dt),
    )
    return new_state


def steady_turn_radius(delta_rad: float, chassis: ChassisParams) -> float:
    """Radius of the steady-state circle for a constant wheel angle.

    R = wheelbase / tan(|delta|).

    Raises:
        ZeroSteer: delta is zero (the radius is infinite).
        ValueError: |delta| exceeds max_steer_rad.
    """
    if delta_rad == 0.0:
        raise ZeroSteer("turn radius is infinite at zero wheel angle")
    if not math.isfinite(delta_rad) or abs(delta_rad) > chassis.max_steer_rad:
        raise ValueError(f"wheel angle {delta_rad!r} outside [-max_steer, max_steer]")
    return chassis.wheelbase_m / math.tan(abs(delta_rad))
