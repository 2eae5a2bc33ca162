"""Synthetic sensing: pinhole-camera cone detections and a planar lidar ring.

The camera detector is a geometric oracle standing in for a learned network:
it projects each cone's bounding cylinder through an ideal pinhole model and
reports the enclosing pixel box. The interface (a list of Detection) is the
same one a trained detector would fill, so one can be slotted in later.

Conventions: vehicle frame is x forward / y left, world yaw measured from +x.
The camera sits at (mount_x_m, 0, mount_height_m) in the vehicle frame with a
horizontal optical axis along the heading (zero pitch keeps the ground-plane
inversion exact). Camera frame: X right, Y down, Z forward, so a ground point
ahead projects below the principal row.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .twin import VehicleState

CONE_COLORS = ("red", "green")

# A cone base at or behind this camera-frame depth is not projected.
MIN_DEPTH_M = 0.05


@dataclass(frozen=True)
class CameraModel:
    fx: float = 600.0
    fy: float = 600.0
    cx: float = 320.0
    cy: float = 240.0
    width: int = 640
    height: int = 480
    mount_x_m: float = 0.0
    mount_height_m: float = 0.2
    noise_px: float = 0.0          # std dev of per-corner pixel noise
    miss_rate: float = 0.0         # false-negative probability per cone per frame

    def __post_init__(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        if self.mount_height_m <= 0:
            raise ValueError("mount_height_m must be positive")
        if self.noise_px < 0:
            raise ValueError("noise_px must be non-negative")
        if not (0.0 <= self.miss_rate < 1.0):
            raise ValueError("miss_rate must be in [0, 1)")


@dataclass(frozen=True)
class Cone:
    """World-frame cone: base-center position, boundary color, size."""

    x_m: float
    y_m: float
    color: str
    height_m: float = 0.3
    radius_m: float = 0.1

    def __post_init__(self) -> None:
        if self.color not in CONE_COLORS:
            raise ValueError(f"color must be one of {CONE_COLORS}, got {self.color!r}")
        if self.height_m <= 0 or self.radius_m <= 0:
            raise ValueError("cone height and radius must be positive")


@dataclass(frozen=True)
class Detection:
    """Pixel bounding box with class label and confidence.

    Coordinates are real-valued; rounding to integer pixels happens only when
    a detection is emitted onto the wire (see codecs), which keeps in-process
    geometry exact.
    """

    u_min: float
    v_min: float
    u_max: float
    v_max: float
    label: str
    confidence: float = 1.0

    def __post_init__(self) -> None:
        if not (self.u_min < self.u_max and self.v_min < self.v_max):
            raise ValueError("detection box is empty or inverted")
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError("confidence must be in [0, 1]")


@dataclass(frozen=True)
class LidarParams:
    beams: int = 32
    fov_rad: float = math.pi
    max_range_m: float = 10.0
    noise_m: float = 0.0
    mount_x_m: float = 0.0

    def __post_init__(self) -> None:
        if self.beams < 1:
            raise ValueError("beams must be >= 1")
        if not (0.0 < self.fov_rad <= 2.0 * math.pi):
            raise ValueError("fov_rad must be in (0, 2*pi]")
        if self.max_range_m <= 0:
            raise ValueError("max_range_m must be positive")
        if self.noise_m < 0:
            raise ValueError("noise_m must be non-negative")


def _to_vehicle_frame(state: VehicleState, x_m: float, y_m: float) -> tuple[float, float]:
    dx = x_m - state.x_m
    dy = y_m - state.y_m
    cos_y = math.cos(state.yaw_rad)
    sin_y = math.sin(state.yaw_rad)
    return dx * cos_y + dy * sin_y, -dx * sin_y + dy * cos_y


def project_cone(state: VehicleState, cam: CameraModel, cone: Cone) -> Detection | None:
    """Project one cone into the image; None when it is not visible.

    The bounding cylinder is reduced to four points: base center, the two
    lateral base extremes (center +/- radius in camera X at the same depth)
    and the apex. Their pinhole projections u = cx + fx*X/Z, v = cy + fy*Y/Z
    give the enclosing box, which is clipped to the image. Not visible means:
    base center at or behind the image plane, or an empty box after clipping.
    """
    forward, lateral = _to_vehicle_frame(state, cone.x_m, cone.y_m)
    z = forward - cam.mount_x_m
    if z <= MIN_DEPTH_M:
        return None
    x_cam = -lateral                       # camera X is right, vehicle y is left
    y_base = cam.mount_height_m            # ground sits mount_height below the axis
    y_apex = cam.mount_height_m - cone.height_m

    u_lo = cam.cx + cam.fx * (x_cam - cone.radius_m) / z
    u_hi = cam.cx + cam.fx * (x_cam + cone.radius_m) / z
    v_lo = cam.cy + cam.fy * y_apex / z
    v_hi = cam.cy + cam.fy * y_base / z

    u_min = max(0.0, min(u_lo, u_hi))
    u_max = min(float(cam.width), max(u_lo, u_hi))
    v_min = max(0.0, min(v_lo, v_hi))
    v_max = min(float(cam.height), max(v_lo, v_hi))
    if u_min >= u_max or v_min >= v_max:
        return None
    return Detection(u_min, v_min, u_max, v_max, cone.color, 1.0)


def detect(
    state: VehicleState,
    cam: CameraModel,
    cones: list[Cone],
    rng_seed,
) -> list[Detection]:
    """Detect all visible cones with seeded dropouts and pixel noise.

    Each visible cone is dropped independently with probability miss_rate;
    surviving box corners are perturbed with Gaussian noise_px, re-clipped to
    the image, and discarded if they invert. Output is sorted by (u_min,
    v_min) so equal inputs and seed give identical output.
    """
    rng = np.random.default_rng(rng_seed)
    out: list[Detection] = []
    for cone in cones:
        det = project_cone(state, cam, cone)
        if det is None:
            continue
        if rng.random() < cam.miss_rate:
            continue
        if cam.noise_px > 0.0:
            du_min, dv_min, du_max, dv_max = rng.normal(0.0, cam.noise_px, 4)
            u_min = max(0.0, min(det.u_min + du_min, float(cam.width)))
            v_min = max(0.0, min(det.v_min + dv_min, float(cam.height)))
            u_max = max(0.0, min(det.u_max + du_max, float(cam.width)))
            v_max = max(0.0, min(det.v_max + dv_max, float(cam.height)))
            if u_min >= u_max or v_min >= v_max:
                continue
            det = Detection(u_min, v_min, u_max, v_max, det.label, det.confidence)
        out.append(det)
    out.sort(key=lambda d: (d.u_min, d.v_min))
    return out


def lidar_scan(
    state: VehicleState,
    lidar: LidarParams,
    cones: list[Cone],
    rng_seed=None,
) -> list[float]:
    """Single planar lidar ring: nearest ray-circle hit per beam.

    Beams are spread evenly across the field of view centered on the heading
    (a single beam points straight ahead). Misses report max_range_m. Seeded
    Gaussian range noise is added when noise_m > 0 and the result is kept in
    (0, max_range_m].
    """
    if lidar.beams == 1:
        offsets = np.array([0.0])
    else:
        offsets = np.linspace(-lidar.fov_rad / 2.0, lidar.fov_rad / 2.0, lidar.beams)
    origin_x = state.x_m + lidar.mount_x_m * math.cos(state.yaw_rad)
    origin_y = state.y_m + lidar.mount_x_m * math.sin(state.yaw_rad)

    ranges = np.full(lidar.beams, float(lidar.max_range_m))
    for i, offset in enumerate(offsets):
        angle = state.yaw_rad + offset
        dx = math.cos(angle)
        dy = math.sin(angle)
        best = float(lidar.max_range_m)
        for cone in cones:
            ox = origin_x - cone.x_m
            oy = origin_y - cone.y_m
            # |o + t d|^2 = r^2 with |d| = 1
            b = 2.0 * (ox * dx + oy * dy)
            c = ox * ox + oy * oy - cone.radius_m * cone.radius_m
            disc = b * b - 4.0 * c
            if disc < 0.0:
                continue
            sqrt_disc = math.sqrt(disc)
            t1 = (-b - sqrt_disc) / 2.0
            t2 = (-b + sqrt_disc) / 2.0
            t = t1 if t1 > 0.0 else t2
            if 0.0 < t < best:
                best = t
        ranges[i] = best

    if lidar.noise_m > 0.0:
        rng = np.random.default_rng(rng_seed)
        ranges = ranges + rng.normal(0.0, lidar.noise_m, lidar.beams)
        ranges = np.clip(ranges, 1e-9, lidar.max_range_m)
    return [float(r) for r in ranges]
