"""Camera-oracle and lidar tests against hand-computed pinhole geometry."""

from __future__ import annotations

import math

import numpy as np
import pytest

from coneloop.codecs import round_half_up
from coneloop.sensors import (
    CameraModel,
    Cone,
    Detection,
    LidarParams,
    detect,
    lidar_scan,
    project_cone,
)
from coneloop.twin import VehicleState

CAM = CameraModel()
ORIGIN = VehicleState()


# ---------------------------------------------------------------------------
# Projection

def test_projection_worked_example_dead_ahead():
    # Range 3.0 m, camera height 0.2 m, fy = 600:
    # base-center row v = 240 + 600*0.2/3.0 = 280, box centered on u = 320.
    cone = Cone(3.0, 0.0, "red")
    det = project_cone(ORIGIN, CAM, cone)
    assert det is not None
    assert det.v_max == pytest.approx(280.0, abs=1e-12)
    assert (det.u_min + det.u_max) / 2.0 == pytest.approx(320.0, abs=1e-12)
    # Apex row: (0.2 - 0.3) m above-axis at 3.0 m: 240 - 600*0.1/3 = 220.
    assert det.v_min == pytest.approx(220.0, abs=1e-12)
    assert det.label == "red" and det.confidence == 1.0


def test_cone_behind_vehicle_absent():
    assert project_cone(ORIGIN, CAM, Cone(-1.0, 0.0, "red")) is None


def test_cone_just_behind_image_plane_absent():
    assert project_cone(ORIGIN, CAM, Cone(0.05, 0.0, "red")) is None


def test_cone_far_left_clipped_to_absent():
    # At 2 m range, lateral 3 m: u offset = 600*3/2 = 900 px, far outside.
    assert project_cone(ORIGIN, CAM, Cone(2.0, 3.0, "red")) is None


def test_box_height_strictly_decreases_with_range():
    heights = []
    for distance in np.linspace(2.0, 12.0, 30):
        det = project_cone(ORIGIN, CAM, Cone(float(distance), 0.0, "green"))
        heights.append(det.v_max - det.v_min)
    assert all(a > b for a, b in zip(heights, heights[1:]))


def test_projection_respects_vehicle_pose():
    # Vehicle at (1, 1) heading 90 deg; cone 3 m along +y is dead ahead.
    state = VehicleState(x_m=1.0, y_m=1.0, yaw_rad=math.pi / 2.0)
    det = project_cone(state, CAM, Cone(1.0, 4.0, "red"))
    assert det is not None
    assert (det.u_min + det.u_max) / 2.0 == pytest.approx(320.0, abs=1e-9)
    assert det.v_max == pytest.approx(280.0, abs=1e-9)


def test_mirror_symmetry_within_one_pixel_after_rounding():
    for y in (0.3, 0.8, 1.4):
        left = project_cone(ORIGIN, CAM, Cone(4.0, y, "red"))
        right = project_cone(ORIGIN, CAM, Cone(4.0, -y, "red"))
        assert left is not None and right is not None
        assert abs(round_half_up(left.u_min) - (2 * 320 - round_half_up(right.u_max))) <= 1
        assert abs(round_half_up(left.u_max) - (2 * 320 - round_half_up(right.u_min))) <= 1
        assert left.v_min == pytest.approx(right.v_min, abs=1e-9)
        assert left.v_max == pytest.approx(right.v_max, abs=1e-9)


# ---------------------------------------------------------------------------
# detect()

CONES = [Cone(3.0, 0.2, "red"), Cone(4.5, -0.4, "green"), Cone(6.0, 0.5, "red")]


def test_noiseless_detect_equals_projections():
    expected = sorted(
        (project_cone(ORIGIN, CAM, c) for c in CONES),
        key=lambda d: (d.u_min, d.v_min),
    )
    assert detect(ORIGIN, CAM, CONES, rng_seed=0) == expected


def test_detect_deterministic_for_fixed_seed():
    cam = CameraModel(noise_px=2.0, miss_rate=0.3)
    a = detect(ORIGIN, cam, CONES, rng_seed=42)
    b = detect(ORIGIN, cam, CONES, rng_seed=42)
    assert a == b
    c = detect(ORIGIN, cam, CONES, rng_seed=43)
    assert a != c  # overwhelmingly likely with noise on


def test_detect_output_sorted():
    dets = detect(ORIGIN, CAM, CONES, rng_seed=0)
    keys = [(d.u_min, d.v_min) for d in dets]
    assert keys == sorted(keys)


def test_miss_rate_binomial_fraction():
    # 10,000 single-cone frames at miss_rate 0.5: empirical miss fraction
    # must land within 0.5 +/- 0.02 (4 sigma is about 0.02 here).
    cam = CameraModel(miss_rate=0.5)
    cone = [Cone(3.0, 0.0, "red")]
    misses = sum(
        1 for i in range(10_000) if not detect(ORIGIN, cam, cone, rng_seed=(7, i))
    )
    assert abs(misses / 10_000 - 0.5) < 0.02


def test_noise_perturbs_and_discards_inverted():
    cam = CameraModel(noise_px=1.5)
    dets = detect(ORIGIN, cam, CONES, rng_seed=5)
    for det in dets:
        assert det.u_min < det.u_max and det.v_min < det.v_max
        assert 0.0 <= det.u_min and det.u_max <= cam.width
        assert 0.0 <= det.v_min and det.v_max <= cam.height


# ---------------------------------------------------------------------------
# Lidar

LIDAR = LidarParams(beams=9, fov_rad=math.pi / 2.0, max_range_m=10.0)


def test_lidar_no_cones_all_max_range():
    ranges = lidar_scan(ORIGIN, LIDAR, [])
    assert ranges == [10.0] * 9


def test_lidar_central_beam_hits_cone_edge():
    # Cone of radius 0.1 centered 2.0 m dead ahead: central beam range 1.9.
    ranges = lidar_scan(ORIGIN, LIDAR, [Cone(2.0, 0.0, "red", radius_m=0.1)])
    center = ranges[len(ranges) // 2]
    assert center == pytest.approx(1.9, abs=1e-12)


def test_lidar_cone_behind_fov_unseen():
    ranges = lidar_scan(ORIGIN, LIDAR, [Cone(-2.0, 0.0, "red")])
    assert ranges == [10.0] * 9


def test_lidar_single_beam_points_forward():
    one = LidarParams(beams=1, fov_rad=math.pi, max_range_m=5.0)
    assert lidar_scan(ORIGIN, one, [Cone(2.0, 0.0, "red", radius_m=0.1)]) == [
        pytest.approx(1.9, abs=1e-12)
    ]


def test_lidar_noise_seeded_and_clamped():
    noisy = LidarParams(beams=16, fov_rad=math.pi, max_range_m=4.0, noise_m=0.5)
    cones = [Cone(1.0, 0.0, "red")]
    a = lidar_scan(ORIGIN, noisy, cones, rng_seed=3)
    b = lidar_scan(ORIGIN, noisy, cones, rng_seed=3)
    assert a == b
    assert all(0.0 < r <= 4.0 for r in a)


def test_lidar_mount_offset_shortens_range():
    forward_mounted = LidarParams(beams=1, fov_rad=math.pi, max_range_m=10.0, mount_x_m=0.5)
    ranges = lidar_scan(ORIGIN, forward_mounted, [Cone(2.0, 0.0, "red", radius_m=0.1)])
    assert ranges[0] == pytest.approx(1.4, abs=1e-12)


# ---------------------------------------------------------------------------
# Validation

def test_detection_invariants():
    with pytest.raises(ValueError):
        Detection(10.0, 5.0, 10.0, 8.0, "red")
    with pytest.raises(ValueError):
        Detection(0.0, 8.0, 10.0, 5.0, "red")


def test_camera_and_cone_validation():
    with pytest.raises(ValueError):
        CameraModel(miss_rate=1.0)
    with pytest.raises(ValueError):
        CameraModel(fx=-1.0)
    with pytest.raises(ValueError):
        Cone(0.0, 0.0, "blue")
    with pytest.raises(ValueError):
        LidarParams(beams=0)
