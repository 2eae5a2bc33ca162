"""Layered scenario configuration: packaged defaults + deep-merged overrides.

Scenario files are written in a YAML-compatible subset: maps with string
keys, sequences, scalars and comments. Anchors, aliases and duplicate keys
are rejected so a document means exactly what it shows. Files are folded
left-to-right over the packaged defaults (later files win) with the merge
rules of :func:`deep_merge`, then validated and materialized into a
:class:`Scenario`.
"""

from __future__ import annotations

import copy
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import yaml

from .autonomy import ControllerParams, PlannerParams
from .bridge import SyncPolicy
from .sensors import CameraModel, Cone, LidarParams
from .twin import ChassisParams, MotorParams
from .wire import canonical_json

MAX_DOC_DEPTH = 32


class ConfigError(Exception):
    """Base class for configuration errors."""


class DepthExceeded(ConfigError):
    """A configuration tree nests deeper than 32 levels."""


class ParseError(ConfigError):
    """A scenario file failed to parse; carries file and line."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = f"{path or '<config>'}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}")


class ValidationError(ConfigError):
    """A merged configuration violates a constraint; names the offending key."""


# ---------------------------------------------------------------------------
# Packaged defaults. Chassis geometry (wheelbase/track) is measured; the rest
# are engineering placeholders, all overridable from scenario files.

DEFAULTS: dict[str, Any] = {
    "course": {
        "type": "s_curve",
        "pairs": 10,
        "spacing_m": 1.5,
        "lane_width_m": 1.0,
        "lateral_shift_m": 1.2,
        "runout_cones": 2,
        "cone_height_m": 0.3,
        "cone_radius_m": 0.1,
        "cones": None,            # used when type == "cones"
    },
    "chassis": {
        "wheelbase_m": 0.47,
        "track_m": 0.34,
        "mass_kg": 12.0,
        "max_steer_rad": 0.44,
        "c_rr": 0.015,
        "c_drag": 0.05,
    },
    "motor": {
        "stall_torque_Nm": 3.0,
        "no_load_speed_radps": 180.0,
        "wheel_radius_m": 0.095,
        "brake_force_max_N": 40.0,
    },
    "camera": {
        "fx": 600.0,
        "fy": 600.0,
        "cx": 320.0,
        "cy": 240.0,
        "width": 640,
        "height": 480,
        "mount_x_m": 0.0,
        "mount_height_m": 0.2,
        "noise_px": 0.0,
        "miss_rate": 0.0,
    },
    "lidar": None,                # or {beams, fov_rad, max_range_m, noise_m, mount_x_m}
    "planner": {
        "lookahead_m": 2.0,
        "poly_degree": 2,
        "min_per_side": 2,
        "lane_halfwidth_m": 0.5,
    },
    "controller": {
        "target_speed_mps": 1.5,
        "kp_speed": 0.8,
    },
    "sync": {
        "mode": "lock_step",
        "step_dt_s": None,        # defaults to dynamics_dt_s
    },
    "dynamics_dt_s": 0.01,
    "sensor_period_s": 0.1,
    "max_duration_s": 30.0,
    "seed": 0,
}


# ---------------------------------------------------------------------------
# Deep merge

def _check_depth(doc: Any, what: str) -> None:
    stack = [(doc, 1)]
    while stack:
        node, depth = stack.pop()
        if depth > MAX_DOC_DEPTH:
            raise DepthExceeded(f"{what} nests deeper than {MAX_DOC_DEPTH} levels")
        if isinstance(node, dict):
            stack.extend((v, depth + 1) for v in node.values())
        elif isinstance(node, list):
            stack.extend((v, depth + 1) for v in node)


def deep_merge(base: dict[str, Any], override: dict[str, Any]) -> dict[str, Any]:
    """Merge two configuration trees, override winning.

    Maps merge key-wise recursively; scalars, sequences and type-conflicting
    values are replaced wholesale by the override. Keys present on only one
    side are kept. Inputs are left untouched; the result shares no mutable
    structure with either.
    """
    _check_depth(base, "base document")
    _check_depth(override, "override document")
    return _merge(base, override)


def _merge(base: Any, override: Any) -> Any:
    if isinstance(base, dict) and isinstance(override, dict):
        merged: dict[str, Any] = {}
        for key, value in base.items():
            if key in override:
                merged[key] = _merge(value, override[key])
            else:
                merged[key] = copy.deepcopy(value)
        for key, value in override.items():
            if key not in base:
                merged[key] = copy.deepcopy(value)
        return merged
    return copy.deepcopy(override)


# ---------------------------------------------------------------------------
# YAML-subset loading

class _SubsetLoader(yaml.SafeLoader):
    """SafeLoader restricted to plain maps/sequences/scalars.

    Anchors, aliases and duplicate map keys are parse errors instead of the
    silent YAML behaviors, and map keys must be strings.
    """


def _subset_compose_node(self: _SubsetLoader, parent, index):
    if self.check_event(yaml.events.AliasEvent):
        event = self.peek_event()
        raise ParseError("aliases are not supported", line=event.start_mark.line + 1)
    event = self.peek_event()
    if getattr(event, "anchor", None) is not None:
        raise ParseError("anchors are not supported", line=event.start_mark.line + 1)
    return yaml.SafeLoader.compose_node(self, parent, index)


def _subset_construct_mapping(self: _SubsetLoader, node, deep=False):
    mapping: dict[str, Any] = {}
    for key_node, value_node in node.value:
        key = self.construct_object(key_node, deep=True)
        if not isinstance(key, str):
            raise ParseError(
                f"map keys must be strings, got {key!r}",
                line=key_node.start_mark.line + 1,
            )
        if key in mapping:
            raise ParseError(
                f"duplicate key {key!r}", line=key_node.start_mark.line + 1
            )
        mapping[key] = self.construct_object(value_node, deep=deep)
    return mapping


_SubsetLoader.compose_node = _subset_compose_node
_SubsetLoader.add_constructor(
    yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _subset_construct_mapping
)


def load_document(text: str, path: str | None = None) -> dict[str, Any]:
    """Parse one scenario document from text. Empty text is an empty map."""
    try:
        doc = yaml.load(text, Loader=_SubsetLoader)
    except ParseError as exc:
        raise ParseError(str(exc).split(": ", 1)[-1], path=path, line=exc.line) from exc
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark else None
        raise ParseError(exc.problem or "invalid syntax", path=path, line=line) from exc
    except yaml.YAMLError as exc:
        raise ParseError(str(exc), path=path) from exc
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ParseError("top level must be a map", path=path)
    _check_depth(doc, path or "document")
    return doc


def load_document_file(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read file: {exc}", path=str(path)) from exc
    return load_document(text, path=str(path))


# ---------------------------------------------------------------------------
# Scenario materialization

@dataclass(frozen=True)
class Scenario:
    """A fully merged and validated run description."""

    course: tuple[Cone, ...]
    chassis: ChassisParams
    motor: MotorParams
    camera: CameraModel
    lidar: LidarParams | None
    planner: PlannerParams
    controller: ControllerParams
    sync: SyncPolicy
    dynamics_dt_s: float
    sensor_period_s: float
    max_duration_s: float
    seed: int
    document: dict[str, Any]      # the merged source tree, for dumps

    @property
    def decimation(self) -> int:
        """Dynamics steps per sensor frame."""
        return round(self.sensor_period_s / self.dynamics_dt_s)

    def to_json(self) -> bytes:
        """Canonical serialization of the merged document; byte-identical for
        identical input path lists."""
        return canonical_json(self.document)


def s_curve_course(
    pairs: int,
    spacing_m: float,
    lane_width_m: float,
    lateral_shift_m: float,
    runout_cones: int = 2,
    cone_height_m: float = 0.3,
    cone_radius_m: float = 0.1,
) -> list[Cone]:
    """Cone pairs along a gentle S (a smooth lane-change profile).

    The centerline starts at the origin heading +x with zero slope, drifts
    lateral_shift_m to the left over the course length, and ends with zero
    slope again:  y(x) = A * (s - sin(2*pi*s) / (2*pi)),  s = x / length.
    Pairs are offset half a lane width along the local normal; pair i's
    midpoint therefore lies exactly on the centerline. Red marks the left
    boundary, green the right.

    ``runout_cones`` extra red cones continue the left boundary straight past
    the finish. They are unpaired, so the finish gate stays at the last pair;
    their job is to keep the planner's single-boundary fallback alive while
    the vehicle drives out through the gate (a camera this narrow loses the
    final pair about a meter before reaching it).
    """
    if pairs < 1:
        raise ValidationError("course.pairs must be >= 1")
    if runout_cones < 0:
        raise ValidationError("course.runout_cones must be >= 0")
    cones: list[Cone] = []
    length = spacing_m * (pairs - 1)
    half = lane_width_m / 2.0
    for i in range(pairs):
        x = i * spacing_m
        if length > 0:
            s = x / length
            y = lateral_shift_m * (s - math.sin(2.0 * math.pi * s) / (2.0 * math.pi))
            slope = lateral_shift_m / length * (1.0 - math.cos(2.0 * math.pi * s))
        else:
            y, slope = 0.0, 0.0
        theta = math.atan(slope)
        nx, ny = -math.sin(theta), math.cos(theta)
        cones.append(Cone(x + half * nx, y + half * ny, "red", cone_height_m, cone_radius_m))
        cones.append(Cone(x - half * nx, y - half * ny, "green", cone_height_m, cone_radius_m))
    # The lane-change profile ends with zero slope, so the runout is straight.
    end_y = lateral_shift_m if pairs > 1 else 0.0
    for j in range(1, runout_cones + 1):
        cones.append(
            Cone(length + j * spacing_m, end_y + half, "red", cone_height_m, cone_radius_m)
        )
    return cones


def _get_number(section: dict, key: str, where: str, *, positive=False, non_negative=False):
    value = section.get(key)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(f"{where}.{key} must be a number, got {value!r}")
    if positive and not value > 0:
        raise ValidationError(f"{where}.{key} must be > 0, got {value!r}")
    if non_negative and value < 0:
        raise ValidationError(f"{where}.{key} must be >= 0, got {value!r}")
    return value


def _get_int(section: dict, key: str, where: str, *, minimum: int | None = None) -> int:
    value = section.get(key)
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValidationError(f"{where}.{key} must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ValidationError(f"{where}.{key} must be >= {minimum}, got {value!r}")
    return value


def _build(cls, section: dict, where: str, fields: dict[str, Any]):
    try:
        return cls(**fields)
    except (ValueError, TypeError) as exc:
        raise ValidationError(f"{where}: {exc}") from exc


def _materialize_course(section: Any) -> tuple[Cone, ...]:
    if not isinstance(section, dict):
        raise ValidationError(f"course must be a map, got {section!r}")
    kind = section.get("type")
    if kind == "s_curve":
        return tuple(
            s_curve_course(
                pairs=_get_int(section, "pairs", "course", minimum=1),
                spacing_m=_get_number(section, "spacing_m", "course", positive=True),
                lane_width_m=_get_number(section, "lane_width_m", "course", positive=True),
                lateral_shift_m=_get_number(section, "lateral_shift_m", "course"),
                runout_cones=_get_int(section, "runout_cones", "course", minimum=0),
                cone_height_m=_get_number(section, "cone_height_m", "course", positive=True),
                cone_radius_m=_get_number(section, "cone_radius_m", "course", positive=True),
            )
        )
    if kind == "cones":
        raw = section.get("cones")
        if not isinstance(raw, list):
            raise ValidationError("course.cones must be a sequence of cone maps")
        cones = []
        for i, entry in enumerate(raw):
            if not isinstance(entry, dict):
                raise ValidationError(f"course.cones[{i}] must be a map")
            where = f"course.cones[{i}]"
            cones.append(
                _build(
                    Cone,
                    entry,
                    where,
                    {
                        "x_m": _get_number(entry, "x_m", where),
                        "y_m": _get_number(entry, "y_m", where),
                        "color": entry.get("color"),
                        "height_m": _get_number(entry, "height_m", where, positive=True)
                        if "height_m" in entry
                        else 0.3,
                        "radius_m": _get_number(entry, "radius_m", where, positive=True)
                        if "radius_m" in entry
                        else 0.1,
                    },
                )
            )
        return tuple(cones)
    raise ValidationError(f"course.type must be 's_curve' or 'cones', got {kind!r}")


_KNOWN_KEYS: dict[str, Any] = {
    "course": {"type", "pairs", "spacing_m", "lane_width_m", "lateral_shift_m",
               "runout_cones", "cone_height_m", "cone_radius_m", "cones"},
    "chassis": set(DEFAULTS["chassis"]),
    "motor": set(DEFAULTS["motor"]),
    "camera": set(DEFAULTS["camera"]),
    "lidar": {"beams", "fov_rad", "max_range_m", "noise_m", "mount_x_m"},
    "planner": set(DEFAULTS["planner"]),
    "controller": set(DEFAULTS["controller"]),
    "sync": set(DEFAULTS["sync"]),
    "dynamics_dt_s": None,
    "sensor_period_s": None,
    "max_duration_s": None,
    "seed": None,
}


def _warn_unknown_keys(doc: dict[str, Any]) -> None:
    for key, value in doc.items():
        if key not in _KNOWN_KEYS:
            warnings.warn(f"unknown configuration key {key!r} ignored", stacklevel=3)
        elif isinstance(_KNOWN_KEYS[key], set) and isinstance(value, dict):
            for sub in value:
                if sub not in _KNOWN_KEYS[key]:
                    warnings.warn(
                        f"unknown configuration key {key}.{sub!r} ignored", stacklevel=3
                    )


def _known(doc: dict[str, Any], section: str) -> dict[str, Any]:
    """The section's dict restricted to known keys (unknown ones already
    warned about by _warn_unknown_keys)."""
    raw = doc.get(section) or {}
    allowed = _KNOWN_KEYS[section]
    return {k: v for k, v in raw.items() if k in allowed}


def materialize(doc: dict[str, Any]) -> Scenario:
    """Validate a merged document and build the Scenario it describes."""
    _warn_unknown_keys(doc)

    dt = _get_number(doc, "dynamics_dt_s", "scenario", positive=True)
    period = _get_number(doc, "sensor_period_s", "scenario", positive=True)
    ratio = period / dt
    if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
        raise ValidationError(
            f"sensor_period_s ({period}) must be an integer multiple of "
            f"dynamics_dt_s ({dt})"
        )
    max_duration = _get_number(doc, "max_duration_s", "scenario", positive=True)
    seed = _get_int(doc, "seed", "scenario", minimum=0)

    chassis = _build(ChassisParams, doc, "chassis", _known(doc, "chassis"))
    motor = _build(MotorParams, doc, "motor", _known(doc, "motor"))
    camera = _build(CameraModel, doc, "camera", _known(doc, "camera"))
    lidar = (
        _build(LidarParams, doc, "lidar", _known(doc, "lidar"))
        if isinstance(doc.get("lidar"), dict)
        else None
    )
    planner = _build(PlannerParams, doc, "planner", _known(doc, "planner"))
    controller_section = _known(doc, "controller")
    # The controller's notion of vehicle geometry always follows the chassis.
    controller_section["wheelbase_m"] = chassis.wheelbase_m
    controller_section["max_steer_rad"] = chassis.max_steer_rad
    controller = _build(ControllerParams, doc, "controller", controller_section)

    sync_section = _known(doc, "sync")
    mode = sync_section.get("mode", "lock_step")
    step_dt = sync_section.get("step_dt_s")
    if step_dt is None:
        step_dt = dt
    elif mode == "lock_step" and step_dt != dt:
        # The runner exchanges one barrier per dynamics step; a different
        # cadence would silently change the loop semantics.
        raise ValidationError(
            f"sync.step_dt_s ({step_dt}) must equal dynamics_dt_s ({dt}) "
            "in lock_step mode (or be null to follow it)"
        )
    sync = _build(SyncPolicy, doc, "sync", {"mode": mode, "step_dt": step_dt})

    course = _materialize_course(doc.get("course"))

    return Scenario(
        course=course,
        chassis=chassis,
        motor=motor,
        camera=camera,
        lidar=lidar,
        planner=planner,
        controller=controller,
        sync=sync,
        dynamics_dt_s=float(dt),
        sensor_period_s=float(period),
        max_duration_s=float(max_duration),
        seed=seed,
        document=doc,
    )


def load_scenario(paths: list[str | Path], seed: int | None = None) -> Scenario:
    """Fold scenario files left-to-right over the packaged defaults.

    Later files win; an empty path list yields the packaged defaults. The
    optional ``seed`` overrides the merged document's seed (CLI convenience).
    Unknown keys warn rather than error.
    """
    doc = copy.deepcopy(DEFAULTS)
    for path in paths:
        doc = deep_merge(doc, load_document_file(path))
    if seed is not None:
        doc = deep_merge(doc, {"seed": seed})
    return materialize(doc)


def dump_defaults() -> str:
    """The packaged defaults as a YAML document (for `config dump-defaults`)."""
    return yaml.safe_dump(DEFAULTS, sort_keys=True, default_flow_style=False)
