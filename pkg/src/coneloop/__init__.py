"""coneloop: a desk-scale co-simulation testbed.

A JSON pub/sub bridge connects a planar vehicle digital twin to a cone-lane
autonomy stack (perception -> planning -> control). The closed loop runs in
one process or split across two over TCP in lock step, driven by layered
scenario configuration, with a metrics harness and diagnostic plots.
"""

from .autonomy import ConeEstimate, ControllerParams, Plan, PlannerParams, control, plan
from .bridge import (
    EndpointConfig,
    Handshake,
    Session,
    SyncPolicy,
    establish,
    loopback_pair,
)
from .config import Scenario, deep_merge, load_scenario
from .harness import RunReport, metrics, run_distributed, run_local
from .sensors import CameraModel, Cone, Detection, LidarParams, detect, lidar_scan, project_cone
from .twin import (
    ActuationCommand,
    ChassisParams,
    MotorParams,
    VehicleState,
    motor_force,
    steady_turn_radius,
    steering_map,
    step,
)
from .wire import CodecRegistry, MessageEnvelope, decode_frame, encode_frame

__version__ = "0.1.0"
