"""Four wheel-leg robot: vehicle model, reference paths, behavior switching and MPC."""
from .behavior import (Behavior, BehaviorConfig, BehaviorSchedule, Obstacle, ScheduleError,
                       build_schedule, classify_obstacle, polygon_ramp, trigger)
from .model import (ChassisState, ControlInput, IntegrationError, ModelDomainError, TireState,
                    WheelState, ackermann_angles, chassis_derivative, combined_slip,
                    geometry_delta, plant_step, sideslip_angles, slip_ratio, tire_forces,
                    wheel_derivative)
from .mpc import MpcConfig, MpcSolution, horizon_end, solve
from .params import RobotParams, load_params
from .reference import (PathSpec, ReferencePoint, ReferenceRangeError, build_scenario_paths,
                        curvature_direction, make_path, sample_reference)
from .sim import (ScenarioConfig, TrajectoryLog, compare_runs, compute_metrics,
                  perception_probe, run_closed_loop)

__version__ = "0.1.0"

__all__ = [
    "Behavior",
    "BehaviorConfig",
    "BehaviorSchedule",
    "Obstacle",
    "ScheduleError",
    "build_schedule",
    "classify_obstacle",
    "polygon_ramp",
    "trigger",
    "ChassisState",
    "ControlInput",
    "IntegrationError",
    "ModelDomainError",
    "TireState",
    "WheelState",
    "ackermann_angles",
    "chassis_derivative",
    "combined_slip",
    "geometry_delta",
    "plant_step",
    "sideslip_angles",
    "slip_ratio",
    "tire_forces",
    "wheel_derivative",
    "MpcConfig",
    "MpcSolution",
    "horizon_end",
    "solve",
    "RobotParams",
    "load_params",
    "PathSpec",
    "ReferencePoint",
    "ReferenceRangeError",
    "build_scenario_paths",
    "curvature_direction",
    "make_path",
    "sample_reference",
    "ScenarioConfig",
    "TrajectoryLog",
    "compare_runs",
    "compute_metrics",
    "perception_probe",
    "run_closed_loop",
]
