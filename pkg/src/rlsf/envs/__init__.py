from .base import StepResult
from .driver import DriverConfig, DriverEnv, DriverWorld, VehicleState, driver_gt_cost, driver_step
from .gridworld import GridworldEnv, GridworldSpec, benchmark_5x5, gridworld_build

__all__ = [
    "StepResult",
    "DriverConfig",
    "DriverEnv",
    "DriverWorld",
    "VehicleState",
    "driver_gt_cost",
    "driver_step",
    "GridworldEnv",
    "GridworldSpec",
    "benchmark_5x5",
    "gridworld_build",
]
