"""Synthetic worlds, sensor simulation, log replay and trajectory evaluation."""

from .evaluate import associate, compute_ate_rmse
from .eventlog import read_event_log, read_trajectory, truth_samples, write_event_log, write_trajectory
from .replay import ReplayError, replay
from .scenario import ScenarioSpec, load_noise, load_scenario, make_world, realistic_noise, simulate
from .sensors import LidarModel, NoiseModel, SensorRates, SimulatedRun, simulate_sensors
from .trajectory import Trajectory, TrajectorySpec, Waypoint, loop_trajectory, straight_line
from .world import WorldSpec, generate_structures, generate_world

__all__ = [
    "associate",
    "compute_ate_rmse",
    "read_event_log",
    "read_trajectory",
    "truth_samples",
    "write_event_log",
    "write_trajectory",
    "ReplayError",
    "replay",
    "ScenarioSpec",
    "load_noise",
    "load_scenario",
    "make_world",
    "realistic_noise",
    "simulate",
    "LidarModel",
    "NoiseModel",
    "SensorRates",
    "SimulatedRun",
    "simulate_sensors",
    "Trajectory",
    "TrajectorySpec",
    "Waypoint",
    "loop_trajectory",
    "straight_line",
    "WorldSpec",
    "generate_structures",
    "generate_world",
]
