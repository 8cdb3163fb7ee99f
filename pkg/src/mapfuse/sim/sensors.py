"""Sensor simulation along a ground-truth trajectory.

The trajectory describes the IMU (body) frame. LIDAR scans and logged ground
truth use the LIDAR frame ``T_l2m ∘ T_imu``. All streams share the time grid
``k / rate`` so coincident samples carry bitwise-equal timestamps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from ..events import GnssEvent, ImuEvent, LidarEvent, MagEvent, TruthEvent
from ..map_store import PointCloud
from ..preintegration import Extrinsics, gravity_vector, to_lidar_frame
from .trajectory import Trajectory

# order of records sharing a timestamp
EVENT_ORDER = {ImuEvent: 0, GnssEvent: 1, MagEvent: 2, LidarEvent: 3, TruthEvent: 4}


@dataclass(frozen=True)
class NoiseModel:
    """Sensor noise. Densities are per √Hz; discrete σ is density·√rate."""

    gyro_density: float = 0.0
    accel_density: float = 0.0
    gyro_bias: tuple[float, float, float] = (0.0, 0.0, 0.0)
    accel_bias: tuple[float, float, float] = (0.0, 0.0, 0.0)
    lidar_range_sigma: float = 0.0
    gnss_position_sigma: tuple[float, float, float] = (0.0, 0.0, 0.0)
    gnss_velocity_sigma: float = 0.0
    mag_sigma: float = 0.0
    dropouts: tuple[tuple[float, float], ...] = ()
    # scans at these times are replaced by random clutter
    lidar_corruptions: tuple[float, ...] = ()
    seed: int = 0

    def __post_init__(self):
        scalars = [self.gyro_density, self.accel_density, self.lidar_range_sigma, self.gnss_velocity_sigma, self.mag_sigma]
        if any(s < 0 for s in scalars) or any(s < 0 for s in self.gnss_position_sigma):
            raise ValueError("noise σ must be nonnegative")
        for a, b in self.dropouts:
            if not b >= a:
                raise ValueError(f"dropout window ({a}, {b}) is reversed")

    def in_dropout(self, t: float) -> bool:
        return any(a <= t <= b for a, b in self.dropouts)

    def near_dropout(self, t: float, margin: float = 1.0) -> bool:
        return any(a - margin <= t < a or b < t <= b + margin for a, b in self.dropouts)


@dataclass(frozen=True)
class SensorRates:
    imu: float = 200.0
    lidar: float = 10.0
    gnss: float = 1.0

    def __post_init__(self):
        if min(self.imu, self.lidar, self.gnss) <= 0:
            raise ValueError("rates must be positive")


@dataclass(frozen=True)
class LidarModel:
    max_range: float = 80.0
    min_range: float = 0.5
    max_points: int = 4000
    clutter_points: int = 1500


@dataclass
class SimulatedRun:
    events: list = field(default_factory=list)
    truth: list[TruthEvent] = field(default_factory=list)

    @property
    def lidar_count(self) -> int:
        return sum(1 for e in self.events if isinstance(e, LidarEvent))


def _grid(t0: float, t1: float, rate: float) -> np.ndarray:
    k0 = math.ceil(t0 * rate - 1e-9)
    k1 = math.floor(t1 * rate + 1e-9)
    return np.arange(k0, k1 + 1) / rate


def imu_measurement(traj: Trajectory, t: float, g) -> tuple[np.ndarray, np.ndarray]:
    """Noise-free body rate and specific force at ``t``."""
    R = traj.rotation(t)
    gyro = np.array([0.0, 0.0, traj.yaw_rate(t)])
    accel = R.T @ (traj.acceleration(t) - g)
    return gyro, accel


def lidar_scan(
    world: cKDTree,
    world_points: np.ndarray,
    pose,
    model: LidarModel,
    range_sigma: float,
    rng: np.random.Generator,
) -> PointCloud:
    """World points within range, expressed in the sensor frame, with range noise."""
    center = pose.translation
    idx = np.asarray(world.query_ball_point(center, model.max_range), dtype=int)
    idx.sort()
    if len(idx) > model.max_points:
        idx = np.sort(rng.choice(idx, model.max_points, replace=False))
    local = (world_points[idx] - center) @ pose.R
    r = np.linalg.norm(local, axis=1)
    keep = r >= model.min_range
    local, r = local[keep], r[keep]
    if range_sigma > 0 and len(local):
        local = local * (1.0 + rng.normal(0.0, range_sigma, len(r)) / r)[:, None]
    return PointCloud(local)


def clutter_scan(model: LidarModel, rng: np.random.Generator) -> PointCloud:
    half = 0.5 * model.max_range
    pts = rng.uniform([-half, -half, -2.0], [half, half, 8.0], size=(model.clutter_points, 3))
    return PointCloud(pts)


def simulate_sensors(
    world: PointCloud,
    traj: Trajectory,
    noise: NoiseModel | None = None,
    rates: SensorRates | None = None,
    lidar: LidarModel | None = None,
    extrinsics: Extrinsics | None = None,
    gravity: float | None = None,
    t_end: float | None = None,
) -> SimulatedRun:
    noise = noise or NoiseModel()
    rates = rates or SensorRates()
    lidar = lidar or LidarModel()
    extrinsics = extrinsics or Extrinsics()
    g = gravity_vector() if gravity is None else gravity_vector(gravity)
    t0 = traj.t0
    t1 = traj.t1 if t_end is None else min(t_end, traj.t1)
    for a, b in noise.dropouts:
        if a < t0 or b > t1:
            raise ValueError(f"dropout window ({a}, {b}) lies outside the run [{t0}, {t1}]")

    # independent streams keep one sensor's noise fixed when another changes
    seeds = np.random.SeedSequence(noise.seed).spawn(5)
    rng_imu, rng_lidar, rng_gnss, rng_mag, rng_clutter = (np.random.default_rng(s) for s in seeds)

    events: list = []
    truth: list[TruthEvent] = []
    gyro_sigma = noise.gyro_density * math.sqrt(rates.imu)
    accel_sigma = noise.accel_density * math.sqrt(rates.imu)
    bg = np.asarray(noise.gyro_bias, dtype=float)
    ba = np.asarray(noise.accel_bias, dtype=float)
    for t in _grid(t0, t1, rates.imu):
        t = float(t)
        gyro, accel = imu_measurement(traj, t, g)
        if gyro_sigma > 0:
            gyro = gyro + rng_imu.normal(0.0, gyro_sigma, 3)
        if accel_sigma > 0:
            accel = accel + rng_imu.normal(0.0, accel_sigma, 3)
        events.append(ImuEvent(t, gyro + bg, accel + ba))
        truth.append(TruthEvent(t, to_lidar_frame(traj.pose(t), extrinsics)))

    pos_sigma = np.asarray(noise.gnss_position_sigma, dtype=float)
    for t in _grid(t0, t1, rates.gnss):
        t = float(t)
        if noise.in_dropout(t):
            continue
        scale = 10.0 if noise.near_dropout(t) else 1.0
        sig = pos_sigma * scale
        pos = traj.position(t) + rng_gnss.normal(0.0, 1.0, 3) * sig
        vel = traj.velocity(t) + rng_gnss.normal(0.0, 1.0, 3) * noise.gnss_velocity_sigma * scale
        # a noise-free receiver still reports a small floor so Ξ stays invertible
        xi = np.diag(np.maximum(sig, 1e-3) ** 2)
        events.append(GnssEvent(t, pos, vel, xi))
        psi = traj.yaw(t) + rng_mag.normal(0.0, 1.0) * noise.mag_sigma
        events.append(MagEvent(t, float(math.atan2(math.sin(psi), math.cos(psi)))))

    tree = cKDTree(world.points) if len(world) else None
    corrupt = {round(c * rates.lidar) for c in noise.lidar_corruptions}
    for t in _grid(t0, t1, rates.lidar):
        t = float(t)
        pose = to_lidar_frame(traj.pose(t), extrinsics)
        if round(t * rates.lidar) in corrupt:
            cloud = clutter_scan(lidar, rng_clutter)
        elif tree is None:
            cloud = PointCloud()
        else:
            cloud = lidar_scan(tree, world.points, pose, lidar, noise.lidar_range_sigma, rng_lidar)
        events.append(LidarEvent(t, cloud))

    events.extend(truth)
    events.sort(key=lambda e: (e.t, EVENT_ORDER[type(e)]))
    return SimulatedRun(events, truth)
