"""Timestamped sensor events consumed by the pipeline."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import Pose
from .map_store import PointCloud, read_cloud
from .preintegration import ImuSample


@dataclass(frozen=True)
class ImuEvent:
    t: float
    gyro: np.ndarray
    accel: np.ndarray

    def sample(self) -> ImuSample:
        return ImuSample(self.t, self.gyro, self.accel)


@dataclass(frozen=True)
class GnssEvent:
    t: float
    position: np.ndarray
    velocity: np.ndarray
    xi: np.ndarray  # 3x3 position covariance


@dataclass(frozen=True)
class MagEvent:
    t: float
    psi: float


@dataclass(frozen=True)
class LidarEvent:
    """A scan, either held in memory or referenced by file path."""

    t: float
    cloud: PointCloud | None = None
    path: Path | None = None

    def load(self) -> PointCloud:
        if self.cloud is not None:
            return self.cloud
        if self.path is None:
            raise ValueError(f"LIDAR event at t={self.t} has neither a cloud nor a path")
        return read_cloud(self.path)


@dataclass(frozen=True)
class TruthEvent:
    t: float
    pose: Pose


Event = ImuEvent | GnssEvent | MagEvent | LidarEvent | TruthEvent
