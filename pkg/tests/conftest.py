from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pytest
from scipy.spatial import cKDTree

from mapfuse.events import LidarEvent
from mapfuse.map_store import GlobalMap, PointCloud
from mapfuse.sim.scenario import ScenarioSpec, make_world, realistic_noise, simulate
from mapfuse.sim.sensors import LidarModel, lidar_scan
from mapfuse.sim.world import WorldSpec, generate_world


@dataclass
class Scenario:
    spec: ScenarioSpec
    world: PointCloud
    gmap: GlobalMap
    events: list
    truth: dict
    scans: list

    def scan_at(self, pose, rng, range_sigma=0.0, max_range=None, max_points=None) -> PointCloud:
        model = LidarModel(
            max_range=max_range or self.spec.lidar_range,
            max_points=max_points or self.spec.lidar_max_points,
        )
        tree = getattr(self, "_tree", None)
        if tree is None:
            tree = self._tree = cKDTree(self.world.points)
        return lidar_scan(tree, self.world.points, pose, model, range_sigma, rng)


@pytest.fixture(scope="session")
def scenario() -> Scenario:
    spec = ScenarioSpec()
    world = make_world(spec)
    _, run = simulate(spec, realistic_noise(dropouts=()), world=world)
    truth = {e.t: e.pose for e in run.truth}
    scans = [e for e in run.events if isinstance(e, LidarEvent)]
    return Scenario(spec, world, GlobalMap.from_cloud(world), run.events, truth, scans)


@pytest.fixture(scope="session")
def small_world() -> GlobalMap:
    spec = WorldSpec(extent=(60.0, 60.0, 8.0), origin=(-30.0, -30.0, 0.0), density=3.0, seed=3)
    return GlobalMap.from_cloud(generate_world(spec))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
