"""Synthetic structured worlds: walls, pillars and boxes sampled as point surfaces.

Surfaces are sampled uniformly at random with mean density ``1 / spacing²``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from ..map_store import PointCloud

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class WorldSpec:
    """``density`` is the expected number of structures per 100 m² of ground."""

    extent: tuple[float, float, float] = (200.0, 200.0, 10.0)
    origin: tuple[float, float, float] = (-100.0, -100.0, 0.0)
    density: float = 1.0
    spacing: float = 0.25
    seed: int = 0
    # structures centred closer than this to any path vertex segment are dropped
    clearance: float = 0.0
    clear_path: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        if any(e <= 0 for e in self.extent):
            raise ValueError("extent must be positive")
        if self.spacing <= 0:
            raise ValueError("spacing must be positive")
        if self.density < 0:
            raise ValueError("density must be non-negative")

    @property
    def area(self) -> float:
        return self.extent[0] * self.extent[1]


@dataclass(frozen=True)
class Structure:
    kind: str
    center: np.ndarray  # ground-level centre
    size: np.ndarray  # kind-specific dimensions
    yaw: float


def _count(area: float, spacing: float) -> int:
    return max(int(math.ceil(area / (spacing * spacing))), 4)


def _wall(length, height, spacing, rng):
    # uniform random rather than lattice samples: a lattice has false alignments one spacing apart
    n = _count(length * height, spacing)
    u = rng.uniform(-0.5 * length, 0.5 * length, n)
    v = rng.uniform(0.0, height, n)
    return np.column_stack([u, np.zeros(n), v])


def _pillar(radius, height, spacing, rng):
    n = _count(2 * math.pi * radius * height, spacing)
    ang = rng.uniform(0.0, 2 * math.pi, n)
    z = rng.uniform(0.0, height, n)
    return np.column_stack([radius * np.cos(ang), radius * np.sin(ang), z])


def _box(sx, sy, sz, spacing, rng):
    faces = [
        (sx * sz, lambda n: np.column_stack([rng.uniform(-sx / 2, sx / 2, n), np.full(n, -sy / 2), rng.uniform(0, sz, n)])),
        (sx * sz, lambda n: np.column_stack([rng.uniform(-sx / 2, sx / 2, n), np.full(n, sy / 2), rng.uniform(0, sz, n)])),
        (sy * sz, lambda n: np.column_stack([np.full(n, -sx / 2), rng.uniform(-sy / 2, sy / 2, n), rng.uniform(0, sz, n)])),
        (sy * sz, lambda n: np.column_stack([np.full(n, sx / 2), rng.uniform(-sy / 2, sy / 2, n), rng.uniform(0, sz, n)])),
        (sx * sy, lambda n: np.column_stack([rng.uniform(-sx / 2, sx / 2, n), rng.uniform(-sy / 2, sy / 2, n), np.full(n, sz)])),
    ]
    return np.vstack([make(_count(area, spacing)) for area, make in faces])


def _segment_distance(p, a, b) -> float:
    ab = b - a
    L = float(ab @ ab)
    s = 0.0 if L == 0 else min(max(float((p - a) @ ab) / L, 0.0), 1.0)
    return float(np.linalg.norm(p - (a + s * ab)))


def _blocked(center_xy, spec: WorldSpec) -> bool:
    if spec.clearance <= 0 or len(spec.clear_path) == 0:
        return False
    path = np.asarray(spec.clear_path, dtype=float)
    if len(path) == 1:
        return float(np.linalg.norm(center_xy - path[0])) < spec.clearance
    return any(_segment_distance(center_xy, path[i], path[i + 1]) < spec.clearance for i in range(len(path) - 1))


def generate_structures(spec: WorldSpec) -> list[Structure]:
    rng = np.random.default_rng(spec.seed)
    n = int(rng.poisson(spec.density * spec.area / 100.0))
    ox, oy, oz = spec.origin
    ex, ey, ez = spec.extent
    out = []
    for _ in range(n):
        kind = ("wall", "pillar", "box")[int(rng.integers(3))]
        cx = ox + rng.uniform(0, ex)
        cy = oy + rng.uniform(0, ey)
        yaw = rng.uniform(-math.pi, math.pi)
        if kind == "wall":
            size = np.array([rng.uniform(4.0, 15.0), rng.uniform(2.0, min(6.0, ez))])
        elif kind == "pillar":
            size = np.array([rng.uniform(0.2, 0.5), rng.uniform(3.0, min(8.0, ez))])
        else:
            size = np.array([rng.uniform(1.0, 4.0), rng.uniform(1.0, 4.0), rng.uniform(1.0, min(4.0, ez))])
        # every random draw happens before the clearance check, keeping counts comparable
        if _blocked(np.array([cx, cy]), spec):
            continue
        out.append(Structure(kind, np.array([cx, cy, oz]), size, float(yaw)))
    return out


def _sample(s: Structure, spacing: float, rng: np.random.Generator) -> np.ndarray:
    if s.kind == "wall":
        local = _wall(s.size[0], s.size[1], spacing, rng)
    elif s.kind == "pillar":
        local = _pillar(s.size[0], s.size[1], spacing, rng)
    else:
        local = _box(s.size[0], s.size[1], s.size[2], spacing, rng)
    c, sn = math.cos(s.yaw), math.sin(s.yaw)
    R = np.array([[c, -sn, 0.0], [sn, c, 0.0], [0.0, 0.0, 1.0]])
    return local @ R.T + s.center


def generate_world(spec: WorldSpec) -> PointCloud:
    structures = generate_structures(spec)
    if not structures:
        log.warning("world spec produced no structures; returning an empty cloud")
        return PointCloud()
    # surface sampling draws from its own stream so structure placement is independent of it
    rng = np.random.default_rng([spec.seed, 1])
    pts = np.vstack([_sample(s, spec.spacing, rng) for s in structures])
    lo = np.asarray(spec.origin, dtype=float)
    hi = lo + np.asarray(spec.extent, dtype=float)
    keep = np.all((pts >= lo) & (pts <= hi), axis=1)
    return PointCloud(pts[keep])
