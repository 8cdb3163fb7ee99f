"""Prior point-cloud map: loading, spatial indexing and local region queries.

Map and scan files share one ASCII format: one point per line,
whitespace-separated ``x y z [intensity]`` in meters, ``#`` lines ignored.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyIndex, EmptyMap, ParseError

log = logging.getLogger(__name__)


@dataclass
class PointCloud:
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    intensity: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite coordinates")
        self.points = pts
        if self.intensity is not None:
            self.intensity = np.asarray(self.intensity, dtype=float).reshape(-1)
            if len(self.intensity) != len(pts):
                raise ValueError("intensity length does not match point count")

    def __len__(self) -> int:
        return len(self.points)

    def transformed(self, pose) -> PointCloud:
        return PointCloud(pose.apply(self.points), self.intensity)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if len(self) == 0:
            return np.zeros(3), np.zeros(3)
        return self.points.min(axis=0), self.points.max(axis=0)


class SpatialIndex:
    """k-d tree over a fixed point set."""

    def __init__(self, points: np.ndarray):
        self.points = np.asarray(points, dtype=float).reshape(-1, 3)
        self._tree = cKDTree(self.points) if len(self.points) else None

    def __len__(self) -> int:
        return len(self.points)

    @property
    def tree(self) -> cKDTree:
        if self._tree is None:
            raise EmptyIndex("spatial index is empty")
        return self._tree

    def query(self, queries: np.ndarray, upper_bound: float = np.inf):
        """Vectorized nearest neighbor: ``(distances, indices)``.

        Queries with no neighbor inside ``upper_bound`` get distance ``inf``
        and index ``len(self)``.
        """
        return self.tree.query(np.asarray(queries, dtype=float), k=1, distance_upper_bound=upper_bound)

    def ball(self, center, radius: float) -> np.ndarray:
        if self._tree is None:
            return np.zeros(0, dtype=int)
        idx = self._tree.query_ball_point(np.asarray(center, dtype=float), radius)
        return np.sort(np.asarray(idx, dtype=int))


@dataclass
class GlobalMap:
    cloud: PointCloud
    index: SpatialIndex
    bounds: tuple[np.ndarray, np.ndarray]

    @classmethod
    def from_cloud(cls, cloud: PointCloud) -> GlobalMap:
        if len(cloud) == 0:
            raise EmptyMap("map has zero points")
        return cls(cloud, SpatialIndex(cloud.points), cloud.bounds())

    @property
    def points(self) -> np.ndarray:
        return self.cloud.points


def parse_cloud(lines, path: str | None = None) -> PointCloud:
    pts = []
    inten = []
    has_intensity = None
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) not in (3, 4):
            raise ParseError(f"expected 3 or 4 fields, got {len(fields)}: {line!r}", lineno, path)
        try:
            vals = [float(f) for f in fields]
        except ValueError:
            raise ParseError(f"non-numeric field in {line!r}", lineno, path) from None
        if not all(np.isfinite(vals)):
            raise ParseError(f"non-finite value in {line!r}", lineno, path)
        if has_intensity is None:
            has_intensity = len(vals) == 4
        elif has_intensity != (len(vals) == 4):
            raise ParseError("mixed 3- and 4-field lines", lineno, path)
        pts.append(vals[:3])
        if has_intensity:
            inten.append(vals[3])
    return PointCloud(np.array(pts, dtype=float).reshape(-1, 3), np.array(inten) if has_intensity else None)


def read_cloud(path) -> PointCloud:
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        return parse_cloud(fh, str(path))


def write_cloud(path, cloud: PointCloud, header: str | None = None) -> None:
    path = Path(path)
    data = cloud.points
    if cloud.intensity is not None:
        data = np.column_stack([data, cloud.intensity])
    with path.open("w", encoding="utf-8") as fh:
        if header:
            for line in header.splitlines():
                fh.write(f"# {line}\n")
        # repr-precision so a write/read round trip is exact
        np.savetxt(fh, data, fmt="%.17g")


def load_map(path) -> GlobalMap:
    cloud = read_cloud(path)
    if len(cloud) == 0:
        raise EmptyMap(f"{path}: map has zero points")
    gm = GlobalMap.from_cloud(cloud)
    log.info("loaded map %s: %d points", path, len(cloud))
    return gm


def extract_local_region(gmap: GlobalMap, center, radius: float) -> PointCloud:
    """Map points strictly closer than ``radius`` to ``center``."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    center = np.asarray(center, dtype=float)
    idx = gmap.index.ball(center, radius)
    pts = gmap.points[idx]
    # query_ball_point is inclusive (<=); enforce the strict predicate
    keep = np.linalg.norm(pts - center, axis=1) < radius
    inten = None if gmap.cloud.intensity is None else gmap.cloud.intensity[idx][keep]
    return PointCloud(pts[keep], inten)


def nearest_neighbor(index: SpatialIndex, query) -> tuple[np.ndarray, float]:
    if len(index) == 0:
        raise EmptyIndex("nearest_neighbor on an empty index")
    d, i = index.tree.query(np.asarray(query, dtype=float), k=1)
    return index.points[i].copy(), float(d)


def voxel_downsample(cloud: PointCloud, leaf: float) -> PointCloud:
    """Replace the points of every occupied voxel by their centroid.

    Voxel keys are ``floor(p / leaf)``; output is ordered by voxel key.
    """
    if leaf <= 0:
        raise ValueError("leaf must be positive")
    if len(cloud) == 0:
        return PointCloud()
    keys = np.floor(cloud.points / leaf).astype(np.int64)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    n = len(counts)
    sums = np.column_stack(
        [np.bincount(inverse, weights=cloud.points[:, k], minlength=n) for k in range(3)]
    )
    centroids = sums / counts[:, None]
    inten = None
    if cloud.intensity is not None:
        inten = np.bincount(inverse, weights=cloud.intensity, minlength=n) / counts
    return PointCloud(centroids, inten)
