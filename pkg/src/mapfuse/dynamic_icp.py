"""Dynamic ICP: map-region point-to-point registration with adaptive radius.

Convention: a registration transform ``T`` maps scan-frame points into the
map frame, so the registered platform pose is ``T`` itself.

Each iteration pairs every (downsampled) scan point with its nearest map
point inside a radius around the current pose estimate, discards pairs
farther apart than ``correspondence_max_distance`` and solves the
least-squares rigid alignment of the surviving pairs in closed form. The
reported fitness ``E`` is the mean unsquared residual of the gated pairs.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateConfiguration, NoCorrespondences, RegionEmpty, RelocalizationFailed
from .geometry import Pose, rot_z
from .map_store import GlobalMap, PointCloud, SpatialIndex, extract_local_region, voxel_downsample

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RegistrationConfig:
    max_iterations: int = 50
    error_tolerance: float = 0.05
    correspondence_max_distance: float = 2.0
    min_region_points: int = 100
    r_min: float = 20.0
    r_max: float = 200.0
    radius_growth: float = 2.0
    convergence_delta: float = 1e-4
    voxel_leaf: float = 0.4  # 0 disables scan downsampling
    min_inlier_fraction: float = 0.3
    # relocalization candidate search
    search_step: float = 2.0
    search_gate: float = 1.0
    search_yaw_offsets_deg: tuple[float, ...] = (-8.0, -4.0, 0.0, 4.0, 8.0)
    search_points: int = 200
    search_candidates: int = 5

    def __post_init__(self):
        positive = (
            "max_iterations",
            "error_tolerance",
            "correspondence_max_distance",
            "min_region_points",
            "r_min",
            "r_max",
            "convergence_delta",
            "search_step",
            "search_gate",
            "search_points",
            "search_candidates",
        )
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.r_min > self.r_max:
            raise ValueError("r_min must not exceed r_max")
        if not self.radius_growth > 1:
            raise ValueError("radius_growth must exceed 1")
        if self.voxel_leaf < 0:
            raise ValueError("voxel_leaf must be non-negative")
        if not 0 <= self.min_inlier_fraction <= 1:
            raise ValueError("min_inlier_fraction must be in [0, 1]")
        object.__setattr__(self, "search_yaw_offsets_deg", tuple(float(a) for a in self.search_yaw_offsets_deg))


@dataclass
class RegistrationResult:
    T: Pose
    pose: Pose
    fitness: float
    iterations: int
    converged: bool
    inlier_fraction: float
    status: str = ""
    radius: float = math.nan
    attempts: int = 1
    fitness_history: list[float] = field(default_factory=list)
    region_centers: list[np.ndarray] = field(default_factory=list)


def initial_radius(gnss_position_covariance, config: RegistrationConfig | None = None) -> float:
    """``clamp(3 * sqrt(trace(position block)), r_min, r_max)``."""
    config = config or RegistrationConfig()
    C = np.asarray(gnss_position_covariance, dtype=float)[:3, :3]
    r = 3.0 * math.sqrt(max(float(np.trace(C)), 0.0))
    return float(min(max(r, config.r_min), config.r_max))


def best_rigid_transform(source, target) -> Pose:
    """Least-squares ``T`` minimizing ``sum ||target - (R source + t)||^2``.

    Centroid alignment followed by an SVD of the cross-covariance, with the
    reflection case folded back into a proper rotation.
    """
    src = np.asarray(source, dtype=float).reshape(-1, 3)
    dst = np.asarray(target, dtype=float).reshape(-1, 3)
    if len(src) != len(dst):
        raise ValueError("source and target must pair up")
    if len(src) < 3:
        raise DegenerateConfiguration(f"need at least 3 pairs, got {len(src)}")
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    A = src - mu_s
    B = dst - mu_d
    sv = np.linalg.svd(A, compute_uv=False)
    if sv[0] <= 1e-12 or sv[1] <= 1e-9 * sv[0]:
        raise DegenerateConfiguration("source points are coincident or collinear")
    H = A.T @ B
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    D = np.diag([1.0, 1.0, d if d != 0 else 1.0])
    R = Vt.T @ D @ U.T
    t = mu_d - R @ mu_s
    return Pose.from_matrix(R, t)


def _prepare_scan(scan: PointCloud, config: RegistrationConfig) -> np.ndarray:
    if len(scan) == 0:
        raise ValueError("scan is empty")
    if config.voxel_leaf > 0:
        return voxel_downsample(scan, config.voxel_leaf).points
    return scan.points


def _region_index(gmap: GlobalMap, center, radius: float, config: RegistrationConfig) -> SpatialIndex:
    region = extract_local_region(gmap, center, radius)
    if len(region) < config.min_region_points:
        raise RegionEmpty(
            f"{len(region)} map points within {radius:.1f} m of {np.round(center, 2)} "
            f"(need {config.min_region_points})"
        )
    return SpatialIndex(region.points)


def _match(index: SpatialIndex, moved: np.ndarray, gate: float):
    d, idx = index.query(moved, upper_bound=gate)
    mask = np.isfinite(d)
    return d, idx, mask


def register(
    scan: PointCloud,
    gmap: GlobalMap,
    initial_guess: Pose,
    r_k: float,
    config: RegistrationConfig | None = None,
) -> RegistrationResult:
    config = config or RegistrationConfig()
    if not (np.all(np.isfinite(initial_guess.translation)) and np.all(np.isfinite(initial_guess.rotation))):
        raise ValueError("initial guess is not finite")
    if r_k <= 0:
        raise ValueError("r_k must be positive")
    src = _prepare_scan(scan, config)
    gate = config.correspondence_max_distance

    center = initial_guess.translation.copy()
    index = _region_index(gmap, center, r_k, config)
    centers = [center]

    T = initial_guess
    moved = T.apply(src)
    d, idx, mask = _match(index, moved, gate)
    if not mask.any():
        raise NoCorrespondences("no scan point has a map neighbor within the gate")
    E = float(d[mask].mean())
    history = [E]
    status = "max_iterations"
    converged = False
    it = 0
    for it in range(1, config.max_iterations + 1):
        try:
            step = best_rigid_transform(moved[mask], index.points[idx[mask]])
        except DegenerateConfiguration:
            status = "degenerate"
            break
        T = step.compose(T)
        if np.linalg.norm(T.translation - center) > r_k / 4.0:
            center = T.translation.copy()
            index = _region_index(gmap, center, r_k, config)
            centers.append(center)
        moved = T.apply(src)
        d, idx, mask = _match(index, moved, gate)
        if not mask.any():
            raise NoCorrespondences("registration diverged: all correspondences gated out")
        E_new = float(d[mask].mean())
        history.append(E_new)
        if E_new < config.error_tolerance:
            converged = True
            status = "converged"
            E = E_new
            break
        if abs(E_new - E) < config.convergence_delta:
            status = "stalled"
            E = E_new
            break
        E = E_new
    return RegistrationResult(
        T=T,
        pose=T,
        fitness=E,
        iterations=it,
        converged=converged,
        inlier_fraction=float(mask.sum()) / len(src),
        status=status,
        radius=float(r_k),
        fitness_history=history,
        region_centers=centers,
    )


def evaluate_fitness(scan: PointCloud, gmap: GlobalMap, T: Pose, gate: float) -> tuple[float, float]:
    """Mean gated nearest-neighbor residual and inlier fraction of ``scan`` under ``T``."""
    if len(scan) == 0:
        raise ValueError("scan is empty")
    d, _, mask = _match(gmap.index, T.apply(scan.points), gate)
    n = int(mask.sum())
    if n == 0:
        raise NoCorrespondences("no scan point has a map neighbor within the gate")
    return float(d[mask].mean()), n / len(scan)


def default_accept(result: RegistrationResult, config: RegistrationConfig) -> bool:
    return result.converged and result.inlier_fraction >= config.min_inlier_fraction


def _score_candidates(pts, index: SpatialIndex, seed: Pose, offsets, yaw_offsets, gate: float):
    """Inlier count of ``pts`` for every (yaw offset, planar offset) candidate."""
    scores = []
    poses = []
    R_seed = seed.R
    for yaw in yaw_offsets:
        R = rot_z(yaw) @ R_seed
        rotated = pts @ R.T + seed.translation
        # (C, M, 3) block of all candidate placements
        moved = rotated[None, :, :] + offsets[:, None, :]
        d, _ = index.query(moved.reshape(-1, 3), upper_bound=gate)
        d = d.reshape(len(offsets), len(pts))
        hit = np.isfinite(d)
        count = hit.sum(axis=1)
        resid = np.where(hit, d, gate).sum(axis=1)
        scores.append(count - resid / (gate * len(pts)))
        poses.extend(Pose.from_matrix(R, seed.translation + o) for o in offsets)
    return np.concatenate(scores), poses


def _grid_offsets(search_radius: float, step: float) -> np.ndarray:
    n = int(math.floor(search_radius / step))
    ax = np.arange(-n, n + 1) * step
    gx, gy = np.meshgrid(ax, ax, indexing="ij")
    off = np.column_stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)])
    keep = np.linalg.norm(off, axis=1) <= search_radius + 1e-9
    off = off[keep]
    # nearest-first so ties prefer the seed
    order = np.argsort(np.linalg.norm(off, axis=1), kind="stable")
    return off[order]


def _attempt(scan, gmap, seed: Pose, r: float, config: RegistrationConfig, accept) -> RegistrationResult:
    search_radius = r - config.r_min
    if search_radius < 0.5 * config.search_step:
        return register(scan, gmap, seed, r, config)

    index = _region_index(gmap, seed.translation, r, config)
    src = _prepare_scan(scan, config)
    if len(src) > config.search_points:
        pick = np.linspace(0, len(src) - 1, config.search_points).round().astype(int)
        src = src[pick]
    offsets = _grid_offsets(search_radius, config.search_step)
    yaws = np.radians(config.search_yaw_offsets_deg)
    scores, poses = _score_candidates(src, index, seed, offsets, yaws, config.search_gate)
    order = np.argsort(-scores, kind="stable")[: config.search_candidates]
    best = None
    for k in order:
        try:
            res = register(scan, gmap, poses[k], r, config)
        except (RegionEmpty, NoCorrespondences):
            continue
        if accept(res):
            return res
        if best is None or res.fitness < best.fitness:
            best = res
    if best is None:
        raise NoCorrespondences("no search candidate produced correspondences")
    return best


def relocalize(
    scan: PointCloud,
    gmap: GlobalMap,
    gnss_seed: Pose,
    gnss_cov,
    config: RegistrationConfig | None = None,
    accept: Callable[[RegistrationResult], bool] | None = None,
) -> RegistrationResult:
    """Register against growing map regions until a result is accepted.

    The first attempt uses ``initial_radius(gnss_cov)``. Each retry multiplies
    the radius by ``radius_growth`` (capped at ``r_max``). At radius ``r`` the
    attempt also searches candidate seeds up to ``r - r_min`` away from the
    GNSS seed, so every candidate keeps at least ``r_min`` of map support
    around it inside the region.
    """
    config = config or RegistrationConfig()
    if len(scan) == 0:
        raise ValueError("scan is empty")
    if accept is None:
        def accept(res):
            return default_accept(res, config)
    r = initial_radius(gnss_cov, config)
    best: RegistrationResult | None = None
    attempts = 0
    while True:
        attempts += 1
        try:
            res = _attempt(scan, gmap, gnss_seed, r, config, accept)
        except (RegionEmpty, NoCorrespondences) as exc:
            log.debug("relocalize attempt %d at r=%.1f failed: %s", attempts, r, exc)
            res = None
        if res is not None:
            res.attempts = attempts
            if accept(res):
                return res
            if best is None or res.fitness < best.fitness:
                best = res
        if r >= config.r_max:
            break
        r = min(r * config.radius_growth, config.r_max)
    raise RelocalizationFailed(f"no accepted registration up to r_max={config.r_max} m", best, attempts)
