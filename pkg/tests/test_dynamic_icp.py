from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.optimize import least_squares
from scipy.spatial.transform import Rotation

from mapfuse.dynamic_icp import (
    RegistrationConfig,
    best_rigid_transform,
    evaluate_fitness,
    initial_radius,
    register,
    relocalize,
)
from mapfuse.errors import DegenerateConfiguration, NoCorrespondences, RegionEmpty, RelocalizationFailed
from mapfuse.geometry import Pose, pose_error, rot_z, rotation_angle
from mapfuse.map_store import GlobalMap, PointCloud

RAW = RegistrationConfig(voxel_leaf=0.0)


def horn_alignment(src, dst) -> Pose:
    """Closed-form alignment via the unit-quaternion eigenproblem (independent of SVD)."""
    mu_s, mu_d = src.mean(0), dst.mean(0)
    S = (src - mu_s).T @ (dst - mu_d)
    Sxx, Sxy, Sxz = S[0]
    Syx, Syy, Syz = S[1]
    Szx, Szy, Szz = S[2]
    N = np.array(
        [
            [Sxx + Syy + Szz, Syz - Szy, Szx - Sxz, Sxy - Syx],
            [Syz - Szy, Sxx - Syy - Szz, Sxy + Syx, Szx + Sxz],
            [Szx - Sxz, Sxy + Syx, -Sxx + Syy - Szz, Syz + Szy],
            [Sxy - Syx, Szx + Sxz, Syz + Szy, -Sxx - Syy + Szz],
        ]
    )
    w, V = np.linalg.eigh(N)
    q = V[:, -1]
    pose = Pose(q, np.zeros(3))
    return Pose(pose.rotation, mu_d - pose.R @ mu_s)


def local_scan(gmap, center, radius):
    pts = gmap.points
    return pts[np.linalg.norm(pts - center, axis=1) < radius]


def test_initial_radius_examples():
    cfg = RegistrationConfig()
    assert initial_radius(np.zeros((3, 3)), cfg) == cfg.r_min
    assert initial_radius(np.eye(3) * 1e6 / 3, cfg) == cfg.r_max
    assert initial_radius(np.eye(3) * 100.0, cfg) == pytest.approx(3 * math.sqrt(300), abs=1e-9)
    assert initial_radius(np.eye(3) * 100.0, cfg) == pytest.approx(51.96152422706632, abs=1e-9)


def test_config_validation():
    with pytest.raises(ValueError):
        RegistrationConfig(r_min=300)
    with pytest.raises(ValueError):
        RegistrationConfig(radius_growth=1.0)
    with pytest.raises(ValueError):
        RegistrationConfig(max_iterations=0)


def test_best_rigid_transform_trivial_cases():
    rng = np.random.default_rng(0)
    src = rng.normal(size=(20, 3))
    I = best_rigid_transform(src, src)
    assert np.allclose(I.homogeneous(), np.eye(4), atol=1e-12)
    T = best_rigid_transform(src, src + [1.0, 0, 0])
    assert np.max(np.abs(T.translation - [1, 0, 0])) <= 1e-12
    assert np.max(np.abs(T.R - np.eye(3))) <= 1e-12


def test_best_rigid_transform_recovers_truth_and_global_minimum():
    rng = np.random.default_rng(1)
    for _ in range(20):
        src = rng.normal(size=(60, 3)) * 5
        truth = Pose(Rotation.random(random_state=rng).as_quat()[[3, 0, 1, 2]], rng.normal(size=3) * 30)
        dst = truth.apply(src)
        T = best_rigid_transform(src, dst)
        assert np.max(np.abs(T.homogeneous() - truth.homogeneous())) <= 1e-10
        assert np.max(np.abs(T.apply(src) - dst)) <= 1e-10

    # noisy pairs: residual equals a generic 6-DoF least-squares minimum
    for _ in range(10):
        src = rng.normal(size=(40, 3)) * 3
        truth = Pose(Rotation.random(random_state=rng).as_quat()[[3, 0, 1, 2]], rng.normal(size=3))
        dst = truth.apply(src) + rng.normal(size=src.shape) * 0.1
        T = best_rigid_transform(src, dst)
        cost_svd = np.sum((dst - T.apply(src)) ** 2)

        def resid(x):
            R = Rotation.from_rotvec(x[:3]).as_matrix()
            return (dst - (src @ R.T + x[3:])).ravel()

        x0 = np.concatenate([Rotation.from_matrix(truth.R).as_rotvec(), truth.translation])
        sol = least_squares(resid, x0, xtol=1e-15, ftol=1e-15, gtol=1e-15)
        assert cost_svd == pytest.approx(np.sum(sol.fun**2), abs=1e-8)
        assert cost_svd <= np.sum(sol.fun**2) + 1e-8


def test_best_rigid_transform_matches_horn_oracle():
    rng = np.random.default_rng(2)
    src = rng.normal(size=(100, 3))
    dst = Pose.from_xyz_rpy(1, 2, 3, 0.3, -0.2, 2.0).apply(src) + rng.normal(size=(100, 3)) * 0.05
    a = best_rigid_transform(src, dst)
    b = horn_alignment(src, dst)
    assert np.allclose(a.homogeneous(), b.homogeneous(), atol=1e-10)


def test_best_rigid_transform_degenerate():
    line = np.outer(np.arange(10.0), [1, 2, 3])
    with pytest.raises(DegenerateConfiguration):
        best_rigid_transform(line, line + 1)
    with pytest.raises(DegenerateConfiguration):
        best_rigid_transform(np.zeros((2, 3)), np.zeros((2, 3)))
    with pytest.raises(DegenerateConfiguration):
        best_rigid_transform(np.zeros((5, 3)), np.zeros((5, 3)))


def test_exact_to_reflection_free_on_planar_points():
    rng = np.random.default_rng(3)
    src = np.column_stack([rng.normal(size=(30, 2)), np.zeros(30)])
    truth = Pose.from_xyz_rpy(0.5, 0, 0, yaw=0.7)
    T = best_rigid_transform(src, truth.apply(src))
    assert np.linalg.det(T.R) == pytest.approx(1.0)
    assert np.allclose(T.homogeneous(), truth.homogeneous(), atol=1e-10)


def test_register_already_aligned(small_world):
    scan = PointCloud(local_scan(small_world, np.array([0.0, 0, 2]), 15.0))
    res = register(scan, small_world, Pose.identity(), 20.0, RAW)
    assert res.converged and res.iterations <= 2
    assert res.fitness <= 1e-6
    assert np.allclose(res.T.homogeneous(), np.eye(4), atol=1e-6)


def test_register_recovers_known_displacement(small_world):
    pts = local_scan(small_world, np.array([0.0, 0, 2]), 15.0)
    T0 = Pose.from_xyz_rpy(0.5, 0, 0, yaw=math.radians(5))
    scan = PointCloud(T0.apply(pts))
    cfg = RegistrationConfig(voxel_leaf=0.0, error_tolerance=1e-9, max_iterations=100, convergence_delta=1e-12)
    res = register(scan, small_world, Pose.identity(), 20.0, cfg)
    expected = T0.inverse()
    dt, dr = pose_error(res.T, expected)
    assert dt <= 1e-3 and dr <= 1e-3
    # the correspondences are known by construction: map point i produced scan point i
    oracle = horn_alignment(scan.points, pts)
    dt, dr = pose_error(res.T, oracle)
    assert dt <= 1e-3 and dr <= 1e-3


def test_register_off_map_raises(small_world):
    scan = PointCloud(local_scan(small_world, np.zeros(3), 10.0))
    with pytest.raises(RegionEmpty):
        register(scan, small_world, Pose.from_xyz_rpy(500, 0, 0), 20.0, RAW)


def test_register_result_invariants(scenario, rng):
    cfg = RAW
    for ev in scenario.scans[::50]:
        truth = scenario.truth[ev.t]
        guess = Pose.from_matrix(rot_z(rng.uniform(-0.05, 0.05)) @ truth.R, truth.translation + rng.uniform(-0.5, 0.5, 3))
        res = register(ev.cloud, scenario.gmap, guess, cfg.r_min, cfg)
        assert res.fitness >= 0 and 0 <= res.inlier_fraction <= 1
        if res.converged:
            assert res.fitness < cfg.error_tolerance
            assert res.fitness_history[-1] <= res.fitness_history[0]
        # the final pose lies inside every region the scan was matched against
        for c in res.region_centers:
            assert np.linalg.norm(c - res.pose.translation) <= cfg.r_min


def test_register_is_equivariant(scenario, rng):
    ev = scenario.scans[40]
    truth = scenario.truth[ev.t]
    guess = Pose.from_matrix(rot_z(0.03) @ truth.R, truth.translation + [0.4, -0.3, 0.1])
    G = Pose.from_xyz_rpy(12.0, -7.0, 3.0, 0.2, -0.1, 1.3)
    moved_map = GlobalMap.from_cloud(PointCloud(G.apply(scenario.world.points)))
    a = register(ev.cloud, scenario.gmap, guess, 20.0, RAW)
    b = register(ev.cloud, moved_map, G @ guess, 20.0, RAW)
    dt, dr = pose_error(G @ a.T, b.T)
    assert dt <= 1e-6 and dr <= 1e-6
    assert a.iterations == b.iterations


def test_tracking_guess_needs_fewer_iterations(scenario):
    # IMU-predicted guess (small error) versus the previous frame's pose (no motion model)
    rng = np.random.default_rng(7)
    fewer = 0
    scans = scenario.scans[1:]
    picks = rng.choice(len(scans), 100, replace=False)
    for k in picks:
        ev = scans[k]
        prev = scenario.scans[k]  # the frame before ``ev``
        truth = scenario.truth[ev.t]
        imu_guess = Pose.from_matrix(
            rot_z(math.radians(rng.uniform(-0.3, 0.3))) @ truth.R, truth.translation + rng.normal(0, 0.05, 3)
        )
        held = scenario.truth[prev.t]
        a = register(ev.cloud, scenario.gmap, imu_guess, 20.0, RAW)
        b = register(ev.cloud, scenario.gmap, held, 20.0, RAW)
        fewer += a.iterations < b.iterations
    assert fewer >= 90


def test_relocalize_near_seed_equals_single_register(scenario):
    ev = scenario.scans[100]
    truth = scenario.truth[ev.t]
    seed = Pose(truth.rotation, truth.translation + [0.3, -0.2, 0.0])
    single = register(ev.cloud, scenario.gmap, seed, 20.0, RAW)
    assert single.converged
    res = relocalize(ev.cloud, scenario.gmap, seed, np.zeros((3, 3)), RAW)
    assert res.attempts == 1
    assert res.T == single.T and res.iterations == single.iterations


def test_relocalize_grows_radius_for_far_seed(scenario):
    ev = scenario.scans[200]
    truth = scenario.truth[ev.t]
    off = 3 * RAW.r_min
    seed = Pose(truth.rotation, truth.translation + [off / math.sqrt(2), off / math.sqrt(2), 0.0])
    res = relocalize(ev.cloud, scenario.gmap, seed, np.zeros((3, 3)), RAW)
    assert res.converged and res.attempts >= 2
    dt, dr = pose_error(res.pose, truth)
    assert dt < 0.1 and dr < math.radians(1)


def test_relocalize_off_map_fails(scenario):
    ev = scenario.scans[0]
    seed = Pose.from_xyz_rpy(5000.0, 5000.0, 0.0)
    with pytest.raises(RelocalizationFailed) as exc:
        relocalize(ev.cloud, scenario.gmap, seed, np.zeros((3, 3)), RAW)
    assert exc.value.attempts >= 1


def test_evaluate_fitness_at_truth_noise_free(small_world):
    pts = local_scan(small_world, np.array([5.0, 5.0, 2.0]), 12.0)
    E, frac = evaluate_fitness(PointCloud(pts), small_world, Pose.identity(), 2.0)
    assert E <= 1e-9 and frac == 1.0


def test_evaluate_fitness_in_empty_space(small_world):
    pts = local_scan(small_world, np.array([5.0, 5.0, 2.0]), 12.0)
    with pytest.raises(NoCorrespondences):
        evaluate_fitness(PointCloud(pts), small_world, Pose.from_xyz_rpy(0, 0, 10.0 + 20.0), 2.0)


def test_evaluate_fitness_noisy_matches_brute_force(small_world):
    rng = np.random.default_rng(4)
    sigma = 0.02
    pts = local_scan(small_world, np.array([0.0, 0.0, 2.0]), 10.0)[::5]
    noisy = pts + rng.normal(0, sigma, pts.shape)
    E, frac = evaluate_fitness(PointCloud(noisy), small_world, Pose.identity(), 2.0)
    mp = small_world.points
    d = np.array([np.min(np.linalg.norm(mp - q, axis=1)) for q in noisy])
    assert E == pytest.approx(d[d <= 2.0].mean(), rel=1e-12)
    assert frac == 1.0
    assert 0.5 * sigma <= E <= 3 * sigma


def test_rotation_recovered_under_voxel_default(small_world):
    # the default 0.4 m voxel grid still yields a sub-decimetre fit on a dense scan
    pts = local_scan(small_world, np.array([0.0, 0.0, 2.0]), 18.0)
    T0 = Pose.from_xyz_rpy(0.3, -0.2, 0, yaw=math.radians(2))
    res = register(PointCloud(T0.apply(pts)), small_world, Pose.identity(), 20.0, RegistrationConfig())
    dt, dr = pose_error(res.T, T0.inverse())
    assert dt < 0.1 and rotation_angle(res.T.R @ T0.R) < math.radians(1)
