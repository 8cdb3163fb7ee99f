from __future__ import annotations

import numpy as np
import pytest

from mapfuse.dynamic_icp import RegistrationResult
from mapfuse.errors import ExtrapolationTooFar, InsufficientWindow
from mapfuse.fusion import (
    FusionConfig,
    OdomSample,
    Source,
    detect_registration_failure,
    fuse,
    fuse_branch,
    interpolate_pose,
)
from mapfuse.geometry import Pose, quat_slerp, rotation_angle, rotation_distance, so3_exp


def sample(t, pose, source=Source.LIDAR):
    return OdomSample(t, pose, source)


def random_pose(rng, scale=10.0):
    return Pose.from_matrix(so3_exp(rng.normal(size=3)), rng.normal(size=3) * scale)


def result_at(pose, fitness=0.01, converged=True, inliers=0.9, status="converged"):
    return RegistrationResult(pose, pose, fitness, 5, converged, inliers, status)


def test_config_validation():
    with pytest.raises(ValueError):
        FusionConfig(alpha=1.5)
    with pytest.raises(ValueError):
        FusionConfig(beta=-0.1)
    with pytest.raises(ValueError):
        FusionConfig(trace_threshold=0.0)


def test_interpolation_is_exact_at_nodes():
    rng = np.random.default_rng(0)
    for _ in range(50):
        window = [sample(t, random_pose(rng)) for t in np.cumsum(rng.uniform(0.05, 0.2, 3))]
        for s in window:
            got = interpolate_pose(window, s.t)
            assert np.max(np.abs(got.translation - s.pose.translation)) <= 1e-12
            assert rotation_distance(got.R, s.pose.R) <= 1e-12


def test_interpolation_recovers_constant_velocity_line():
    v = np.array([3.0, -1.0, 0.5])
    window = [sample(t, Pose.from_matrix(np.eye(3), v * t)) for t in (1.0, 1.1, 1.25)]
    for t in np.linspace(1.0, 1.4, 9):
        assert np.max(np.abs(interpolate_pose(window, t).translation - v * t)) <= 1e-9


def test_interpolation_recovers_constant_rate_rotation():
    w = np.array([0.1, -0.2, 0.4])
    window = [sample(t, Pose.from_matrix(so3_exp(w * t), np.zeros(3))) for t in (0.0, 0.1, 0.2)]
    for t in (0.05, 0.15, 0.3):
        assert rotation_distance(interpolate_pose(window, t).R, so3_exp(w * t)) <= 1e-9


def test_interpolation_recovers_quadratic_trajectory():
    window = [sample(t, Pose.from_matrix(np.eye(3), [t * t, 0.0, 0.0])) for t in (0.0, 0.1, 0.2)]
    for t in (0.05, 0.15, 0.3):
        assert np.max(np.abs(interpolate_pose(window, t).translation - [t * t, 0, 0])) <= 1e-9


def test_interpolation_window_errors():
    poses = [sample(t, Pose.identity()) for t in (0.0, 0.1, 0.2)]
    with pytest.raises(InsufficientWindow):
        interpolate_pose(poses[:2], 0.1)
    with pytest.raises(ExtrapolationTooFar):
        interpolate_pose(poses, 0.41)
    with pytest.raises(ExtrapolationTooFar):
        interpolate_pose(poses, -0.01)
    interpolate_pose(poses, 0.4)


def fuse_inputs(rng):
    q_prime = sample(1.0, random_pose(rng), Source.FUSED)
    q_g = sample(1.0, random_pose(rng), Source.GNSS)
    prev = sample(0.9, random_pose(rng), Source.FUSED)
    dq = Pose.from_matrix(so3_exp(rng.normal(size=3) * 0.05), rng.normal(size=3))
    v_g = rng.normal(size=3) * 10
    return q_prime, q_g, v_g, dq, prev


def test_alpha_one_returns_lidar_pose():
    rng = np.random.default_rng(1)
    cfg = FusionConfig(alpha=1.0)
    for _ in range(20):
        q_prime, q_g, v_g, dq, prev = fuse_inputs(rng)
        out = fuse(q_prime, q_g, v_g, dq, prev, np.eye(3), cfg)
        assert np.max(np.abs(out.pose.translation - q_prime.pose.translation)) <= 1e-12
        assert rotation_distance(out.pose.R, q_prime.pose.R) <= 1e-12
        assert out.t == q_prime.t


def test_beta_one_follows_lidar_increment():
    rng = np.random.default_rng(2)
    cfg = FusionConfig(beta=1.0)
    for _ in range(20):
        q_prime, q_g, v_g, dq, prev = fuse_inputs(rng)
        out = fuse(q_prime, q_g, v_g, dq, prev, np.eye(3) * 100, cfg)
        want = prev.pose.compose(dq)
        assert np.max(np.abs(out.pose.translation - want.translation)) <= 1e-12
        assert rotation_distance(out.pose.R, want.R) <= 1e-12


def test_branch_boundary_takes_position_branch():
    cfg = FusionConfig(trace_threshold=25.0)
    eps = 1e-9
    assert fuse_branch(np.diag([25.0 - eps, 0, 0]), cfg) == "position"
    assert fuse_branch(np.diag([10.0, 10.0, 5.0]), cfg) == "position"
    assert fuse_branch(np.diag([25.0 + eps, 0, 0]), cfg) == "velocity"
    rng = np.random.default_rng(3)
    q_prime, q_g, v_g, dq, prev = fuse_inputs(rng)
    at = fuse(q_prime, q_g, v_g, dq, prev, np.diag([10.0, 10.0, 5.0]), cfg)
    want = (1 - cfg.alpha) * q_g.pose.translation + cfg.alpha * q_prime.pose.translation
    assert np.max(np.abs(at.pose.translation - want)) <= 1e-12


def test_position_branch_matches_componentwise_blend():
    rng = np.random.default_rng(4)
    cfg = FusionConfig(alpha=0.3)
    q_prime, q_g, v_g, dq, prev = fuse_inputs(rng)
    out = fuse(q_prime, q_g, v_g, dq, prev, np.eye(3), cfg)
    assert np.allclose(out.pose.translation, 0.7 * q_g.pose.translation + 0.3 * q_prime.pose.translation, atol=1e-12)
    slerped = quat_slerp(q_g.pose.rotation, q_prime.pose.rotation, 0.3)
    assert rotation_distance(out.pose.R, Pose(slerped, np.zeros(3)).R) <= 1e-12


def test_velocity_branch_uses_integrated_gnss_velocity():
    rng = np.random.default_rng(5)
    cfg = FusionConfig(beta=0.0)
    q_prime, q_g, v_g, dq, prev = fuse_inputs(rng)
    out = fuse(q_prime, q_g, v_g, dq, prev, np.eye(3) * 100, cfg)
    assert np.allclose(out.pose.translation, prev.pose.translation + v_g * 0.1, atol=1e-12)
    out = fuse(q_prime, q_g, v_g, dq, prev, np.eye(3) * 100, cfg, dt=0.5)
    assert np.allclose(out.pose.translation, prev.pose.translation + v_g * 0.5, atol=1e-12)


@pytest.mark.parametrize("weight", ["alpha", "beta"])
def test_fused_translation_is_linear_in_weight(weight):
    rng = np.random.default_rng(6)
    q_prime, q_g, v_g, dq, prev = fuse_inputs(rng)
    xi = np.eye(3) * (1.0 if weight == "alpha" else 100.0)
    grid = np.linspace(0.0, 1.0, 11)
    outs = np.array([fuse(q_prime, q_g, v_g, dq, prev, xi, FusionConfig(**{weight: w})).pose.translation for w in grid])
    # a straight line between the endpoints reproduces every grid value
    line = outs[0] + np.outer(grid, outs[-1] - outs[0])
    assert np.max(np.abs(outs - line)) <= 1e-9


def test_failure_detector_accepts_good_result():
    pose = Pose.from_xyz_rpy(1, 2, 3, yaw=0.4)
    verdict = detect_registration_failure(result_at(pose), pose, FusionConfig())
    assert not verdict and verdict.reasons == ()


def test_failure_detector_pose_gate():
    pose = Pose.from_xyz_rpy(0, 0, 0)
    far = Pose.from_xyz_rpy(10, 0, 0)
    verdict = detect_registration_failure(result_at(far), pose, FusionConfig(failure_pose_gate_m=1.0))
    assert verdict.failed
    assert any("pose gate" in r for r in verdict.reasons)
    turned = Pose.from_xyz_rpy(0, 0, 0, yaw=0.3)
    verdict = detect_registration_failure(result_at(turned), pose, FusionConfig())
    assert verdict.failed and "rad" in verdict.reasons[0]


def test_failure_detector_fitness_gate_is_strict():
    pose = Pose.identity()
    cfg = FusionConfig(failure_fitness_gate=0.5)
    assert not detect_registration_failure(result_at(pose, fitness=0.5), pose, cfg)
    assert detect_registration_failure(result_at(pose, fitness=np.nextafter(0.5, 1.0)), pose, cfg)


def test_failure_detector_lists_every_gate():
    pose = Pose.identity()
    bad = result_at(Pose.from_xyz_rpy(5, 0, 0, yaw=1.0), fitness=2.0, converged=False, inliers=0.1, status="stalled")
    verdict = detect_registration_failure(bad, pose, FusionConfig())
    assert len(verdict.reasons) == 5
    assert "stalled" in verdict.reasons[0]


def test_failure_detector_without_prediction_skips_pose_gate():
    verdict = detect_registration_failure(result_at(Pose.from_xyz_rpy(100, 0, 0)), None, FusionConfig())
    assert not verdict


def test_odom_sample_rejects_non_finite():
    with pytest.raises(ValueError):
        OdomSample(float("nan"), Pose.identity())
    assert rotation_angle(OdomSample(0.0, Pose.identity()).pose.R) == 0.0
