from __future__ import annotations

import math

import numpy as np
import pytest

from mapfuse.errors import NonPositiveDt
from mapfuse.geometry import Pose, pose_compose, rot_z, rotation_angle, so3_exp
from mapfuse.preintegration import (
    Extrinsics,
    ImuBias,
    ImuSample,
    NavPoint,
    PreintegratedDelta,
    Preintegrator,
    correct_sample,
    delta_between,
    gravity_vector,
    integrate,
    predict_pose,
    to_lidar_frame,
)


def run_constant(gyro, accel, seconds=1.0, rate=1000):
    p = Preintegrator()
    n = int(round(seconds * rate))
    for k in range(n + 1):
        p.add(ImuSample(k / rate, gyro, accel))
    return p.delta


def random_rotation(rng):
    return so3_exp(rng.normal(size=3))


def test_correct_sample_cases():
    rng = np.random.default_rng(0)
    raw = ImuSample(0.0, rng.normal(size=3), rng.normal(size=3))
    assert np.array_equal(correct_sample(raw, ImuBias()).gyro, raw.gyro)
    b = ImuBias(rng.normal(size=3) * 0.01, rng.normal(size=3) * 0.1)
    zeroed = correct_sample(ImuSample(0.0, b.gyro, b.accel), b)
    assert np.array_equal(zeroed.gyro, np.zeros(3))
    back = correct_sample(raw, b)
    assert np.max(np.abs(back.gyro + b.gyro - raw.gyro)) <= 1e-15
    assert np.max(np.abs(back.accel + b.accel - raw.accel)) <= 1e-15


def test_bias_caps():
    with pytest.raises(ValueError):
        ImuBias(gyro=[0.2, 0, 0])
    with pytest.raises(ValueError):
        ImuBias(accel=[0, 0, 1.5])


def test_zero_input_gives_identity_delta():
    d = run_constant(np.zeros(3), np.zeros(3), 0.5, 200)
    assert np.array_equal(d.dR, np.eye(3))
    assert np.array_equal(d.dv, np.zeros(3)) and np.array_equal(d.dp, np.zeros(3))


def test_constant_acceleration_closed_form():
    d = run_constant(np.zeros(3), np.array([1.0, 0, 0]))
    assert np.max(np.abs(d.dv - [1, 0, 0])) <= 1e-6
    assert np.max(np.abs(d.dp - [0.5, 0, 0])) <= 1e-6
    assert d.dt == pytest.approx(1.0, abs=1e-12)
    assert d.sample_count == 1000


def test_constant_rate_closed_form():
    d = run_constant(np.array([0, 0, math.pi / 2]), np.zeros(3))
    assert rotation_angle(d.dR.T @ rot_z(math.pi / 2)) <= 1e-6


def test_delta_dt_sums_intervals_and_rotation_stays_orthonormal():
    rng = np.random.default_rng(1)
    d = PreintegratedDelta()
    total = 0.0
    for _ in range(500):
        dt = rng.uniform(1e-3, 1e-2)
        total += dt
        d = integrate(d, ImuSample(0.0, rng.normal(size=3), rng.normal(size=3)), dt)
    assert abs(d.dt - total) <= 1e-12
    assert np.max(np.abs(d.dR.T @ d.dR - np.eye(3))) <= 1e-9


def test_integrate_rejects_non_positive_dt():
    with pytest.raises(NonPositiveDt):
        integrate(PreintegratedDelta(), ImuSample(0.0, np.zeros(3), np.zeros(3)), 0.0)


def test_predict_zero_dt_returns_start():
    s = NavPoint(np.eye(3), np.array([1.0, 2, 3]), np.array([4.0, 5, 6]))
    assert predict_pose(s, PreintegratedDelta(), gravity_vector()) is s


def test_free_fall():
    g = gravity_vector()
    s = NavPoint(np.eye(3), np.array([1.0, 0, 0]), np.zeros(3))
    out = predict_pose(s, PreintegratedDelta(dt=1.0), g)
    assert np.allclose(out.v - s.v, g, atol=1e-15)
    assert np.allclose(out.p - s.p - s.v * 1.0, 0.5 * g, atol=1e-15)


def test_predict_then_recompute_delta_round_trip():
    rng = np.random.default_rng(2)
    g = gravity_vector()
    for _ in range(200):
        s = NavPoint(random_rotation(rng), rng.normal(size=3) * 5, rng.normal(size=3) * 50)
        delta = PreintegratedDelta(random_rotation(rng), rng.normal(size=3), rng.normal(size=3), rng.uniform(0.01, 2))
        out = predict_pose(s, delta, g)
        back = delta_between(s, out, delta.dt, g)
        assert rotation_angle(back.dR.T @ delta.dR) <= 1e-9
        assert np.max(np.abs(back.dv - delta.dv)) <= 1e-9
        assert np.max(np.abs(back.dp - delta.dp)) <= 1e-9


def test_delta_independent_of_gravity_used_for_prediction():
    rng = np.random.default_rng(3)
    p = Preintegrator()
    for k in range(50):
        p.add(ImuSample(k * 0.01, rng.normal(size=3), rng.normal(size=3)))
    before = p.delta
    s = NavPoint(np.eye(3), np.zeros(3), np.zeros(3))
    predict_pose(s, before, gravity_vector())
    predict_pose(s, before, gravity_vector(3.7))
    assert p.delta is before
    assert np.array_equal(p.delta.dv, before.dv)


def test_split_and_compose_equals_single_pass():
    rng = np.random.default_rng(4)
    samples = [ImuSample(k * 0.005, rng.normal(size=3), rng.normal(size=3) * 3) for k in range(401)]
    whole = Preintegrator()
    for s in samples:
        whole.add(s)
    halves = Preintegrator()
    for s in samples[:201]:
        halves.add(s)
    first = halves.reset()
    for s in samples[201:]:
        halves.add(s)
    joined = first.compose(halves.delta)
    assert rotation_angle(joined.dR.T @ whole.delta.dR) <= 1e-8
    assert np.max(np.abs(joined.dv - whole.delta.dv)) <= 1e-8
    assert np.max(np.abs(joined.dp - whole.delta.dp)) <= 1e-8
    assert joined.dt == pytest.approx(whole.delta.dt, abs=1e-12)


def test_to_lidar_frame_cases():
    rng = np.random.default_rng(5)
    T_imu = Pose.from_xyz_rpy(*rng.normal(size=3), *rng.normal(size=3))
    assert to_lidar_frame(T_imu, Extrinsics()) == pose_compose(Pose.identity(), T_imu)
    T_l2m = Pose.from_xyz_rpy(*rng.normal(size=3), *rng.normal(size=3))
    out = to_lidar_frame(Pose.identity(), Extrinsics(T_l2m))
    assert np.allclose(out.homogeneous(), T_l2m.homogeneous(), atol=1e-15)
    for _ in range(50):
        a = Pose.from_xyz_rpy(*rng.normal(size=3), *rng.normal(size=3))
        b = Pose.from_xyz_rpy(*rng.normal(size=3), *rng.normal(size=3))
        got = to_lidar_frame(b, Extrinsics(a)).homogeneous()
        assert np.max(np.abs(got - a.homogeneous() @ b.homogeneous())) <= 1e-12


def test_extend_to_holds_latest_sample():
    p = Preintegrator()
    p.add(ImuSample(0.0, np.zeros(3), np.array([1.0, 0, 0])))
    p.add(ImuSample(0.1, np.zeros(3), np.array([1.0, 0, 0])))
    d = p.extend_to(0.2)
    assert d.dt == pytest.approx(0.2)
    assert np.allclose(d.dv, [0.2, 0, 0])
    assert p.delta.dt == pytest.approx(0.1)
