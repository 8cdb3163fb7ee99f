"""Pose interpolation, the trace-switched GNSS fusion rule and registration failure checks."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .dynamic_icp import RegistrationResult
from .errors import ExtrapolationTooFar, InsufficientWindow
from .geometry import Pose, pose_error, quat_slerp, so3_exp, so3_log


class Source(str, Enum):
    GNSS = "gnss"
    IMU = "imu"
    LIDAR = "lidar"
    FUSED = "fused"


@dataclass(frozen=True)
class FusionConfig:
    alpha: float = 0.8
    beta: float = 0.9
    trace_threshold: float = 25.0  # A, m^2
    failure_fitness_gate: float = 0.5
    failure_pose_gate_m: float = 2.0
    failure_pose_gate_rad: float = 0.2
    failure_min_inlier_fraction: float = 0.3
    interpolation_window: int = 3
    max_extrapolation: float = 0.2

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0 and 0.0 <= self.beta <= 1.0):
            raise ValueError("alpha and beta must lie in [0, 1]")
        if not self.trace_threshold > 0:
            raise ValueError("trace threshold A must be positive")
        if self.interpolation_window < 3:
            raise ValueError("interpolation window needs at least 3 poses")


@dataclass(frozen=True)
class OdomSample:
    t: float
    pose: Pose
    source: Source = Source.FUSED
    covariance: np.ndarray | None = None

    def __post_init__(self):
        if not (np.all(np.isfinite(self.pose.translation)) and math.isfinite(self.t)):
            raise ValueError("odometry sample must be finite")


def _lagrange_weights(ts, t: float) -> np.ndarray:
    t0, t1, t2 = ts
    return np.array(
        [
            (t - t1) * (t - t2) / ((t0 - t1) * (t0 - t2)),
            (t - t0) * (t - t2) / ((t1 - t0) * (t1 - t2)),
            (t - t0) * (t - t1) / ((t2 - t0) * (t2 - t1)),
        ]
    )


def interpolate_pose(window, t: float, max_extrapolation: float = 0.2) -> Pose:
    """Quadratic interpolation through three consecutive poses.

    Translation is fitted per axis; rotation is fitted on rotation vectors
    relative to the middle pose and mapped back through the exponential.
    The triple is centred on the sample nearest ``t`` (the latest three when
    extrapolating).
    """
    window = list(window)
    if len(window) < 3:
        raise InsufficientWindow(f"need 3 poses, have {len(window)}")
    times = [s.t for s in window]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("window timestamps must be strictly increasing")
    if t < times[0] or t > times[-1] + max_extrapolation:
        if t > times[-1]:
            raise ExtrapolationTooFar(f"t={t} is {t - times[-1]:.3f} s past the last pose")
        raise ExtrapolationTooFar(f"t={t} precedes the window start {times[0]}")
    nearest = int(np.argmin(np.abs(np.asarray(times) - t)))
    start = min(max(nearest - 1, 0), len(window) - 3)
    s0, s1, s2 = window[start : start + 3]
    ts = (s0.t, s1.t, s2.t)
    w = _lagrange_weights(ts, t)
    trans = w[0] * s0.pose.translation + w[1] * s1.pose.translation + w[2] * s2.pose.translation
    R1 = s1.pose.R
    r0 = so3_log(R1.T @ s0.pose.R)
    r2 = so3_log(R1.T @ s2.pose.R)
    rv = w[0] * r0 + w[2] * r2
    return Pose.from_matrix(R1 @ so3_exp(rv), trans)


def fuse_branch(xi, config: FusionConfig) -> str:
    """``"velocity"`` when trace(Ξ) > A, else ``"position"``."""
    return "velocity" if float(np.trace(np.asarray(xi, dtype=float))) > config.trace_threshold else "position"


def fuse(
    q_prime: OdomSample,
    q_g: OdomSample,
    v_g,
    dq_l: Pose,
    q_prev_l: OdomSample,
    xi,
    config: FusionConfig,
    dt: float | None = None,
) -> OdomSample:
    """Trace-switched blend of the LIDAR-inertial pose with GNSS.

    ``dq_l`` is the body-frame increment from ``q_prev_l`` to time ``t``
    (``Q_t = Q_prev ∘ dq_l``). When the GNSS covariance trace exceeds ``A``
    the translation step blends integrated GNSS velocity with the LIDAR step
    (weight ``beta`` on LIDAR); otherwise the pose blends the GNSS position
    with ``q_prime`` (weight ``alpha`` on ``q_prime``).
    """
    t = q_prime.t
    if fuse_branch(xi, config) == "velocity":
        if dt is None:
            dt = t - q_prev_l.t
        prev = q_prev_l.pose
        step_l = prev.R @ dq_l.translation
        step_g = np.asarray(v_g, dtype=float) * dt
        trans = prev.translation + (1.0 - config.beta) * step_g + config.beta * step_l
        rot = prev.compose(dq_l).rotation
        return OdomSample(t, Pose(rot, trans), Source.FUSED)
    a = config.alpha
    trans = (1.0 - a) * q_g.pose.translation + a * q_prime.pose.translation
    rot = quat_slerp(q_g.pose.rotation, q_prime.pose.rotation, a)
    return OdomSample(t, Pose(rot, trans), Source.FUSED)


@dataclass(frozen=True)
class FailureVerdict:
    failed: bool
    reasons: tuple[str, ...] = ()

    def __bool__(self) -> bool:
        return self.failed


def detect_registration_failure(
    result: RegistrationResult,
    imu_predicted: Pose | None,
    config: FusionConfig,
) -> FailureVerdict:
    reasons = []
    if not result.converged:
        reasons.append(f"not converged ({result.status or 'unknown'})")
    if result.fitness > config.failure_fitness_gate:
        reasons.append(f"fitness {result.fitness:.3f} > {config.failure_fitness_gate}")
    if imu_predicted is not None:
        dt_m, dr = pose_error(result.pose, imu_predicted)
        if dt_m > config.failure_pose_gate_m:
            reasons.append(f"pose gate: {dt_m:.2f} m from IMU prediction")
        if dr > config.failure_pose_gate_rad:
            reasons.append(f"pose gate: {dr:.3f} rad from IMU prediction")
    if result.inlier_fraction < config.failure_min_inlier_fraction:
        reasons.append(f"inlier fraction {result.inlier_fraction:.2f} < {config.failure_min_inlier_fraction}")
    return FailureVerdict(bool(reasons), tuple(reasons))
