"""IMU preintegration between keyframes.

Raw samples follow ``w_hat = w + b_w + n_w`` and
``a_hat = R^-1 (a - g) + b_a + n_a``; the increments between keyframes
``i`` and ``j`` are

    dv_ij = R_i^T (v_j - v_i - g dt_ij)
    dp_ij = R_i^T (p_j - p_i - v_i dt_ij - 1/2 g dt_ij^2)
    dR_ij = R_i^T R_j

so they do not depend on the absolute start state or on gravity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonPositiveDt
from .geometry import Pose, nearest_rotation, so3_exp

GRAVITY = 9.80665


def gravity_vector(magnitude: float = GRAVITY) -> np.ndarray:
    """Gravity in ENU (pointing down)."""
    return np.array([0.0, 0.0, -magnitude])


@dataclass(frozen=True)
class ImuSample:
    t: float
    gyro: np.ndarray
    accel: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gyro, dtype=float).reshape(3)
        a = np.asarray(self.accel, dtype=float).reshape(3)
        if not (np.all(np.isfinite(g)) and np.all(np.isfinite(a))):
            raise ValueError("IMU sample has non-finite components")
        object.__setattr__(self, "gyro", g)
        object.__setattr__(self, "accel", a)


@dataclass(frozen=True)
class ImuBias:
    gyro: np.ndarray = field(default_factory=lambda: np.zeros(3))
    accel: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gyro_cap: float = 0.1
    accel_cap: float = 1.0

    def __post_init__(self):
        g = np.asarray(self.gyro, dtype=float).reshape(3)
        a = np.asarray(self.accel, dtype=float).reshape(3)
        if not (np.all(np.isfinite(g)) and np.all(np.isfinite(a))):
            raise ValueError("bias has non-finite components")
        if np.linalg.norm(g) > self.gyro_cap or np.linalg.norm(a) > self.accel_cap:
            raise ValueError("bias magnitude exceeds plausibility cap")
        object.__setattr__(self, "gyro", g)
        object.__setattr__(self, "accel", a)


@dataclass(frozen=True)
class PreintegratedDelta:
    dR: np.ndarray = field(default_factory=lambda: np.eye(3))
    dv: np.ndarray = field(default_factory=lambda: np.zeros(3))
    dp: np.ndarray = field(default_factory=lambda: np.zeros(3))
    dt: float = 0.0
    sample_count: int = 0

    def compose(self, later: PreintegratedDelta) -> PreintegratedDelta:
        """Chain ``self`` (i -> j) with ``later`` (j -> k) into i -> k."""
        return PreintegratedDelta(
            dR=nearest_rotation(self.dR @ later.dR),
            dv=self.dv + self.dR @ later.dv,
            dp=self.dp + self.dv * later.dt + self.dR @ later.dp,
            dt=self.dt + later.dt,
            sample_count=self.sample_count + later.sample_count,
        )


@dataclass(frozen=True)
class NavPoint:
    """Rotation, velocity and position of the IMU at one instant."""

    R: np.ndarray
    v: np.ndarray
    p: np.ndarray

    def pose(self) -> Pose:
        return Pose.from_matrix(self.R, self.p)


@dataclass(frozen=True)
class Extrinsics:
    """``T_l2m`` such that ``T_lidar = T_l2m ∘ T_imu``."""

    T_l2m: Pose = field(default_factory=Pose.identity)


def correct_sample(raw: ImuSample, bias: ImuBias) -> ImuSample:
    return ImuSample(raw.t, raw.gyro - bias.gyro, raw.accel - bias.accel)


def integrate(
    delta: PreintegratedDelta,
    sample: ImuSample,
    dt: float,
    prev: ImuSample | None = None,
) -> PreintegratedDelta:
    """Advance ``delta`` by one interval of length ``dt``.

    With ``prev`` the interval uses the midpoint rule between ``prev`` and
    ``sample``; otherwise ``sample`` is held constant across the interval.
    """
    if not dt > 0:
        raise NonPositiveDt(f"dt must be positive, got {dt}")
    if prev is None:
        w = sample.gyro
        dR_new = delta.dR @ so3_exp(w * dt)
        acc = delta.dR @ sample.accel
    else:
        w = 0.5 * (prev.gyro + sample.gyro)
        dR_new = delta.dR @ so3_exp(w * dt)
        acc = 0.5 * (delta.dR @ prev.accel + dR_new @ sample.accel)
    return PreintegratedDelta(
        dR=dR_new,
        dv=delta.dv + acc * dt,
        dp=delta.dp + delta.dv * dt + 0.5 * acc * dt * dt,
        dt=delta.dt + dt,
        sample_count=delta.sample_count + 1,
    )


def predict_pose(state_i: NavPoint, delta: PreintegratedDelta, gravity) -> NavPoint:
    g = np.asarray(gravity, dtype=float)
    if delta.dt <= 0.0:
        return state_i
    T = delta.dt
    Ri = state_i.R
    return NavPoint(
        R=nearest_rotation(Ri @ delta.dR),
        v=state_i.v + g * T + Ri @ delta.dv,
        p=state_i.p + state_i.v * T + 0.5 * g * T * T + Ri @ delta.dp,
    )


def delta_between(state_i: NavPoint, state_j: NavPoint, dt: float, gravity) -> PreintegratedDelta:
    """Increments implied by two endpoint states (the defining identities)."""
    g = np.asarray(gravity, dtype=float)
    RiT = state_i.R.T
    return PreintegratedDelta(
        dR=RiT @ state_j.R,
        dv=RiT @ (state_j.v - state_i.v - g * dt),
        dp=RiT @ (state_j.p - state_i.p - state_i.v * dt - 0.5 * g * dt * dt),
        dt=dt,
    )


def to_lidar_frame(T_imu: Pose, extr: Extrinsics) -> Pose:
    return extr.T_l2m.compose(T_imu)


def to_imu_frame(T_lidar: Pose, extr: Extrinsics) -> Pose:
    return extr.T_l2m.inverse().compose(T_lidar)


class Preintegrator:
    """Accumulates bias-corrected samples since the last keyframe.

    The most recent sample survives ``reset`` so the first interval of the
    next window still gets a midpoint update.
    """

    def __init__(self, bias: ImuBias | None = None, midpoint: bool = True):
        self.bias = bias or ImuBias()
        self.midpoint = midpoint
        self.delta = PreintegratedDelta()
        self._last: ImuSample | None = None

    @property
    def last_time(self) -> float | None:
        return None if self._last is None else self._last.t

    def add(self, raw: ImuSample) -> None:
        sample = correct_sample(raw, self.bias)
        if self._last is not None:
            dt = sample.t - self._last.t
            if dt <= 0:
                raise NonPositiveDt(f"IMU timestamps not increasing: {self._last.t} -> {sample.t}")
            prev = self._last if self.midpoint else None
            self.delta = integrate(self.delta, sample if prev is not None else self._last, dt, prev)
        self._last = sample

    def extend_to(self, t: float) -> PreintegratedDelta:
        """Delta up to time ``t`` holding the latest sample constant past it."""
        if self._last is None or t <= self._last.t:
            return self.delta
        return integrate(self.delta, self._last, t - self._last.t)

    def reset(self, bias: ImuBias | None = None) -> PreintegratedDelta:
        done = self.delta
        if bias is not None:
            self.bias = bias
        self.delta = PreintegratedDelta()
        return done

    def restart(self) -> None:
        """Forget everything, including the carried-over sample."""
        self.delta = PreintegratedDelta()
        self._last = None
