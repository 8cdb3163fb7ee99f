"""GNSS-based global odometry: a total-state EKF.

State ``x = (roll, pitch, yaw, pe, pn, h, ve, vn, vu)`` in ENU. IMU samples
drive the prediction (strapdown, gravity along -U); GNSS fixes with an
optional magnetometer heading drive the correction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    HeadingUnobservable,
    InsufficientFixes,
    NonMonotonicTime,
    SingularInnovationCovariance,
)
from .geometry import Pose, euler_from_rotation, quat_from_euler, rot_x, rot_y, rot_z, so3_exp, wrap_angle
from .preintegration import GRAVITY, ImuSample

ATT = slice(0, 3)
POS = slice(3, 6)
VEL = slice(6, 9)
YAW = 2

# observed state indices for (psi_mag, pe, pn, h, ve, vn, vu)
OBS_INDEX = np.array([2, 3, 4, 5, 6, 7, 8])

MAX_DT = 0.1
MAX_CONDITION = 1e12


@dataclass(frozen=True)
class NavState:
    t: float
    attitude: np.ndarray
    position: np.ndarray
    velocity: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        att = np.asarray(self.attitude, dtype=float).reshape(3)
        object.__setattr__(self, "attitude", np.array([wrap_angle(a) for a in att]))
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))
        object.__setattr__(self, "velocity", np.asarray(self.velocity, dtype=float).reshape(3))
        P = np.asarray(self.covariance, dtype=float).reshape(9, 9)
        object.__setattr__(self, "covariance", 0.5 * (P + P.T))

    @property
    def x(self) -> np.ndarray:
        return np.concatenate([self.attitude, self.position, self.velocity])

    @classmethod
    def from_vector(cls, t: float, x, P) -> NavState:
        x = np.asarray(x, dtype=float)
        return cls(t, x[ATT], x[POS], x[VEL], P)

    def rotation(self) -> np.ndarray:
        r, p, y = self.attitude
        return rot_z(y) @ rot_y(p) @ rot_x(r)

    def pose(self) -> Pose:
        return Pose(quat_from_euler(*self.attitude), self.position)

    @property
    def position_covariance(self) -> np.ndarray:
        return self.covariance[POS, POS]


@dataclass(frozen=True)
class GnssMeasurement:
    """One GNSS epoch. ``psi_mag`` is NaN when no magnetometer heading is available.

    ``R`` is the 7x7 noise covariance over ``(psi, pe, pn, h, ve, vn, vu)``.
    """

    t: float
    position: np.ndarray
    velocity: np.ndarray
    R: np.ndarray
    psi_mag: float = math.nan

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))
        object.__setattr__(self, "velocity", np.asarray(self.velocity, dtype=float).reshape(3))
        R = np.asarray(self.R, dtype=float).reshape(7, 7)
        if not np.allclose(R, R.T):
            raise ValueError("measurement covariance must be symmetric")
        if np.min(np.linalg.eigvalsh(R)) <= 0.0:
            raise ValueError("measurement covariance must be positive definite")
        object.__setattr__(self, "R", R)

    @property
    def has_heading(self) -> bool:
        return bool(np.isfinite(self.psi_mag))

    @property
    def z(self) -> np.ndarray:
        return np.concatenate([[self.psi_mag], self.position, self.velocity])

    @classmethod
    def from_sigmas(cls, t, position, velocity, pos_cov, vel_sigma: float, psi_mag=math.nan, psi_sigma=0.05):
        R = np.zeros((7, 7))
        R[0, 0] = psi_sigma**2
        R[1:4, 1:4] = np.asarray(pos_cov, dtype=float)
        R[4:7, 4:7] = np.eye(3) * vel_sigma**2
        return cls(t, position, velocity, R, psi_mag)


@dataclass(frozen=True)
class EkfNoise:
    """Continuous-time noise densities for the process model."""

    gyro: float = 1e-4  # rad/s/sqrt(Hz)
    accel: float = 1e-2  # m/s^2/sqrt(Hz)


def _euler_rate_matrix(roll: float, pitch: float) -> np.ndarray:
    sr, cr = math.sin(roll), math.cos(roll)
    tp, cp = math.tan(pitch), math.cos(pitch)
    return np.array([[1.0, sr * tp, cr * tp], [0.0, cr, -sr], [0.0, sr / cp, cr / cp]])


def _rotation_partials(roll: float, pitch: float, yaw: float) -> list[np.ndarray]:
    Rx, Ry, Rz = rot_x(roll), rot_y(pitch), rot_z(yaw)
    sr, cr = math.sin(roll), math.cos(roll)
    sp, cp = math.sin(pitch), math.cos(pitch)
    sy, cy = math.sin(yaw), math.cos(yaw)
    dRx = np.array([[0.0, 0.0, 0.0], [0.0, -sr, -cr], [0.0, cr, -sr]])
    dRy = np.array([[-sp, 0.0, cp], [0.0, 0.0, 0.0], [-cp, 0.0, -sp]])
    dRz = np.array([[-sy, -cy, 0.0], [cy, -sy, 0.0], [0.0, 0.0, 0.0]])
    return [Rz @ Ry @ dRx, Rz @ dRy @ Rx, dRz @ Ry @ Rx]


def _attitude_jacobian(roll: float, pitch: float, w: np.ndarray, dt: float) -> np.ndarray:
    sr, cr = math.sin(roll), math.cos(roll)
    tp, cp = math.tan(pitch), math.cos(pitch)
    sp = math.sin(pitch)
    dE_droll = np.array([[0.0, cr * tp, -sr * tp], [0.0, -sr, -cr], [0.0, cr / cp, -sr / cp]])
    c2 = cp * cp
    dE_dpitch = np.array([[0.0, sr / c2, cr / c2], [0.0, 0.0, 0.0], [0.0, sr * sp / c2, cr * sp / c2]])
    J = np.eye(3)
    J[:, 0] += dE_droll @ w * dt
    J[:, 1] += dE_dpitch @ w * dt
    return J


class GnssEkf:
    """Owner of one ``NavState``; call ``predict``/``update`` in time order."""

    def __init__(self, state: NavState, noise: EkfNoise | None = None, gravity: float = GRAVITY):
        self.state = state
        self.noise = noise or EkfNoise()
        self.gravity = gravity

    def predict(self, imu: ImuSample, dt: float) -> NavState:
        self.state = ekf_predict(self.state, imu, dt, self.noise, self.gravity)
        return self.state

    def update(self, meas: GnssMeasurement) -> NavState:
        self.state = ekf_update(self.state, meas)
        return self.state


def ekf_predict(
    state: NavState,
    imu: ImuSample,
    dt: float,
    noise: EkfNoise | None = None,
    gravity: float = GRAVITY,
) -> NavState:
    if dt <= 0:
        raise NonMonotonicTime(f"prediction step must move forward in time, got dt={dt}")
    if dt > MAX_DT:
        raise ValueError(f"prediction step {dt} s exceeds {MAX_DT} s")
    noise = noise or EkfNoise()
    roll, pitch, yaw = state.attitude
    w = imu.gyro
    f = imu.accel
    g = np.array([0.0, 0.0, -gravity])

    R0 = state.rotation()
    R1 = R0 @ so3_exp(w * dt)
    att1 = np.array(euler_from_rotation(R1))
    # keep yaw continuous with the prior so wrapping happens only once, in NavState
    att1[2] = yaw + wrap_angle(att1[2] - yaw)

    a_n = 0.5 * (R0 + R1) @ f + g
    v1 = state.velocity + a_n * dt
    p1 = state.position + state.velocity * dt + 0.5 * a_n * dt * dt

    F = np.eye(9)
    F[ATT, ATT] = _attitude_jacobian(roll, pitch, w, dt)
    dRf = np.column_stack([dR @ f for dR in _rotation_partials(roll, pitch, yaw)])
    F[VEL, ATT] = dRf * dt
    F[POS, ATT] = 0.5 * dRf * dt * dt
    F[POS, VEL] = np.eye(3) * dt

    Q = np.zeros((9, 9))
    Eg = _euler_rate_matrix(roll, pitch)
    Q[ATT, ATT] = Eg @ Eg.T * noise.gyro**2 * dt
    qa = noise.accel**2
    Q[VEL, VEL] = np.eye(3) * qa * dt
    Q[POS, POS] = np.eye(3) * qa * dt**3 / 3.0
    Q[POS, VEL] = Q[VEL, POS] = np.eye(3) * qa * dt**2 / 2.0

    P = F @ state.covariance @ F.T + Q
    return NavState(state.t + dt, att1, p1, v1, 0.5 * (P + P.T))


def _condition(S: np.ndarray) -> float:
    # correlation form: disparate but finite variances are not singularity
    d = np.sqrt(np.diag(S))
    if np.any(d <= 0) or not np.all(np.isfinite(d)):
        return math.inf
    C = S / np.outer(d, d)
    return float(np.linalg.cond(C))


def ekf_update(state: NavState, meas: GnssMeasurement) -> NavState:
    if meas.t < state.t:
        raise NonMonotonicTime(f"measurement at {meas.t} precedes state at {state.t}")
    rows = np.arange(7) if meas.has_heading else np.arange(1, 7)
    idx = OBS_INDEX[rows]
    x = state.x
    P = state.covariance
    H = np.zeros((len(rows), 9))
    H[np.arange(len(rows)), idx] = 1.0
    innov = meas.z[rows] - x[idx]
    if meas.has_heading:
        innov[0] = wrap_angle(innov[0])
    Rm = meas.R[np.ix_(rows, rows)]
    S = H @ P @ H.T + Rm
    if _condition(S) > MAX_CONDITION:
        raise SingularInnovationCovariance("innovation covariance is numerically singular")
    K = np.linalg.solve(S, H @ P).T
    x_new = x + K @ innov
    IKH = np.eye(9) - K @ H
    P_new = IKH @ P @ IKH.T + K @ Rm @ K.T
    return NavState.from_vector(max(state.t, meas.t), x_new, 0.5 * (P_new + P_new.T))


def initial_state(meas: GnssMeasurement, yaw: float | None = None, yaw_sigma: float = math.pi) -> NavState:
    """EKF state seeded from a single fix; roll and pitch start level."""
    if yaw is None:
        yaw = meas.psi_mag if meas.has_heading else 0.0
    P = np.zeros((9, 9))
    P[0, 0] = P[1, 1] = 0.1**2
    P[2, 2] = yaw_sigma**2
    P[POS, POS] = meas.R[1:4, 1:4]
    P[VEL, VEL] = meas.R[4:7, 4:7]
    return NavState(meas.t, [0.0, 0.0, yaw], meas.position, meas.velocity, P)


def with_yaw(state: NavState, yaw: float, sigma: float) -> NavState:
    att = state.attitude.copy()
    att[2] = yaw
    P = state.covariance.copy()
    P[YAW, :] = 0.0
    P[:, YAW] = 0.0
    P[YAW, YAW] = sigma**2
    return replace(state, attitude=att, covariance=P)


def _circular_mean(angles) -> float:
    a = np.asarray(angles, dtype=float)
    return math.atan2(np.mean(np.sin(a)), np.mean(np.cos(a)))


MIN_HEADING_SPEED = 0.5


def global_init(fixes, min_count: int = 5) -> Pose:
    """Initial map-frame pose from a batch of GNSS fixes.

    Fixes are brought to the epoch of the latest fix along their own velocity
    and averaged. Yaw comes from the magnetometer when any fix carries one,
    otherwise from the direction of horizontal velocity.
    """
    fixes = list(fixes)
    if len(fixes) < min_count:
        raise InsufficientFixes(f"need {min_count} fixes, have {len(fixes)}")
    t_ref = max(f.t for f in fixes)
    pos = np.mean([f.position + f.velocity * (t_ref - f.t) for f in fixes], axis=0)
    headings = [f.psi_mag for f in fixes if f.has_heading]
    if headings:
        yaw = _circular_mean(headings)
    else:
        moving = [f for f in fixes if np.linalg.norm(f.velocity) > MIN_HEADING_SPEED]
        if len(moving) < min_count:
            raise HeadingUnobservable(
                f"{len(moving)} of {len(fixes)} fixes are moving and no magnetometer heading is available"
            )
        yaw = _circular_mean([math.atan2(f.velocity[1], f.velocity[0]) for f in moving])
    return Pose(quat_from_euler(0.0, 0.0, yaw), pos)
