"""Roll-constrained GNSS velocity-aided attitude adjustment.

An indirect filter over the small error quaternion ``(1, y)``. GNSS velocity
observes heading and pitch; single-antenna velocity carries no roll
information, so the update is constrained to leave the roll ratio
``R_nb[1, 2] / R_nb[2, 2]`` unchanged to first order. The constrained
least-squares problem is solved through its KKT system.

``R_nb`` denotes the navigation-to-body matrix (transpose of the attitude
quaternion's active rotation).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConstraintSingular, ErrorTooLarge, SingularKKT
from .geometry import nearest_rotation, quat_from_matrix, quat_multiply, rot_nb, skew

MAX_ERROR_NORM = 0.5
MAX_KKT_CONDITION = 1e12
MIN_R33 = 1e-6


@dataclass(frozen=True)
class VelocityObservation:
    w_v: np.ndarray  # body-frame velocity from the LIDAR pose track
    v_n: np.ndarray  # navigation-frame GNSS velocity
    sigma: np.ndarray  # 3x3 noise covariance

    def __post_init__(self):
        object.__setattr__(self, "w_v", np.asarray(self.w_v, dtype=float).reshape(3))
        object.__setattr__(self, "v_n", np.asarray(self.v_n, dtype=float).reshape(3))
        S = np.asarray(self.sigma, dtype=float).reshape(3, 3)
        if not np.allclose(S, S.T) or np.min(np.linalg.eigvalsh(S)) <= 0:
            raise ValueError("observation covariance must be symmetric positive definite")
        object.__setattr__(self, "sigma", S)


def propagate_quaternion(q_k, y) -> np.ndarray:
    """``normalize(q_k ⊙ (1, y))``."""
    q_e = np.concatenate([[1.0], np.asarray(y, dtype=float).reshape(3)])
    return quat_multiply(q_k, q_e)


def small_angle_matrix(y) -> np.ndarray:
    """Navigation-to-body matrix of the error quaternion ``(1, y)`` to first order."""
    y1, y2, y3 = np.asarray(y, dtype=float).reshape(3)
    return np.array(
        [
            [1.0, 2.0 * y3, -2.0 * y2],
            [-2.0 * y3, 1.0, 2.0 * y1],
            [2.0 * y2, -2.0 * y1, 1.0],
        ]
    )


def innovation(obs: VelocityObservation, q_lidar) -> np.ndarray:
    return obs.w_v - rot_nb(q_lidar) @ obs.v_n


def observation_jacobian(q_lidar, v_n) -> np.ndarray:
    return 2.0 * skew(rot_nb(q_lidar) @ np.asarray(v_n, dtype=float))


def roll_ratio(R_nb) -> float:
    return float(R_nb[1, 2] / R_nb[2, 2])


def roll_constraint(y, q_k, q_lidar) -> float:
    """Change in roll ratio when ``y`` is applied to ``q_k``, relative to ``q_lidar``."""
    return roll_ratio(small_angle_matrix(y) @ rot_nb(q_k)) - roll_ratio(rot_nb(q_lidar))


def roll_constraint_vector(q_k, q_lidar=None) -> np.ndarray:
    """Gradient at ``y = 0`` of the roll constraint.

    With ``M = R_nb(q_k)`` and the corrected attitude ``(I - 2[y×]) M``::

        Θ = [2 (1 + M23²/M33²),  -2 M13 M23 / M33²,  -2 M13 / M33]

    ``q_lidar`` only shifts the constraint by a constant and does not enter
    the gradient; it is accepted for symmetry with ``roll_constraint``.
    """
    M = rot_nb(q_k)
    m13, m23, m33 = M[0, 2], M[1, 2], M[2, 2]
    if abs(m33) <= MIN_R33:
        raise ConstraintSingular(f"R_nb[2,2] = {m33:.3e} is too close to zero")
    r = m23 / m33
    return np.array([2.0 * (1.0 + r * r), -2.0 * m13 * m23 / (m33 * m33), -2.0 * m13 / m33])


def kkt_system(H, sigma, w, theta) -> tuple[np.ndarray, np.ndarray]:
    """4x4 matrix and right-hand side from zeroing both Lagrangian gradients."""
    H = np.asarray(H, dtype=float)
    W = np.linalg.inv(np.asarray(sigma, dtype=float))
    theta = np.asarray(theta, dtype=float).reshape(3)
    K = np.zeros((4, 4))
    K[:3, :3] = H.T @ W @ H
    K[:3, 3] = theta
    K[3, :3] = theta
    rhs = np.concatenate([H.T @ W @ np.asarray(w, dtype=float), [0.0]])
    return K, rhs


def kkt_gradients(H, sigma, w, theta, y, lam) -> tuple[np.ndarray, float]:
    """Lagrangian gradients with respect to ``y`` and the multiplier."""
    H = np.asarray(H, dtype=float)
    W = np.linalg.inv(np.asarray(sigma, dtype=float))
    g_y = H.T @ W @ (H @ y - w) + lam * np.asarray(theta)
    g_l = float(np.dot(theta, y))
    return g_y, g_l


def solve_constrained_update(H, sigma, w, theta, return_multiplier: bool = False):
    """Minimize ``1/2 V^T Σ^-1 V`` with ``V = H y - w`` subject to ``Θ^T y = 0``."""
    theta = np.asarray(theta, dtype=float).reshape(3)
    if not np.any(theta):
        raise ValueError("constraint vector must be nonzero")
    # the feasible set only depends on the direction of Θ
    theta = theta / np.linalg.norm(theta)
    K, rhs = kkt_system(H, sigma, w, theta)
    if np.linalg.cond(K) > MAX_KKT_CONDITION:
        raise SingularKKT("KKT matrix is ill-conditioned (unobservable geometry)")
    sol = np.linalg.solve(K, rhs)
    y = sol[:3]
    # one step of refinement keeps Θ^T y at round-off level
    y = y - theta * np.dot(theta, y)
    if return_multiplier:
        return y, float(sol[3])
    return y


def apply_correction(q_k, y) -> np.ndarray:
    """Corrected navigation-to-body matrix ``R_small(y) @ R_nb(q_k)``, re-orthonormalized."""
    y = np.asarray(y, dtype=float).reshape(3)
    if np.linalg.norm(y) >= MAX_ERROR_NORM:
        raise ErrorTooLarge(f"|y| = {np.linalg.norm(y):.3f} exceeds small-angle range")
    return nearest_rotation(small_angle_matrix(y) @ rot_nb(q_k))


def corrected_quaternion(q_k, y) -> np.ndarray:
    return quat_from_matrix(apply_correction(q_k, y).T)


@dataclass
class VelocityIkf:
    """Error-state bookkeeping around the constrained update.

    The error state is reset to zero after every correction; ``P`` holds the
    covariance of the last constrained estimate plus accumulated process noise.
    """

    process_noise: float = 1e-6
    P: np.ndarray = field(default_factory=lambda: np.eye(3) * 1e-2)

    def predict(self) -> None:
        self.P = self.P + np.eye(3) * self.process_noise

    def update(self, q_k, q_lidar, obs: VelocityObservation) -> tuple[np.ndarray, np.ndarray]:
        """Return the corrected attitude quaternion and the applied ``y``."""
        self.predict()
        H = observation_jacobian(q_lidar, obs.v_n)
        w = innovation(obs, q_lidar)
        theta = roll_constraint_vector(q_k, q_lidar)
        y = solve_constrained_update(H, obs.sigma, w, theta)
        q_new = corrected_quaternion(q_k, y)
        # covariance of the constrained estimate: Z (Z^T H^T Σ^-1 H Z)^-1 Z^T
        Z = np.linalg.svd(theta.reshape(1, 3))[2][1:].T
        info = Z.T @ H.T @ np.linalg.inv(obs.sigma) @ H @ Z
        self.P = Z @ np.linalg.inv(info) @ Z.T
        self.P = 0.5 * (self.P + self.P.T)
        return q_new, y
