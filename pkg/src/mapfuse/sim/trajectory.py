"""Smooth ground-truth trajectories from waypoints.

Positions are a cubic spline through the waypoints, so velocity and
acceleration (and hence the simulated specific force) are continuous. Yaw
either follows its own spline or, when omitted, the direction of travel.
Roll and pitch stay zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from ..geometry import Pose, rot_z


@dataclass(frozen=True)
class Waypoint:
    t: float
    position: tuple[float, float, float]
    yaw: float | None = None


@dataclass(frozen=True)
class TrajectorySpec:
    waypoints: tuple[Waypoint, ...]
    closed: bool = False  # periodic spline; first and last waypoint must coincide

    def __post_init__(self):
        if len(self.waypoints) < 2:
            raise ValueError("need at least two waypoints")
        ts = [w.t for w in self.waypoints]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("waypoint times must be strictly increasing")
        given = [w.yaw is None for w in self.waypoints]
        if any(given) and not all(given):
            raise ValueError("give yaw for every waypoint or for none")

    @property
    def duration(self) -> float:
        return self.waypoints[-1].t - self.waypoints[0].t

    @property
    def start(self) -> float:
        return self.waypoints[0].t


class Trajectory:
    """Evaluates pose, velocity, acceleration and yaw rate at any time."""

    def __init__(self, spec: TrajectorySpec):
        self.spec = spec
        ts = np.array([w.t for w in spec.waypoints])
        ps = np.array([w.position for w in spec.waypoints], dtype=float)
        bc = "periodic" if spec.closed else "not-a-knot"
        if spec.closed and not np.allclose(ps[0], ps[-1]):
            raise ValueError("closed trajectory must end where it starts")
        if len(ts) == 2 and not spec.closed:
            # straight segment: a spline would still be linear, keep it exact
            bc = "natural"
        self._pos = CubicSpline(ts, ps, bc_type=bc, axis=0)
        self._vel = self._pos.derivative(1)
        self._acc = self._pos.derivative(2)
        self._yaw = None
        if spec.waypoints[0].yaw is not None:
            yaws = np.unwrap([w.yaw for w in spec.waypoints])
            self._yaw = CubicSpline(ts, yaws, bc_type="natural" if not spec.closed else "not-a-knot")
            self._yaw_rate = self._yaw.derivative(1)

    @property
    def t0(self) -> float:
        return self.spec.start

    @property
    def t1(self) -> float:
        return self.spec.waypoints[-1].t

    def position(self, t) -> np.ndarray:
        return np.asarray(self._pos(t))

    def velocity(self, t) -> np.ndarray:
        return np.asarray(self._vel(t))

    def acceleration(self, t) -> np.ndarray:
        return np.asarray(self._acc(t))

    def yaw(self, t: float) -> float:
        if self._yaw is not None:
            return float(self._yaw(t))
        v = self.velocity(t)
        return math.atan2(v[1], v[0])

    def yaw_rate(self, t: float) -> float:
        if self._yaw is not None:
            return float(self._yaw_rate(t))
        v = self.velocity(t)
        a = self.acceleration(t)
        s2 = v[0] ** 2 + v[1] ** 2
        if s2 < 1e-12:
            return 0.0
        return float((v[0] * a[1] - v[1] * a[0]) / s2)

    def rotation(self, t: float) -> np.ndarray:
        return rot_z(self.yaw(t))

    def pose(self, t: float) -> Pose:
        return Pose.from_matrix(self.rotation(t), self.position(t))


def straight_line(speed: float, duration: float, heading: float = 0.0, start=(0.0, 0.0, 0.0)) -> TrajectorySpec:
    d = np.array([math.cos(heading), math.sin(heading), 0.0]) * speed * duration
    p0 = tuple(float(x) for x in start)
    p1 = tuple(float(a + b) for a, b in zip(p0, d))
    return TrajectorySpec((Waypoint(0.0, p0, heading), Waypoint(duration, p1, heading)))


def loop_trajectory(
    width: float = 170.0,
    height: float = 95.0,
    corner_radius: float = 15.0,
    speed: float = 10.0,
    z: float = 1.5,
    center=(0.0, 0.0),
    spacing: float = 5.0,
) -> TrajectorySpec:
    """Closed rounded-rectangle loop, waypoints every ``spacing`` metres of arc."""
    if not (0 < corner_radius < 0.5 * min(width, height)):
        raise ValueError("corner radius must fit inside the rectangle")
    hw, hh, r = 0.5 * width, 0.5 * height, corner_radius
    cx, cy = center
    # counter-clockwise, starting mid bottom edge heading east
    segs = []
    corners = [(hw - r, -hh + r, -math.pi / 2), (hw - r, hh - r, 0.0), (-hw + r, hh - r, math.pi / 2), (-hw + r, -hh + r, math.pi)]
    starts = [(0.0, -hh), (hw, -hh + r), (hw - r, hh), (-hw, hh - r)]
    ends = [(hw - r, -hh), (hw, hh - r), (-hw + r, hh), (-hw, -hh + r)]
    for (sx, sy), (ex, ey), (ccx, ccy, a0) in zip(starts, ends, corners):
        segs.append(("line", (sx, sy), (ex, ey)))
        segs.append(("arc", (ccx, ccy), a0))
    segs.append(("line", (-hw + r, -hh), (0.0, -hh)))

    lengths = []
    for s in segs:
        lengths.append(math.dist(s[1], s[2]) if s[0] == "line" else 0.5 * math.pi * r)
    total = sum(lengths)
    n = max(int(round(total / spacing)), 8)
    pts = []
    for k in range(n + 1):
        s = total * k / n
        acc = 0.0
        for seg, L in zip(segs, lengths):
            if s <= acc + L or seg is segs[-1]:
                u = min(max((s - acc) / L, 0.0), 1.0)
                if seg[0] == "line":
                    (x0, y0), (x1, y1) = seg[1], seg[2]
                    pts.append((x0 + u * (x1 - x0), y0 + u * (y1 - y0)))
                else:
                    (ccx, ccy), a0 = seg[1], seg[2]
                    a = a0 + u * 0.5 * math.pi
                    pts.append((ccx + r * math.cos(a), ccy + r * math.sin(a)))
                break
            acc += L
    pts[-1] = pts[0]  # close the loop exactly for the periodic spline
    dt = total / n / speed
    wps = tuple(Waypoint(k * dt, (cx + x, cy + y, z)) for k, (x, y) in enumerate(pts))
    return TrajectorySpec(wps, closed=True)


def loop_length(spec: TrajectorySpec, samples: int = 20000) -> float:
    traj = Trajectory(spec)
    ts = np.linspace(traj.t0, traj.t1, samples)
    p = traj.position(ts)
    return float(np.sum(np.linalg.norm(np.diff(p, axis=0), axis=1)))
