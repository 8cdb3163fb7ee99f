"""The localization state machine: initialize from GNSS, track against the map, relocalize.

Modes and edges::

    Initializing --(global init + relocalize ok)--> Tracking
    Tracking     --(registration judged failed)---> Relocalizing
    Relocalizing --(relocalize ok)----------------> Tracking
    Relocalizing --(RelocalizationFailed)---------> Initializing

Events must arrive in nondecreasing timestamp order. A fused pose is emitted
for every LIDAR frame that is successfully registered.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import velocity_ikf as ikf
from .config import PipelineConfig
from .dynamic_icp import RegistrationResult, register, relocalize
from .errors import (
    ConstraintSingular,
    ErrorTooLarge,
    HeadingUnobservable,
    InsufficientFixes,
    NoCorrespondences,
    NonMonotonicEvent,
    RegionEmpty,
    RelocalizationFailed,
    SingularKKT,
)
from .events import GnssEvent, ImuEvent, LidarEvent, MagEvent, TruthEvent
from .fusion import OdomSample, Source, detect_registration_failure, fuse, interpolate_pose
from .geometry import Pose, quat_to_matrix
from .gnss_ekf import EkfNoise, GnssEkf, GnssMeasurement, global_init, initial_state, with_yaw
from .map_store import GlobalMap, PointCloud, voxel_downsample
from .preintegration import NavPoint, Preintegrator, gravity_vector, predict_pose, to_imu_frame, to_lidar_frame

log = logging.getLogger(__name__)


class Mode(str, Enum):
    INITIALIZING = "Initializing"
    TRACKING = "Tracking"
    RELOCALIZING = "Relocalizing"


@dataclass
class PipelineStats:
    transitions: list[tuple[float, Mode, Mode]] = field(default_factory=list)
    registrations: int = 0
    failures: int = 0
    relocalization_failures: int = 0
    ikf_updates: int = 0
    fused_position: int = 0
    fused_velocity: int = 0

    def count(self, src: Mode, dst: Mode) -> int:
        return sum(1 for _, a, b in self.transitions if a == src and b == dst)


class Pipeline:
    def __init__(self, gmap: GlobalMap | None, config: PipelineConfig | None = None):
        self.config = config or PipelineConfig()
        if self.config.map_registration and gmap is None:
            raise ValueError("map registration needs a map")
        self.gmap = gmap
        self.mode = Mode.INITIALIZING
        self.stats = PipelineStats()
        self.g = gravity_vector(self.config.gravity)
        self.last_t = -math.inf
        self.preint = Preintegrator()
        self.window: deque[OdomSample] = deque(maxlen=max(3, self.config.fusion.interpolation_window))
        self.ikf = ikf.VelocityIkf(process_noise=self.config.ikf_process_noise)
        self._reset_init()
        self.nav_key: NavPoint | None = None
        self.t_key: float | None = None
        self.last_fix: GnssEvent | None = None
        self.pending_fix: GnssEvent | None = None
        self.velocity_epochs: deque[GnssEvent] = deque(maxlen=8)
        self.last_mag: MagEvent | None = None
        self.prev_scan_map: GlobalMap | None = None
        self.last_result: RegistrationResult | None = None

    # ------------------------------------------------------------------ utils
    def _reset_init(self) -> None:
        self.ekf: GnssEkf | None = None
        self.fixes: deque[GnssMeasurement] = deque(maxlen=max(self.config.init_min_fixes, 1))
        self.init_ready = False
        self._last_imu: ImuEvent | None = None

    def _set_mode(self, t: float, mode: Mode) -> None:
        if mode != self.mode:
            log.info("t=%.3f %s -> %s", t, self.mode.value, mode.value)
            self.stats.transitions.append((t, self.mode, mode))
            self.mode = mode

    def _measurement(self, ev: GnssEvent) -> GnssMeasurement:
        psi = math.nan
        if self.last_mag is not None and ev.t - self.last_mag.t <= self.config.mag_max_age:
            psi = self.last_mag.psi
        return GnssMeasurement.from_sigmas(
            ev.t,
            ev.position,
            ev.velocity,
            ev.xi,
            self.config.gnss_velocity_sigma,
            psi_mag=psi,
            psi_sigma=self.config.mag_sigma,
        )

    def _imu_prediction(self, t: float) -> NavPoint | None:
        if self.nav_key is None:
            return None
        delta = self.preint.extend_to(t)
        return predict_pose(self.nav_key, delta, self.g)

    def _lidar_pose(self, nav: NavPoint) -> Pose:
        return to_lidar_frame(nav.pose(), self.config.extrinsics)

    def _start_tracking(self, t: float, pose: Pose, velocity) -> None:
        imu_pose = to_imu_frame(pose, self.config.extrinsics)
        self.nav_key = NavPoint(imu_pose.R, np.asarray(velocity, dtype=float), imu_pose.translation)
        self.t_key = t
        self.preint.reset()
        self.window.clear()
        self._set_mode(t, Mode.TRACKING)

    # ----------------------------------------------------------------- events
    def step(self, event) -> OdomSample | None:
        t = float(event.t)
        if t < self.last_t:
            raise NonMonotonicEvent(f"event at t={t} arrived after t={self.last_t}")
        self.last_t = t
        if isinstance(event, ImuEvent):
            self._on_imu(event)
        elif isinstance(event, GnssEvent):
            self._on_gnss(event)
        elif isinstance(event, MagEvent):
            self.last_mag = event
        elif isinstance(event, LidarEvent):
            return self._on_lidar(event)
        elif isinstance(event, TruthEvent):
            pass
        else:
            raise TypeError(f"unknown event type {type(event).__name__}")
        return None

    def _on_imu(self, ev: ImuEvent) -> None:
        self.preint.add(ev.sample())
        if self.mode == Mode.INITIALIZING and self.ekf is not None:
            prev = self._last_imu
            if prev is not None:
                dt = ev.t - prev.t
                if 0.0 < dt <= 0.1 and ev.t > self.ekf.state.t:
                    self.ekf.predict(prev.sample(), min(dt, ev.t - self.ekf.state.t))
        self._last_imu = ev

    def _on_gnss(self, ev: GnssEvent) -> None:
        self.last_fix = ev
        if self.mode == Mode.INITIALIZING:
            meas = self._measurement(ev)
            if self.ekf is None:
                self.ekf = GnssEkf(
                    initial_state(meas),
                    EkfNoise(self.config.ekf_gyro_noise, self.config.ekf_accel_noise),
                    self.config.gravity,
                )
            else:
                self.ekf.update(meas)
            self.fixes.append(meas)
            if not self.init_ready:
                try:
                    pose = global_init(self.fixes, self.config.init_min_fixes)
                except (InsufficientFixes, HeadingUnobservable):
                    return
                self.ekf.state = with_yaw(self.ekf.state, pose.yaw(), self.config.mag_sigma)
                self.init_ready = True
        else:
            self.pending_fix = ev
            self.velocity_epochs.append(ev)

    def _on_lidar(self, ev: LidarEvent) -> OdomSample | None:
        if self.mode == Mode.INITIALIZING:
            return self._lidar_initializing(ev)
        if self.mode == Mode.RELOCALIZING:
            return self._lidar_relocalizing(ev)
        return self._lidar_tracking(ev)

    # ---------------------------------------------------------- registration
    def _target_map(self) -> GlobalMap | None:
        return self.gmap if self.config.map_registration else self.prev_scan_map

    def _remember_scan(self, scan: PointCloud, pose: Pose) -> None:
        if self.config.map_registration:
            return
        leaf = self.config.registration.voxel_leaf
        cloud = scan.transformed(pose)
        if leaf > 0:
            cloud = voxel_downsample(cloud, leaf)
        self.prev_scan_map = GlobalMap.from_cloud(cloud) if len(cloud) else None

    def _accept(self, res: RegistrationResult) -> bool:
        return not detect_registration_failure(res, None, self.config.fusion).failed

    def _relocalize(self, t: float, scan: PointCloud, seed: Pose, cov) -> RegistrationResult | None:
        if not self.config.map_registration:
            return RegistrationResult(seed, seed, 0.0, 0, True, 1.0, status="seeded")
        try:
            return relocalize(scan, self.gmap, seed, cov, self.config.registration, accept=self._accept)
        except RelocalizationFailed as exc:
            self.stats.relocalization_failures += 1
            log.warning("t=%.3f relocalization failed after %d attempts", t, exc.attempts)
            return None

    def _lidar_initializing(self, ev: LidarEvent) -> OdomSample | None:
        if not self.init_ready or self.ekf is None:
            return None
        state = self.ekf.state
        seed = state.pose()
        if ev.t > state.t:
            seed = Pose(seed.rotation, seed.translation + state.velocity * (ev.t - state.t))
        scan = ev.load()
        res = self._relocalize(ev.t, scan, seed, state.position_covariance)
        if res is None:
            # stay in Initializing but collect fresh fixes
            self._reset_init()
            return None
        self._start_tracking(ev.t, res.pose, state.velocity)
        return self._accept_frame(ev.t, scan, res.pose, None)

    def _lidar_relocalizing(self, ev: LidarEvent) -> OdomSample | None:
        nav = self._imu_prediction(ev.t)
        rot = self._lidar_pose(nav).rotation if nav is not None else None
        fix = self.last_fix
        if fix is not None and ev.t - fix.t <= self.config.reloc_gnss_max_age:
            pos = fix.position + fix.velocity * (ev.t - fix.t)
            cov = fix.xi
            vel = fix.velocity
        elif nav is not None:
            pos = self._lidar_pose(nav).translation
            cov = np.eye(3) * self.config.reloc_default_sigma**2
            vel = nav.v
        else:
            self._set_mode(ev.t, Mode.INITIALIZING)
            self._reset_init()
            return None
        if rot is None:
            yaw = math.atan2(vel[1], vel[0])
            seed = Pose.from_xyz_rpy(*pos, yaw=yaw)
        else:
            seed = Pose(rot, pos)
        scan = ev.load()
        res = self._relocalize(ev.t, scan, seed, cov)
        if res is None:
            self._set_mode(ev.t, Mode.INITIALIZING)
            self._reset_init()
            self.nav_key = None
            return None
        self._start_tracking(ev.t, res.pose, nav.v if nav is not None else vel)
        return self._accept_frame(ev.t, scan, res.pose, None)

    def _lidar_tracking(self, ev: LidarEvent) -> OdomSample | None:
        nav_pred = self._imu_prediction(ev.t)
        seed = self._lidar_pose(nav_pred)
        scan = ev.load()
        target = self._target_map()
        cfg = self.config.registration
        res = None
        reasons: tuple[str, ...] = ()
        if target is not None:
            try:
                res = register(scan, target, seed, cfg.r_min, cfg)
            except (RegionEmpty, NoCorrespondences, ValueError) as exc:
                reasons = (str(exc),)
        else:
            reasons = ("no target map",)
        self.stats.registrations += 1
        if res is not None:
            verdict = detect_registration_failure(res, seed, self.config.fusion)
            reasons = verdict.reasons
            if not self.config.map_registration and res.status == "stalled":
                # consecutive scans sample different points, so the residual floor
                # sits above the tolerance; a settled scan-to-scan fit is still usable
                reasons = tuple(r for r in reasons if not r.startswith("not converged"))
        self.last_result = res
        if reasons:
            self.stats.failures += 1
            log.info("t=%.3f registration failed: %s", ev.t, "; ".join(reasons))
            if not self.config.map_registration:
                # dead reckoning has nothing to relocalize against; coast on the IMU
                return self._accept_frame(ev.t, scan, seed, nav_pred)
            self._set_mode(ev.t, Mode.RELOCALIZING)
            return None
        return self._accept_frame(ev.t, scan, res.pose, nav_pred)

    # ------------------------------------------------------------- outputs
    def _accept_frame(self, t: float, scan: PointCloud, pose: Pose, nav_pred: NavPoint | None) -> OdomSample:
        imu_pose = to_imu_frame(pose, self.config.extrinsics)
        if nav_pred is not None:
            dt = t - self.t_key if self.t_key is not None else 0.0
            v = nav_pred.v
            if dt > 0:
                v = v + self.config.velocity_gain * (imu_pose.translation - nav_pred.p) / dt
            self.nav_key = NavPoint(imu_pose.R, v, imu_pose.translation)
            self.t_key = t
            self.preint.reset()
        self._remember_scan(scan, pose)

        q_prime = OdomSample(t, pose, Source.LIDAR)
        prev = self.window[-1] if self.window else None
        self.window.append(q_prime)
        self._maybe_ikf()
        out = self._fuse(q_prime, prev)
        return out

    def _maybe_ikf(self) -> None:
        if not self.config.ikf_enabled or len(self.window) < 3 or self.nav_key is None:
            return
        s0, s1, s2 = list(self.window)[-3:]
        half = 0.5 * (s2.t - s1.t)
        while self.velocity_epochs and self.velocity_epochs[0].t < s1.t - half:
            self.velocity_epochs.popleft()
        if not self.velocity_epochs or abs(self.velocity_epochs[0].t - s1.t) > half:
            return
        ep = self.velocity_epochs.popleft()
        if np.linalg.norm(ep.velocity) < self.config.ikf_min_speed:
            return
        q_l = s1.pose.rotation
        v_nav = (s2.pose.translation - s0.pose.translation) / (s2.t - s0.t)
        w_v = quat_to_matrix(q_l).T @ v_nav
        obs = ikf.VelocityObservation(w_v, ep.velocity, np.eye(3) * self.config.ikf_velocity_sigma**2)
        try:
            q_new, y = self.ikf.update(q_l, q_l, obs)
        except (SingularKKT, ConstraintSingular, ErrorTooLarge) as exc:
            log.debug("IKF update skipped: %s", exc)
            return
        self.stats.ikf_updates += 1
        # carry the heading/pitch correction onto the attitude seeding the next frame
        R_corr = quat_to_matrix(q_new) @ quat_to_matrix(q_l).T
        nav = self.nav_key
        self.nav_key = NavPoint(R_corr @ nav.R, nav.v, nav.p)

    def _fuse(self, q_prime: OdomSample, prev: OdomSample | None) -> OdomSample:
        fix = self.pending_fix
        if fix is None or prev is None or abs(q_prime.t - fix.t) > self.config.gnss_max_age:
            return OdomSample(q_prime.t, q_prime.pose, Source.FUSED)
        self.pending_fix = None
        gpos = fix.position + fix.velocity * (q_prime.t - fix.t)
        # GNSS carries no attitude; its odometry sample borrows the LIDAR attitude
        q_g = OdomSample(q_prime.t, Pose(q_prime.pose.rotation, gpos), Source.GNSS)
        dq = prev.pose.inverse().compose(q_prime.pose)
        out = fuse(q_prime, q_g, fix.velocity, dq, prev, fix.xi, self.config.fusion)
        if np.trace(fix.xi) > self.config.fusion.trace_threshold:
            self.stats.fused_velocity += 1
        else:
            self.stats.fused_position += 1
        return out

    def pose_at(self, t: float) -> Pose:
        """Quadratic interpolation of recent LIDAR poses (IMU-rate output)."""
        return interpolate_pose(self.window, t, self.config.fusion.max_extrapolation)

