"""Text event logs, trajectory files and simulation spec files.

Event log lines are ``t TYPE fields...``::

    t IMU wx wy wz ax ay az
    t GNSS pe pn h ve vn vu s11 s12 s13 s21 s22 s23 s31 s32 s33
    t MAG psi
    t LIDAR scanfile
    t TRUTH tx ty tz qw qx qy qz

Scan paths are relative to the log's directory. Floats are written with
``repr`` so a write/read round trip is exact.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import ParseError
from ..events import GnssEvent, ImuEvent, LidarEvent, MagEvent, TruthEvent
from ..fusion import OdomSample, Source
from ..geometry import Pose
from ..map_store import write_cloud

_FIELD_COUNTS = {"IMU": 6, "GNSS": 15, "MAG": 1, "LIDAR": 1, "TRUTH": 7}


def _f(x) -> str:
    return repr(float(x))


def _join(values) -> str:
    return " ".join(_f(v) for v in values)


def format_event(ev, scan_name: str | None = None) -> str:
    t = _f(ev.t)
    if isinstance(ev, ImuEvent):
        return f"{t} IMU {_join(ev.gyro)} {_join(ev.accel)}"
    if isinstance(ev, GnssEvent):
        return f"{t} GNSS {_join(ev.position)} {_join(ev.velocity)} {_join(np.asarray(ev.xi).ravel())}"
    if isinstance(ev, MagEvent):
        return f"{t} MAG {_f(ev.psi)}"
    if isinstance(ev, LidarEvent):
        if scan_name is None:
            if ev.path is None:
                raise ValueError("in-memory scan needs a file name")
            scan_name = str(ev.path)
        return f"{t} LIDAR {scan_name}"
    if isinstance(ev, TruthEvent):
        return f"{t} TRUTH {_join(ev.pose.as_array())}"
    raise TypeError(f"cannot format {type(ev).__name__}")


def write_event_log(directory, events, log_name: str = "events.log", scan_dir: str = "scans") -> Path:
    """Write ``events`` under ``directory``; in-memory scans go to ``scan_dir``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / scan_dir).mkdir(exist_ok=True)
    path = directory / log_name
    n_scan = 0
    with path.open("w", encoding="utf-8") as fh:
        for ev in events:
            name = None
            if isinstance(ev, LidarEvent):
                name = f"{scan_dir}/scan_{n_scan:06d}.txt"
                n_scan += 1
                write_cloud(directory / name, ev.load())
            fh.write(format_event(ev, name) + "\n")
    return path


def _floats(parts, lineno, path) -> list[float]:
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        raise ParseError(f"non-numeric field in {' '.join(parts)!r}", lineno, path) from None
    if not all(np.isfinite(vals)):
        raise ParseError("non-finite value", lineno, path)
    return vals


def parse_event_line(line: str, lineno: int, path: str, base: Path):
    parts = line.split()
    if len(parts) < 2:
        raise ParseError(f"expected 't TYPE fields...', got {line!r}", lineno, path)
    kind = parts[1]
    if kind not in _FIELD_COUNTS:
        raise ParseError(f"unknown record type {kind!r}", lineno, path)
    if len(parts) - 2 != _FIELD_COUNTS[kind]:
        raise ParseError(f"{kind} needs {_FIELD_COUNTS[kind]} fields, got {len(parts) - 2}", lineno, path)
    (t,) = _floats(parts[:1], lineno, path)
    if kind == "LIDAR":
        scan = base / parts[2]
        if not scan.is_file():
            raise ParseError(f"scan file {parts[2]!r} does not exist", lineno, path)
        return LidarEvent(t, path=scan)
    v = _floats(parts[2:], lineno, path)
    if kind == "IMU":
        return ImuEvent(t, np.array(v[:3]), np.array(v[3:]))
    if kind == "GNSS":
        xi = np.array(v[6:]).reshape(3, 3)
        return GnssEvent(t, np.array(v[:3]), np.array(v[3:6]), xi)
    if kind == "MAG":
        return MagEvent(t, v[0])
    try:
        return TruthEvent(t, Pose.from_array(v))
    except ValueError as exc:
        raise ParseError(str(exc), lineno, path) from None


def read_event_log(path) -> list:
    path = Path(path)
    base = path.parent
    events = []
    last = -np.inf
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            ev = parse_event_line(line, lineno, str(path), base)
            if ev.t < last:
                raise ParseError(f"timestamp {ev.t} precedes {last}", lineno, str(path))
            last = ev.t
            events.append(ev)
    return events


def truth_samples(events) -> list[OdomSample]:
    return [OdomSample(e.t, e.pose, Source.LIDAR) for e in events if isinstance(e, TruthEvent)]


def format_trajectory(samples) -> str:
    return "".join(f"{_f(s.t)} {_join(s.pose.as_array())}\n" for s in samples)


def write_trajectory(path, samples) -> None:
    Path(path).write_text(format_trajectory(samples), encoding="utf-8")


def read_trajectory(path) -> list[OdomSample]:
    path = Path(path)
    out = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 8:
                raise ParseError(f"trajectory lines need 8 fields, got {len(parts)}", lineno, str(path))
            v = _floats(parts, lineno, str(path))
            try:
                out.append(OdomSample(v[0], Pose.from_array(v[1:])))
            except ValueError as exc:
                raise ParseError(str(exc), lineno, str(path)) from None
    return out
