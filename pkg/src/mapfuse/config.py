"""Flat ``key = value`` configuration files.

Every field of ``FusionConfig``, ``RegistrationConfig`` and ``PipelineConfig``
is addressable by its bare name; extrinsics are ``t_l2m = tx ty tz qw qx qy qz``.
Unknown keys are rejected so typos surface immediately.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamic_icp import RegistrationConfig
from .errors import ConfigError
from .fusion import FusionConfig
from .geometry import Pose
from .preintegration import GRAVITY, Extrinsics


def parse_kv(text: str, source: str = "<config>") -> dict[str, tuple[str, int]]:
    """Parse ``key = value`` lines into ``{key: (raw value, line number)}``."""
    out: dict[str, tuple[str, int]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = (value, lineno)
    return out


def read_kv(path) -> dict[str, tuple[str, int]]:
    path = Path(path)
    return parse_kv(path.read_text(encoding="utf-8"), str(path))


def _convert(raw: str, typ, where: str):
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        if typ is str:
            return raw
        origin = typing.get_origin(typ)
        if origin is tuple:
            inner = typing.get_args(typ)[0]
            parts = raw.replace(",", " ").split()
            return tuple(inner(p) for p in parts)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {getattr(typ, '__name__', typ)}") from None
    raise ConfigError(f"{where}: unsupported field type {typ}")


def apply_kv(cls, values: dict[str, tuple[str, int]], source: str, consumed: set[str]):
    """Build dataclass ``cls`` from the subset of ``values`` naming its fields."""
    hints = typing.get_type_hints(cls)
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in values:
            raw, lineno = values[f.name]
            kwargs[f.name] = _convert(raw, hints[f.name], f"{source}:{lineno}: {f.name}")
            consumed.add(f.name)
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None


@dataclass(frozen=True)
class PipelineConfig:
    fusion: FusionConfig = field(default_factory=FusionConfig)
    registration: RegistrationConfig = field(default_factory=RegistrationConfig)
    extrinsics: Extrinsics = field(default_factory=Extrinsics)
    gravity: float = GRAVITY
    # pipeline behaviour
    map_registration: bool = True
    init_min_fixes: int = 5
    gnss_max_age: float = 0.5
    mag_max_age: float = 0.5
    reloc_gnss_max_age: float = 1.5
    reloc_default_sigma: float = 10.0
    velocity_gain: float = 0.5
    gnss_velocity_sigma: float = 0.05
    mag_sigma: float = 0.05
    ekf_gyro_noise: float = 1e-4
    ekf_accel_noise: float = 1e-2
    ikf_enabled: bool = True
    ikf_velocity_sigma: float = 0.2
    ikf_process_noise: float = 1e-6
    ikf_min_speed: float = 1.0


_PIPELINE_SCALARS = [f for f in dataclasses.fields(PipelineConfig) if f.name not in ("fusion", "registration", "extrinsics")]


def config_from_kv(values: dict[str, tuple[str, int]], source: str = "<config>") -> PipelineConfig:
    consumed: set[str] = set()
    fusion = apply_kv(FusionConfig, values, source, consumed)
    registration = apply_kv(RegistrationConfig, values, source, consumed)
    hints = typing.get_type_hints(PipelineConfig)
    kwargs = {}
    for f in _PIPELINE_SCALARS:
        if f.name in values:
            raw, lineno = values[f.name]
            kwargs[f.name] = _convert(raw, hints[f.name], f"{source}:{lineno}: {f.name}")
            consumed.add(f.name)
    extr = Extrinsics()
    if "t_l2m" in values:
        raw, lineno = values["t_l2m"]
        parts = raw.split()
        if len(parts) != 7:
            raise ConfigError(f"{source}:{lineno}: t_l2m needs 7 numbers (tx ty tz qw qx qy qz)")
        try:
            extr = Extrinsics(Pose.from_array([float(p) for p in parts]))
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: t_l2m: {exc}") from None
        consumed.add("t_l2m")
    unknown = sorted(set(values) - consumed)
    if unknown:
        k = unknown[0]
        raise ConfigError(f"{source}:{values[k][1]}: unknown key {k!r}")
    return PipelineConfig(fusion=fusion, registration=registration, extrinsics=extr, **kwargs)


def load_config(path) -> PipelineConfig:
    return config_from_kv(read_kv(path), str(path))


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(repr(x) for x in v)
    return repr(v)


def dump_config(cfg: PipelineConfig) -> str:
    lines = ["# fusion"]
    lines += [f"{f.name} = {_fmt(getattr(cfg.fusion, f.name))}" for f in dataclasses.fields(FusionConfig)]
    lines.append("# registration")
    lines += [f"{f.name} = {_fmt(getattr(cfg.registration, f.name))}" for f in dataclasses.fields(RegistrationConfig)]
    lines.append("# pipeline")
    lines += [f"{f.name} = {_fmt(getattr(cfg, f.name))}" for f in _PIPELINE_SCALARS]
    arr = cfg.extrinsics.T_l2m.as_array()
    lines.append("t_l2m = " + " ".join(repr(float(x)) for x in np.asarray(arr)))
    return "\n".join(lines) + "\n"
