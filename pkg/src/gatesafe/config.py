"""Strict nested configuration: validated defaults, dotted-path errors, manifests.

Configuration is YAML with one section per module. Unknown keys are rejected
naming the offending dotted path (a silent typo in a safety parameter is a
safety bug), every value is range-checked at load, and the full effective
configuration -- defaults included -- can be dumped back out as a manifest
that reproduces the run with no hidden state.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import yaml

from .barrier import SafetyParams
from .field import DistanceField, GridSpec
from .geometry import GateGeometry
from .sim import MODES, SimEnv


class ConfigError(ValueError):
    """Configuration rejected: parse failure, unknown key, or out-of-range value."""


def _require_number(section: str, key: str, value, *, minimum=None, positive=False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{section}.{key} must be a number, got {value!r}")
    v = float(value)
    if not math.isfinite(v):
        raise ConfigError(f"{section}.{key} must be finite, got {value!r}")
    if positive and v <= 0.0:
        raise ConfigError(f"{section}.{key} must be > 0, got {v}")
    if minimum is not None and v < minimum:
        raise ConfigError(f"{section}.{key} must be >= {minimum}, got {v}")
    return v


def _require_int(section: str, key: str, value, *, minimum=None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{section}.{key} must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{section}.{key} must be >= {minimum}, got {value}")
    return value


def _require_extent(section: str, key: str, value) -> tuple[float, float]:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(f"{section}.{key} must be a [lo, hi] pair, got {value!r}")
    lo = _require_number(section, key, value[0])
    hi = _require_number(section, key, value[1])
    if lo >= hi:
        raise ConfigError(f"{section}.{key} must satisfy lo < hi, got [{lo}, {hi}]")
    return (lo, hi)


def _require_vec3(section: str, key: str, value) -> tuple[float, float, float]:
    if not isinstance(value, (list, tuple)) or len(value) != 3:
        raise ConfigError(f"{section}.{key} must be three per-axis values, got {value!r}")
    out = tuple(_require_number(section, key, v, minimum=0.0) for v in value)
    return out  # type: ignore[return-value]


@dataclass
class GeometryConfig:
    inner_size: float = 1.5
    bar_thickness: float = 0.25


@dataclass
class MapConfig:
    resolution: float = 0.1
    x: tuple[float, float] = (-6.0, 6.0)
    y: tuple[float, float] = (-6.0, 6.0)
    z: tuple[float, float] = (-4.0, 4.0)


@dataclass
class SafetyConfig:
    R: float = 0.3
    gamma: float = 4.0
    alpha: float = 3.0


@dataclass
class NoiseConfig:
    dw: tuple[float, float, float] = (0.1, 0.1, 0.1)
    dv: tuple[float, float, float] = (0.25, 0.25, 0.25)


@dataclass
class SimSectionConfig:
    dt: float = 0.02
    laps: int = 3
    max_steps: int = 12000


@dataclass
class TrackConfig:
    num_gates: int = 8
    spacing: float = 6.25


@dataclass
class PolicyConfig:
    gain: float = 2.0
    pass_offset: float = 3.0


@dataclass
class RunSectionConfig:
    levels: tuple[float, ...] = (0.0, 0.5, 1.0, 1.5)
    tracks: int = 10
    modes: tuple[str, ...] = MODES
    seed_base: int = 1000


@dataclass
class Config:
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    map: MapConfig = field(default_factory=MapConfig)
    safety: SafetyConfig = field(default_factory=SafetyConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    sim: SimSectionConfig = field(default_factory=SimSectionConfig)
    track: TrackConfig = field(default_factory=TrackConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    run: RunSectionConfig = field(default_factory=RunSectionConfig)

    def gate(self) -> GateGeometry:
        return GateGeometry(inner_size=self.geometry.inner_size, bar_thickness=self.geometry.bar_thickness)

    def grid_spec(self) -> GridSpec:
        res = self.map.resolution
        dims = []
        for key, (lo, hi) in (("x", self.map.x), ("y", self.map.y), ("z", self.map.z)):
            n = (hi - lo) / res
            if abs(n - round(n)) > 1e-6:
                raise ConfigError(
                    f"map.{key} extent {hi - lo:g} is not a whole number of {res:g} m cells"
                )
            dims.append(int(round(n)) + 1)
        origin = np.array([self.map.x[0], self.map.y[0], self.map.z[0]])
        return GridSpec(origin=origin, resolution=res, dims=tuple(dims))

    def safety_params(self) -> SafetyParams:
        return SafetyParams(
            R=self.safety.R,
            gamma=self.safety.gamma,
            alpha=self.safety.alpha,
            dw=np.array(self.noise.dw),
            dv=np.array(self.noise.dv),
        )

    def sim_env(self, nominal: DistanceField, inflated: DistanceField | None) -> SimEnv:
        return SimEnv(
            gate=self.gate(),
            nominal_field=nominal,
            inflated_field=inflated,
            params=self.safety_params(),
            dt=self.sim.dt,
            max_steps=self.sim.max_steps,
            gain=self.policy.gain,
            pass_offset=self.policy.pass_offset,
        )

    def to_dict(self) -> dict:
        return {
            "geometry": {
                "inner_size": self.geometry.inner_size,
                "bar_thickness": self.geometry.bar_thickness,
            },
            "map": {
                "resolution": self.map.resolution,
                "x": list(self.map.x),
                "y": list(self.map.y),
                "z": list(self.map.z),
            },
            "safety": {"R": self.safety.R, "gamma": self.safety.gamma, "alpha": self.safety.alpha},
            "noise": {"dw": list(self.noise.dw), "dv": list(self.noise.dv)},
            "sim": {"dt": self.sim.dt, "laps": self.sim.laps, "max_steps": self.sim.max_steps},
            "track": {"num_gates": self.track.num_gates, "spacing": self.track.spacing},
            "policy": {"gain": self.policy.gain, "pass_offset": self.policy.pass_offset},
            "run": {
                "levels": list(self.run.levels),
                "tracks": self.run.tracks,
                "modes": list(self.run.modes),
                "seed_base": self.run.seed_base,
            },
        }


def _parse_geometry(data: dict) -> GeometryConfig:
    cfg = GeometryConfig()
    for key, value in data.items():
        if key == "inner_size":
            cfg.inner_size = _require_number("geometry", key, value, positive=True)
        elif key == "bar_thickness":
            cfg.bar_thickness = _require_number("geometry", key, value, positive=True)
        else:
            raise ConfigError(f"unknown key geometry.{key}")
    return cfg


def _parse_map(data: dict) -> MapConfig:
    cfg = MapConfig()
    for key, value in data.items():
        if key == "resolution":
            cfg.resolution = _require_number("map", key, value, positive=True)
        elif key in ("x", "y", "z"):
            setattr(cfg, key, _require_extent("map", key, value))
        else:
            raise ConfigError(f"unknown key map.{key}")
    return cfg


def _parse_safety(data: dict) -> SafetyConfig:
    cfg = SafetyConfig()
    for key, value in data.items():
        if key in ("R", "gamma", "alpha"):
            setattr(cfg, key, _require_number("safety", key, value, positive=True))
        else:
            raise ConfigError(f"unknown key safety.{key}")
    return cfg


def _parse_noise(data: dict) -> NoiseConfig:
    cfg = NoiseConfig()
    for key, value in data.items():
        if key in ("dw", "dv"):
            setattr(cfg, key, _require_vec3("noise", key, value))
        else:
            raise ConfigError(f"unknown key noise.{key}")
    return cfg


def _parse_sim(data: dict) -> SimSectionConfig:
    cfg = SimSectionConfig()
    for key, value in data.items():
        if key == "dt":
            v = _require_number("sim", key, value, positive=True)
            if v >= 1.0:
                raise ConfigError(f"sim.dt must be < 1 s, got {v}")
            cfg.dt = v
        elif key == "laps":
            cfg.laps = _require_int("sim", key, value, minimum=1)
        elif key == "max_steps":
            cfg.max_steps = _require_int("sim", key, value, minimum=1)
        else:
            raise ConfigError(f"unknown key sim.{key}")
    return cfg


def _parse_track(data: dict) -> TrackConfig:
    cfg = TrackConfig()
    for key, value in data.items():
        if key == "num_gates":
            cfg.num_gates = _require_int("track", key, value, minimum=1)
        elif key == "spacing":
            cfg.spacing = _require_number("track", key, value, positive=True)
        else:
            raise ConfigError(f"unknown key track.{key}")
    return cfg


def _parse_policy(data: dict) -> PolicyConfig:
    cfg = PolicyConfig()
    for key, value in data.items():
        if key == "gain":
            cfg.gain = _require_number("policy", key, value, positive=True)
        elif key == "pass_offset":
            cfg.pass_offset = _require_number("policy", key, value, minimum=0.0)
        else:
            raise ConfigError(f"unknown key policy.{key}")
    return cfg


def _parse_run(data: dict) -> RunSectionConfig:
    cfg = RunSectionConfig()
    for key, value in data.items():
        if key == "levels":
            if not isinstance(value, (list, tuple)) or not value:
                raise ConfigError(f"run.levels must be a non-empty list, got {value!r}")
            cfg.levels = tuple(_require_number("run", "levels", v, minimum=0.0) for v in value)
        elif key == "tracks":
            cfg.tracks = _require_int("run", key, value, minimum=1)
        elif key == "modes":
            if not isinstance(value, (list, tuple)) or not value:
                raise ConfigError(f"run.modes must be a non-empty list, got {value!r}")
            for m in value:
                if m not in MODES:
                    raise ConfigError(f"run.modes entry {m!r} is not one of {list(MODES)}")
            cfg.modes = tuple(value)
        elif key == "seed_base":
            cfg.seed_base = _require_int("run", key, value, minimum=0)
        else:
            raise ConfigError(f"unknown key run.{key}")
    return cfg


_SECTION_PARSERS = {
    "geometry": _parse_geometry,
    "map": _parse_map,
    "safety": _parse_safety,
    "noise": _parse_noise,
    "sim": _parse_sim,
    "track": _parse_track,
    "policy": _parse_policy,
    "run": _parse_run,
}


def parse_config(data: dict | None) -> Config:
    """Validate an already-parsed mapping into a Config (empty -> defaults)."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"config root must be a mapping of sections, got {type(data).__name__}")
    cfg = Config()
    for section, body in data.items():
        parser = _SECTION_PARSERS.get(section)
        if parser is None:
            raise ConfigError(f"unknown section {section!r} (expected one of {sorted(_SECTION_PARSERS)})")
        if body is None:
            continue
        if not isinstance(body, dict):
            raise ConfigError(f"section {section!r} must be a mapping, got {type(body).__name__}")
        setattr(cfg, section, parser(body))
    # Cross-field checks that need the assembled config.
    try:
        cfg.gate()
        cfg.grid_spec()
        cfg.safety_params()
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def load_config(path: str) -> Config:
    """Read, parse, and validate a YAML config file; empty file means defaults."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    return parse_config(data)


def dump_manifest(cfg: Config, path: str) -> None:
    """Write the full effective configuration (defaults included) as YAML."""
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=True, default_flow_style=None)
