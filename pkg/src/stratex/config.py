"""Scenario configuration: one versioned JSON document, strictly validated.

Unknown keys are rejected at every level and every message carries the
JSON path of the offending key, so config typos fail fast instead of
silently running with defaults.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields

from .errors import ConfigError
from .global_plan import OmissionParams
from .local_plan import LocalParams, MotionLimits
from .manager import FrontierParams, RunParams
from .sim import SensorSpec

SCHEMA_VERSION = 1
PLANNERS = ("go_feap", "nearest", "fov")


@dataclass
class WorldSpec:
    source: str = "maze"  # maze | plant | file
    path: str | None = None
    dims_m: tuple = (20.0, 10.0, 3.0)
    resolution: float = 0.1
    gen_seed: int | None = None  # defaults to the scenario seed

    def validate(self) -> None:
        if self.source not in ("maze", "plant", "file"):
            raise ConfigError(f"world.source must be maze|plant|file, got {self.source!r}")
        if self.source == "file" and not self.path:
            raise ConfigError("world.path is required when world.source is 'file'")
        if self.source != "file":
            if len(self.dims_m) != 3 or any(d <= 0 for d in self.dims_m):
                raise ConfigError(f"world.dims_m must be three positive numbers, got {self.dims_m}")
            if self.resolution <= 0:
                raise ConfigError("world.resolution must be positive")


@dataclass
class LayerSpec:
    z_layer_m: float = 3.0
    z_max_m: float | None = None  # defaults to the world height

    def validate(self) -> None:
        if self.z_layer_m <= 0:
            raise ConfigError("layers.z_layer_m must be positive")
        if self.z_max_m is not None and self.z_max_m <= 0:
            raise ConfigError("layers.z_max_m must be positive")


@dataclass
class ScenarioConfig:
    schema_version: int = SCHEMA_VERSION
    seed: int = 0
    planner: str = "go_feap"
    out_dir: str = "runs/out"
    world: WorldSpec = field(default_factory=WorldSpec)
    sensor: SensorSpec = field(default_factory=SensorSpec)
    limits: MotionLimits = field(default_factory=MotionLimits)
    omission: OmissionParams = field(default_factory=OmissionParams)
    local: LocalParams = field(default_factory=LocalParams)
    frontier: FrontierParams = field(default_factory=FrontierParams)
    layers: LayerSpec = field(default_factory=LayerSpec)
    run: RunParams = field(default_factory=RunParams)

    def validate(self) -> None:
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(
                f"schema_version {self.schema_version} unsupported (expected {SCHEMA_VERSION})")
        if self.planner not in PLANNERS:
            raise ConfigError(f"planner must be one of {PLANNERS}, got {self.planner!r}")
        self.world.validate()
        self.layers.validate()
        try:
            self.omission.validate()
        except ValueError as e:
            raise ConfigError(f"omission: {e}") from None
        if self.run.dt <= 0:
            raise ConfigError("run.dt must be positive")
        if self.run.tick_budget < 1:
            raise ConfigError("run.tick_budget must be at least 1")
        if self.limits.v_max <= 0 or self.limits.yaw_rate_max <= 0:
            raise ConfigError("limits.v_max and limits.yaw_rate_max must be positive")
        if self.limits.safety_margin < 0:
            raise ConfigError("limits.safety_margin must be non-negative")

    def manager_kwargs(self) -> dict:
        return {
            "sensor": self.sensor,
            "limits": self.limits,
            "omission": self.omission,
            "local": self.local,
            "frontier": self.frontier,
            "run": self.run,
            "z_layer": self.layers.z_layer_m,
            "z_max": self.layers.z_max_m,
        }


_SECTIONS = {
    "world": WorldSpec,
    "sensor": SensorSpec,
    "limits": MotionLimits,
    "omission": OmissionParams,
    "local": LocalParams,
    "frontier": FrontierParams,
    "layers": LayerSpec,
    "run": RunParams,
}

_TUPLE_KEYS = {"dims_m", "shell_radii_m"}
_PRIVATE_PREFIX = "_"


def _fill_dataclass(cls, doc: dict, path: str):
    allowed = {f.name: f for f in fields(cls) if not f.name.startswith(_PRIVATE_PREFIX)}
    obj = cls()
    for key, value in doc.items():
        if key not in allowed:
            raise ConfigError(f"unknown key '{path}.{key}'")
        if key in _TUPLE_KEYS and isinstance(value, list):
            value = tuple(value)
        setattr(obj, key, value)
    return obj


def parse_config(doc: dict) -> ScenarioConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    cfg = ScenarioConfig()
    top_fields = {f.name for f in fields(ScenarioConfig)}
    for key, value in doc.items():
        if key not in top_fields:
            raise ConfigError(f"unknown key '{key}'")
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"'{key}' must be a JSON object")
            setattr(cfg, key, _fill_dataclass(_SECTIONS[key], value, key))
        else:
            setattr(cfg, key, value)
    # the dynamic speed limit drives cost conversion unless set explicitly
    if "v_max" not in doc.get("omission", {}):
        cfg.omission.v_max = cfg.limits.v_max
    cfg.validate()
    return cfg


def load_config(path) -> ScenarioConfig:
    """Parse and validate a config file; errors carry file/line anchors."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from None
    except OSError as e:
        raise ConfigError(f"{path}: {e.strerror}") from None
    try:
        return parse_config(doc)
    except ConfigError as e:
        raise ConfigError(f"{path}: {e}") from None


def default_config_doc() -> dict:
    """A complete, commented-by-example scenario document."""
    return {
        "schema_version": SCHEMA_VERSION,
        "seed": 0,
        "planner": "go_feap",
        "out_dir": "runs/out",
        "world": {"source": "maze", "dims_m": [20.0, 10.0, 3.0],
                  "resolution": 0.1},
        "sensor": {"fov_h_deg": 80.0, "fov_v_deg": 60.0, "max_range": 4.5,
                   "rays_per_deg": 2.0},
        "limits": {"v_max": 2.0, "yaw_rate_max": 1.0, "accel_max": 2.0,
                   "safety_margin": 0.3},
        "omission": {"alpha_f": 1.0, "alpha_p": 1.0, "omega_i": 1.0,
                     "n_t": 1.0, "t_max": 30.0, "n_max": 5, "s_near": 8.0,
                     "v_max": 2.0, "x_near": 10, "n_min_tsp": 4,
                     "n_ref_cells": 40, "unreachable_penalty": 2.0},
        "local": {"d_near_threshold": 3.0, "corner_ratio_threshold": 0.5,
                  "window_capacity": 20, "filter_keep": 5, "dag_depth": 3},
        "frontier": {"split_threshold_m": 1.5,
                     "shell_radii_m": [1.0, 1.5, 2.0],
                     "shell_step_deg": 20.0, "unreachable_penalty": 2.0},
        "layers": {"z_layer_m": 3.0, "z_max_m": None},
        "run": {"dt": 0.1, "tick_budget": 20000, "stable_timings": True,
                "clearance_cap_m": 2.0, "spin_on_start": True,
                "viewpoint_attempts": 3},
    }
