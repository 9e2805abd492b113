"""JSON configuration for scenarios and randomized batches.

Parsing is strict: unknown keys raise ``ConfigError`` at every level, so a
typo in a config file fails loudly instead of silently falling back to a
default.  Every section mirrors one parameter dataclass; omitted sections
take the library defaults.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional, Union

from .hmdp import KinematicParams, LaneGeometry
from .mpc import CostWeights, EngineParams, PlannerConfig
from .prediction import PredictionConfig
from .safety import IdmParams, RiskParams
from .sim import SimConfig, VehicleInit

__all__ = [
    "ConfigError",
    "Family",
    "ScenarioConfig",
    "BatchConfig",
    "default_family_grid",
    "load_scenario",
    "load_batch",
]


class ConfigError(ValueError):
    """Raised for malformed, inconsistent, or unknown configuration."""


def _require_mapping(data: Any, name: str) -> dict:
    if not isinstance(data, dict):
        raise ConfigError(f"section '{name}' must be a JSON object")
    return data


def _build_section(cls, data: Any, name: str, convert: Optional[dict] = None):
    """Instantiate a parameter dataclass from a JSON mapping, strictly."""
    data = dict(_require_mapping(data, name))
    allowed = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"unknown keys in '{name}': {', '.join(unknown)}")
    if convert:
        for key, fn in convert.items():
            if key in data and data[key] is not None:
                data[key] = fn(data[key])
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid '{name}': {exc}") from exc


def _section_dict(obj) -> dict:
    """Init-field dict of a parameter dataclass, JSON-friendly."""
    out = {}
    for f in dataclasses.fields(obj):
        if not f.init:
            continue
        value = getattr(obj, f.name)
        if isinstance(value, tuple):
            value = [list(v) if isinstance(v, tuple) else v for v in value]
        out[f.name] = value
    return out


def _parse_vehicle(data: Any, index: int) -> VehicleInit:
    data = dict(_require_mapping(data, f"vehicles[{index}]"))
    if "id" in data:
        data["vehicle_id"] = data.pop("id")
    if "speed_schedule" in data and data["speed_schedule"] is not None:
        try:
            data["speed_schedule"] = tuple(
                (float(t), float(v)) for t, v in data["speed_schedule"]
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(
                f"vehicles[{index}]: speed_schedule must be a list of [time, speed] pairs"
            ) from exc
    return _build_section(VehicleInit, data, f"vehicles[{index}]")


def _vehicle_dict(v: VehicleInit) -> dict:
    out = {"id": v.vehicle_id, "kind": v.kind, "lane": v.lane, "x": v.x, "v": v.v}
    if v.long_mode != 0:
        out["long_mode"] = v.long_mode
    if v.desired_speed is not None:
        out["desired_speed"] = v.desired_speed
    if v.p_lane_change:
        out["p_lane_change"] = v.p_lane_change
    if v.speed_schedule is not None:
        out["speed_schedule"] = [[t, s] for t, s in v.speed_schedule]
    return out


_PLANNER_KEYS = {f.name for f in dataclasses.fields(PlannerConfig) if f.init}


def _split_planner(data: Any) -> tuple[PlannerConfig, Optional[float]]:
    """The planner section carries the decision period alongside its own keys."""
    data = dict(_require_mapping(data, "planner"))
    dt = data.pop("dt", None)
    unknown = sorted(set(data) - _PLANNER_KEYS)
    if unknown:
        raise ConfigError(f"unknown keys in 'planner': {', '.join(unknown)}")
    try:
        planner = PlannerConfig(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid 'planner': {exc}") from exc
    return planner, (float(dt) if dt is not None else None)


@dataclass(frozen=True)
class ScenarioConfig:
    """One fully specified episode: parameters plus vehicle placement."""

    seed: int = 0
    geometry: LaneGeometry = LaneGeometry(lane_count=3)
    kinematics: KinematicParams = KinematicParams()
    idm: IdmParams = IdmParams()
    risk: RiskParams = RiskParams()
    weights: CostWeights = CostWeights()
    prediction: PredictionConfig = PredictionConfig()
    planner: PlannerConfig = PlannerConfig()
    sim: SimConfig = SimConfig()
    dt: float = 0.4  # [s] decision period
    vehicles: tuple[VehicleInit, ...] = ()

    def __post_init__(self) -> None:
        # fail early on an incompatible timing pair
        self.sim.substeps(self.dt)
        for v in self.vehicles:
            if not 1 <= v.lane <= self.geometry.lane_count:
                raise ConfigError(
                    f"vehicle '{v.vehicle_id}' starts in lane {v.lane}, "
                    f"but the road has lanes 1..{self.geometry.lane_count}"
                )

    def engine_params(self) -> EngineParams:
        return EngineParams(
            kinematics=self.kinematics,
            idm=self.idm,
            risk=self.risk,
            weights=self.weights,
            prediction=self.prediction,
            planner=self.planner,
            dt=self.dt,
        )

    @classmethod
    def from_dict(cls, data: Any) -> "ScenarioConfig":
        data = dict(_require_mapping(data, "scenario"))
        known = {
            "seed",
            "geometry",
            "kinematics",
            "idm",
            "risk",
            "weights",
            "prediction",
            "planner",
            "sim",
            "vehicles",
        }
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown top-level keys: {', '.join(unknown)}")
        kwargs: dict[str, Any] = {}
        if "seed" in data:
            if not isinstance(data["seed"], int):
                raise ConfigError("'seed' must be an integer")
            kwargs["seed"] = data["seed"]
        if "geometry" in data:
            kwargs["geometry"] = _build_section(LaneGeometry, data["geometry"], "geometry")
        if "kinematics" in data:
            kwargs["kinematics"] = _build_section(
                KinematicParams, data["kinematics"], "kinematics"
            )
        if "idm" in data:
            kwargs["idm"] = _build_section(IdmParams, data["idm"], "idm")
        if "risk" in data:
            kwargs["risk"] = _build_section(RiskParams, data["risk"], "risk")
        if "weights" in data:
            kwargs["weights"] = _build_section(
                CostWeights,
                data["weights"],
                "weights",
                convert={"mode_weights": lambda v: tuple(float(x) for x in v)},
            )
        if "prediction" in data:
            kwargs["prediction"] = _build_section(
                PredictionConfig, data["prediction"], "prediction"
            )
        if "planner" in data:
            planner, dt = _split_planner(data["planner"])
            kwargs["planner"] = planner
            if dt is not None:
                kwargs["dt"] = dt
        if "sim" in data:
            kwargs["sim"] = _build_section(SimConfig, data["sim"], "sim")
        if "vehicles" in data:
            if not isinstance(data["vehicles"], list):
                raise ConfigError("'vehicles' must be a JSON array")
            kwargs["vehicles"] = tuple(
                _parse_vehicle(v, i) for i, v in enumerate(data["vehicles"])
            )
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        planner = _section_dict(self.planner)
        planner["dt"] = self.dt
        return {
            "seed": self.seed,
            "geometry": _section_dict(self.geometry),
            "kinematics": _section_dict(self.kinematics),
            "idm": _section_dict(self.idm),
            "risk": _section_dict(self.risk),
            "weights": _section_dict(self.weights),
            "prediction": _section_dict(self.prediction),
            "planner": planner,
            "sim": _section_dict(self.sim),
            "vehicles": [_vehicle_dict(v) for v in self.vehicles],
        }


@dataclass(frozen=True)
class Family:
    """One cell of the randomized evaluation grid."""

    name: str
    lane_count: int
    sv_count: int
    speed_min: float  # [m/s]
    speed_max: float
    p_lane_change: float = 0.02  # per-decision lane change probability of SVs

    def __post_init__(self) -> None:
        if self.lane_count < 1 or self.sv_count < 0:
            raise ValueError("family needs at least one lane and nonnegative vehicles")
        if not 0.0 < self.speed_min <= self.speed_max:
            raise ValueError("speed range must satisfy 0 < min <= max")
        if not 0.0 <= self.p_lane_change <= 1.0:
            raise ValueError("lane change probability must lie in [0, 1]")

    @property
    def v_ref(self) -> float:
        return 0.5 * (self.speed_min + self.speed_max)


def default_family_grid() -> tuple[Family, ...]:
    """The 18-cell grid: lanes x vehicle count x speed regime."""
    families = []
    for lanes in (2, 3, 4):
        for count in (5, 8, 10):
            for tag, lo, hi in (("lo", 10.0, 20.0), ("hi", 25.0, 40.0)):
                families.append(
                    Family(
                        name=f"l{lanes}-n{count}-{tag}",
                        lane_count=lanes,
                        sv_count=count,
                        speed_min=lo,
                        speed_max=hi,
                    )
                )
    return tuple(families)


@dataclass(frozen=True)
class BatchConfig:
    """A randomized batch: family grid, trial count, shared parameters."""

    seed: int = 0
    trials_per_family: int = 25
    families: tuple[Family, ...] = dataclasses.field(default_factory=default_family_grid)
    base: ScenarioConfig = ScenarioConfig()
    workers: int = 1

    def __post_init__(self) -> None:
        if self.trials_per_family < 1:
            raise ConfigError("trials_per_family must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be positive")
        names = [f.name for f in self.families]
        if len(set(names)) != len(names):
            raise ConfigError("family names must be unique")

    @classmethod
    def from_dict(cls, data: Any) -> "BatchConfig":
        data = dict(_require_mapping(data, "batch"))
        known = {"seed", "trials_per_family", "families", "params", "workers"}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown top-level keys: {', '.join(unknown)}")
        kwargs: dict[str, Any] = {}
        if "seed" in data:
            if not isinstance(data["seed"], int):
                raise ConfigError("'seed' must be an integer")
            kwargs["seed"] = data["seed"]
        if "trials_per_family" in data:
            kwargs["trials_per_family"] = data["trials_per_family"]
        if "workers" in data:
            kwargs["workers"] = data["workers"]
        fams = data.get("families", "default")
        if fams == "default":
            kwargs["families"] = default_family_grid()
        else:
            if not isinstance(fams, list):
                raise ConfigError("'families' must be \"default\" or a JSON array")
            kwargs["families"] = tuple(
                _build_section(Family, f, f"families[{i}]") for i, f in enumerate(fams)
            )
        base = data.get("params", {})
        base = dict(_require_mapping(base, "params"))
        if "vehicles" in base or "geometry" in base:
            raise ConfigError(
                "'params' must not set vehicles or geometry; families control those"
            )
        kwargs["base"] = ScenarioConfig.from_dict(base)
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc


def _load_json(path: Union[str, Path]) -> Any:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc


def load_scenario(path: Union[str, Path]) -> ScenarioConfig:
    return ScenarioConfig.from_dict(_load_json(path))


def load_batch(path: Union[str, Path]) -> BatchConfig:
    return BatchConfig.from_dict(_load_json(path))
