"""Scenario configuration: JSON on disk, dataclasses in memory."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from .grid import GridError, GridSpec
from .hjsolver import SCHEMES, DisturbanceBound, SolveConfig
from .plant import PlantError, RelayStatus, SafeBounds, SmibParams


class ConfigError(ValueError):
    pass


@dataclass
class SafeConfig:
    """``delta_n=None`` centres the safe set on the closed-relay stable equilibrium."""

    delta_n: Optional[float] = None
    omega_n: float = 0.0
    delta_half_width: float = math.pi / 2
    omega_half_width: float = 6.0

    def resolve(self, params: SmibParams) -> SafeBounds:
        centre = SafeBounds.nominal(params).delta_n if self.delta_n is None else self.delta_n
        return SafeBounds(centre, self.omega_n, self.delta_half_width, self.omega_half_width)


@dataclass
class AttackConfig:
    x0: tuple = (1.2, 6.0)
    # coordinated plan
    coordinated_x0: Optional[tuple] = None  # None: closed-relay stable equilibrium
    switch: str = "region"  # "region" or "time"
    t_switch: Optional[float] = None
    margin: float = 0.02
    bound: Optional[float] = None  # None: smallest of bound_candidates that can leave the region
    bound_candidates: tuple = (0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
    T: float = 10.0


@dataclass
class SimConfig:
    dt: float = 1e-3
    T: float = 10.0
    policy: str = "zero"  # zero | constant | keep_out | keep_in
    constant: float = 0.0
    relay_switch_time: Optional[float] = None  # relay flips to the other state at this time


@dataclass
class SweepConfig:
    start: float = 0.1
    stop: float = 0.7
    step: float = 0.05


@dataclass
class HitlConfig:
    dt: float = 1e-3
    T: float = 3.0
    timeout: float = 5.0
    tolerance: float = 1e-9


@dataclass
class ScenarioConfig:
    params: SmibParams = field(default_factory=SmibParams)
    grid: GridSpec = field(default_factory=GridSpec)
    safe: SafeConfig = field(default_factory=SafeConfig)
    dbound: DisturbanceBound = field(default_factory=lambda: DisturbanceBound.symmetric(0.2))
    relay: str = "both"  # open | closed | both
    horizon: float = 3.0
    ball_radii: tuple = (0.1, 0.5)
    x0: list = field(default_factory=lambda: [(-0.5, 13.0)])
    solver: SolveConfig = field(default_factory=SolveConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    hitl: HitlConfig = field(default_factory=HitlConfig)
    spoof: list = field(default_factory=list)  # [{t0, t1, d, relay}] for hitl-proxy
    out: str = "out"

    @property
    def safe_bounds(self) -> SafeBounds:
        return self.safe.resolve(self.params)

    @property
    def relays(self) -> list:
        if self.relay == "both":
            return [RelayStatus.CLOSED, RelayStatus.OPEN]
        return [RelayStatus.parse(self.relay)]

    def solve_config(self, horizon: Optional[float] = None, **overrides) -> SolveConfig:
        return replace(self.solver, horizon=self.horizon if horizon is None else horizon, **overrides)

    def as_dict(self) -> dict:
        return {
            "params": self.params.as_dict(),
            "grid": self.grid.as_dict(),
            "safe": dict(self.safe.__dict__, resolved=self.safe_bounds.as_dict()),
            "dbound": self.dbound.as_dict(),
            "relay": self.relay,
            "horizon": self.horizon,
            "ball_radii": list(self.ball_radii),
            "x0": [list(p) for p in self.x0],
            "solver": self.solver.as_dict(),
            "attack": _plain(self.attack.__dict__),
            "sim": dict(self.sim.__dict__),
            "sweep": dict(self.sweep.__dict__),
            "hitl": dict(self.hitl.__dict__),
            "spoof": [dict(r) for r in self.spoof],
            "out": self.out,
        }


def _plain(d: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def _build(cls, data, section: str):
    if not isinstance(data, dict):
        raise ConfigError(f"[{section}] must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"[{section}] unknown keys: {', '.join(unknown)}")
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError, GridError, PlantError) as exc:
        raise ConfigError(f"[{section}] {exc}") from exc


def _dbound(value) -> DisturbanceBound:
    try:
        if isinstance(value, (int, float)):
            return DisturbanceBound.symmetric(float(value))
        if isinstance(value, dict) and set(value) <= {"d_l", "d_h"}:
            return DisturbanceBound(float(value["d_l"]), float(value["d_h"]))
        if isinstance(value, list) and len(value) == 2:
            return DisturbanceBound(float(value[0]), float(value[1]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"[dbound] {exc}") from exc
    raise ConfigError("[dbound] expected a number, [d_l, d_h] or {d_l, d_h}")


def _point(p, section: str) -> tuple:
    if not (isinstance(p, (list, tuple)) and len(p) == 2):
        raise ConfigError(f"[{section}] points must be [delta, omega] pairs")
    try:
        return (float(p[0]), float(p[1]))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from exc


def _spoof_rules(data) -> list:
    if not isinstance(data, list):
        raise ConfigError("[spoof] must be a list of rules")
    rules = []
    for r in data:
        if not isinstance(r, dict) or "t0" not in r or not set(r) <= {"t0", "t1", "d", "relay"}:
            raise ConfigError("[spoof] rules take t0 and optional t1, d, relay")
        try:
            rule = {"t0": float(r["t0"]), "t1": float(r.get("t1", math.inf)),
                    "d": None if r.get("d") is None else float(r["d"]), "relay": r.get("relay")}
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[spoof] {exc}") from exc
        if rule["relay"] is not None and rule["relay"] not in ("open", "closed"):
            raise ConfigError("[spoof] relay must be open or closed")
        if rule["t0"] > rule["t1"]:
            raise ConfigError("[spoof] rule windows need t0 <= t1")
        rules.append(rule)
    return rules


def config_from_dict(data: dict) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration root must be an object")
    known = {f.name for f in fields(ScenarioConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown top-level keys: {', '.join(unknown)}")
    cfg = ScenarioConfig()
    if "params" in data:
        cfg.params = _build(SmibParams, data["params"], "params")
    if "grid" in data:
        cfg.grid = _build(GridSpec, data["grid"], "grid")
    if "safe" in data:
        cfg.safe = _build(SafeConfig, data["safe"], "safe")
    if "dbound" in data:
        cfg.dbound = _dbound(data["dbound"])
    if "relay" in data:
        if data["relay"] not in ("open", "closed", "both"):
            raise ConfigError("[relay] must be open, closed or both")
        cfg.relay = data["relay"]
    if "horizon" in data:
        cfg.horizon = data["horizon"]
    if "ball_radii" in data:
        cfg.ball_radii = _point(data["ball_radii"], "ball_radii")
    if "x0" in data:
        if not isinstance(data["x0"], list):
            raise ConfigError("[x0] must be a list of [delta, omega] pairs")
        cfg.x0 = [_point(p, "x0") for p in data["x0"]]
    if "solver" in data:
        solver = dict(data["solver"]) if isinstance(data["solver"], dict) else data["solver"]
        if isinstance(solver, dict) and "horizon" in solver:
            raise ConfigError("[solver] set the horizon at the top level")
        cfg.solver = _build(SolveConfig, solver, "solver")
    for name, cls in (("attack", AttackConfig), ("sim", SimConfig), ("sweep", SweepConfig),
                      ("hitl", HitlConfig)):
        if name in data:
            setattr(cfg, name, _build(cls, data[name], name))
    if "spoof" in data:
        cfg.spoof = _spoof_rules(data["spoof"])
    if "out" in data:
        cfg.out = str(data["out"])
    validate(cfg)
    return cfg


def validate(cfg: ScenarioConfig) -> None:
    if not (isinstance(cfg.horizon, (int, float)) and cfg.horizon >= 0):
        raise ConfigError("[horizon] must be a non-negative number")
    if not all(r > 0 for r in cfg.ball_radii):
        raise ConfigError("[ball_radii] must be positive")
    if cfg.solver.scheme not in SCHEMES:
        raise ConfigError(f"[solver] scheme must be one of {SCHEMES}")
    if cfg.attack.switch not in ("region", "time"):
        raise ConfigError("[attack] switch must be region or time")
    if cfg.attack.switch == "time" and cfg.attack.t_switch is None:
        raise ConfigError("[attack] time switch needs t_switch")
    if cfg.sim.policy not in ("zero", "constant", "keep_out", "keep_in"):
        raise ConfigError("[sim] policy must be zero, constant, keep_out or keep_in")
    if not (cfg.sim.dt > 0 and cfg.sim.T >= cfg.sim.dt):
        raise ConfigError("[sim] need dt > 0 and T >= dt")
    if not (cfg.hitl.dt > 0 and cfg.hitl.T >= cfg.hitl.dt and cfg.hitl.timeout > 0):
        raise ConfigError("[hitl] need dt > 0, T >= dt and a positive timeout")
    if not (0 < cfg.sweep.step and cfg.sweep.start <= cfg.sweep.stop):
        raise ConfigError("[sweep] need step > 0 and start <= stop")
    try:
        cfg.safe_bounds
    except PlantError as exc:
        raise ConfigError(f"[safe] {exc}") from exc


def load_config(path) -> ScenarioConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from exc
    return config_from_dict(data)
