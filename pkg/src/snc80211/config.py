"""Scenario files: TOML documents with a versioned schema and strict keys.

Layout::

    schema = "snc80211/1"
    name = "experiment1"            # optional label
    [scenario]  n, payload          # [scenario.phy] overrides PhyParams fields
    [traffic]   kind, lam           # omit for saturated nodes
    [sim]       duration, replications, snapshot, seed
    [bound]     theta_min, theta_max, theta_points, epsilon, t_max, x_max, i_max, tol, max_sweeps
    [sweep]     lam = [...]
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Optional

import tomli

from .dcf import PhyParams, Scenario
from .sim import SimConfig
from .traffic import TrafficModel

SCHEMA = "snc80211/1"


class ConfigError(ValueError):
    """Invalid scenario file; the message names the offending field."""


@dataclass(frozen=True)
class BoundControls:
    theta_min: float = 1e-3
    theta_max: float = 4.0
    theta_points: int = 32
    epsilon: float = 1e-5
    t_max: int = 500
    x_max: int = 40
    i_max: int = 10_000
    tol: float = 1e-3
    max_sweeps: int = 8

    def __post_init__(self):
        if not 0 < self.theta_min < self.theta_max:
            raise ValueError("need 0 < theta_min < theta_max")
        if self.theta_points < 2:
            raise ValueError("theta_points must be >= 2")
        if not self.epsilon > 0 or self.t_max < 2 or self.x_max < 1 or self.i_max < 1:
            raise ValueError("epsilon > 0, t_max >= 2, x_max >= 1 and i_max >= 1 required")
        if not self.tol > 0 or self.max_sweeps < 1:
            raise ValueError("tol > 0 and max_sweeps >= 1 required")

    @property
    def x_grid(self):
        return list(range(self.x_max + 1))


@dataclass(frozen=True)
class ScenarioFile:
    scenario: Scenario
    sim: SimConfig
    bound: BoundControls = field(default_factory=BoundControls)
    sweep: tuple = ()
    name: str = ""

    @property
    def traffic(self) -> Optional[TrafficModel]:
        return self.scenario.traffic

    def with_sim(self, **changes) -> "ScenarioFile":
        changes = {k: v for k, v in changes.items() if v is not None}
        return dataclasses.replace(self, sim=dataclasses.replace(self.sim, **changes))

    def to_dict(self) -> dict:
        sc = self.scenario
        out = {"schema": SCHEMA}
        if self.name:
            out["name"] = self.name
        phy = {f.name: getattr(sc.phy, f.name) for f in dataclasses.fields(PhyParams)
               if getattr(sc.phy, f.name) != f.default}
        out["scenario"] = {"n": sc.n, "payload": sc.payload}
        if phy:
            out["scenario"]["phy"] = phy
        if sc.traffic is not None:
            out["traffic"] = {"kind": sc.traffic.kind, "lam": sc.traffic.lam}
        s = self.sim
        out["sim"] = {"duration": s.duration, "replications": s.replications,
                      "snapshot": s.snapshot, "seed": s.seed}
        out["bound"] = dataclasses.asdict(self.bound)
        if self.sweep:
            out["sweep"] = {"lam": list(self.sweep)}
        return out


def _section(doc: dict, name: str, allowed, required=(), where: str = "") -> dict:
    where = where or name
    sec = doc.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"{where}: expected a table")
    for key in sec:
        if key not in allowed:
            raise ConfigError(f"{where}.{key}: unknown key (allowed: {', '.join(sorted(allowed))})")
    for key in required:
        if key not in sec:
            raise ConfigError(f"{where}.{key}: missing required key")
    return sec


def _typed(where: str, value, kind):
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ConfigError(f"{where}: expected a finite number, got {value!r}")
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if not isinstance(value, kind):
        raise ConfigError(f"{where}: expected {kind.__name__}, got {value!r}")
    return value


def _build(where: str, cls, kwargs: dict):
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _typed_fields(where: str, sec: dict, cls) -> dict:
    types = {f.name: f.type for f in dataclasses.fields(cls)}
    conv = {"float": float, "int": int}
    return {k: _typed(f"{where}.{k}", v, conv[types[k]]) for k, v in sec.items()}


def from_dict(doc: dict) -> ScenarioFile:
    """Validate a decoded document and build the typed configuration."""
    top = {"schema", "name", "scenario", "traffic", "sim", "bound", "sweep"}
    for key in doc:
        if key not in top:
            raise ConfigError(f"{key}: unknown top-level key")
    if doc.get("schema") != SCHEMA:
        raise ConfigError(f"schema: expected {SCHEMA!r}, got {doc.get('schema')!r}")
    name = _typed("name", doc.get("name", ""), str)

    sc = _section(doc, "scenario", {"n", "payload", "phy"}, ("n", "payload"))
    phy_names = {f.name for f in dataclasses.fields(PhyParams)}
    phy = _typed_fields("scenario.phy", _section(sc, "phy", phy_names, where="scenario.phy"), PhyParams)
    phy = _build("scenario.phy", PhyParams, phy)

    traffic = None
    if "traffic" in doc:
        tr = _section(doc, "traffic", {"kind", "lam"}, ("kind", "lam"))
        traffic = _build("traffic", TrafficModel,
                         {"kind": _typed("traffic.kind", tr["kind"], str),
                          "lam": _typed("traffic.lam", tr["lam"], float)})
    scenario = _build("scenario", Scenario, {"n": _typed("scenario.n", sc["n"], int),
                                             "payload": _typed("scenario.payload", sc["payload"], int),
                                             "phy": phy, "traffic": traffic})

    sim = _section(doc, "sim", {"duration", "replications", "snapshot", "seed"})
    sim_kw = {k: _typed(f"sim.{k}", v, int if k in ("replications", "seed") else float)
              for k, v in sim.items()}
    if "seed" in sim_kw and not 0 <= sim_kw["seed"] < 2 ** 64:
        raise ConfigError("sim.seed: must be a 64-bit unsigned integer")
    sim_cfg = _build("sim", SimConfig, {"scenario": scenario, **sim_kw})

    names = {f.name for f in dataclasses.fields(BoundControls)}
    bound = _build("bound", BoundControls,
                   _typed_fields("bound", _section(doc, "bound", names), BoundControls))

    sweep = ()
    if "sweep" in doc:
        sw = _section(doc, "sweep", {"lam"}, ("lam",))
        if not isinstance(sw["lam"], list) or not sw["lam"]:
            raise ConfigError("sweep.lam: expected a non-empty list of rates")
        sweep = tuple(_typed(f"sweep.lam[{i}]", v, float) for i, v in enumerate(sw["lam"]))
        if any(v < 0 for v in sweep):
            raise ConfigError("sweep.lam: rates must be >= 0")
    return ScenarioFile(scenario, sim_cfg, bound, sweep, name)


def loads(text: str) -> ScenarioFile:
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        # tomli reports "(at line L, column C)"
        raise ConfigError(f"parse error: {exc}") from None
    return from_dict(doc)


def load(path) -> ScenarioFile:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())
