"""Scenario files (YAML).

Top-level keys::

    name: str
    duration: float            # s
    dt: float                  # s, simulation step (default 0.02)
    replan_period: float       # s (default 0.1)
    seed: int                  # default seed when none is given at run time
    vehicle: {length, width}   # footprint shared by all vehicles
    ego: {path, speed_limit, a_lat_max, s0, v0, goal_s}
    agents:                    # list
      - id: str
        path: [[x, y], ...]
        s0: float
        v0: float
        behavior: constant | schedule | follower
        schedule: [[t, a], ...]       # piecewise-constant acceleration from time t
        trigger_ego_s: float          # schedule clock starts when the ego passes this station
        v_max: float                  # speed cap for schedule/follower
        a_min, a_max: float           # declared bounds, also what the planner assumes
        jitter: {s0: float, v0: float, t: float}   # uniform +/- perturbation per seed
    occluders: [[[x, y], ...], ...]   # polygons blocking line of sight
    intersections:                    # map lanes crossing the ego path, known to the ego
      - lane: [[x, y], ...]
        length: float                 # lane length L inside the intersection
        occluded: bool

All paths are waypoint polylines, resampled at 0.5 m.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from ..geometry import PathProfile, curvature_speed_limit

FIXTURE_DIR = Path(__file__).resolve().parent.parent / "data" / "scenarios"


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class AgentSpec:
    id: str
    path: PathProfile
    s0: float
    v0: float
    behavior: str = "constant"
    schedule: tuple = ()
    trigger_ego_s: Optional[float] = None
    v_max: float = 15.0
    a_min: float = -3.0
    a_max: float = 1.5
    jitter_s0: float = 0.0
    jitter_v0: float = 0.0
    jitter_t: float = 0.0


@dataclass(frozen=True)
class Intersection:
    lane: PathProfile
    length: float
    occluded: bool = True


@dataclass(frozen=True)
class Scenario:
    name: str
    ego_path: PathProfile
    ego_s0: float
    ego_v0: float
    goal_s: float
    agents: tuple
    duration: float = 30.0
    dt: float = 0.02
    replan_period: float = 0.1
    seed: int = 0
    vehicle_length: float = 4.5
    vehicle_width: float = 2.0
    occluders: tuple = ()
    intersections: tuple = ()
    source: str = field(default="", compare=False)

    def __post_init__(self):
        if self.dt <= 0 or self.duration <= 0 or self.replan_period <= 0:
            raise ScenarioError("dt, duration and replan_period must be positive")
        if not 0 <= self.ego_s0 <= self.ego_path.length:
            raise ScenarioError("ego start is off its path")
        ids = [a.id for a in self.agents]
        if len(set(ids)) != len(ids):
            raise ScenarioError("duplicate agent ids")
        for a in self.agents:
            if not 0 <= a.s0 <= a.path.length:
                raise ScenarioError(f"agent {a.id} starts off its path")
            if a.a_min >= 0 or a.a_max <= 0:
                raise ScenarioError(f"agent {a.id}: need a_min < 0 < a_max")
            for _, acc in a.schedule:
                if not a.a_min - 1e-9 <= acc <= a.a_max + 1e-9:
                    raise ScenarioError(f"agent {a.id}: scheduled acceleration {acc} outside its bounds")


def _path(raw, limit=15.0, where="path") -> PathProfile:
    try:
        return PathProfile.from_waypoints(raw, speed_limit=limit)
    except (ValueError, TypeError) as exc:
        raise ScenarioError(f"{where}: {exc}") from None


def _num(d: dict, key: str, default=None, where=""):
    if key not in d:
        if default is None:
            raise ScenarioError(f"{where}: missing '{key}'")
        return default
    try:
        return float(d[key])
    except (TypeError, ValueError):
        raise ScenarioError(f"{where}: '{key}' must be a number") from None


def scenario_from_dict(data: dict, source: str = "") -> Scenario:
    if not isinstance(data, dict):
        raise ScenarioError("scenario root must be a mapping")
    veh = data.get("vehicle", {}) or {}
    ego = data.get("ego")
    if not isinstance(ego, dict):
        raise ScenarioError("missing 'ego' section")
    ego_path = _path(ego.get("path"), _num(ego, "speed_limit", 10.0, "ego"), "ego.path")
    a_lat = _num(ego, "a_lat_max", 2.0, "ego")
    ego_path = ego_path.with_speed_limit(curvature_speed_limit(ego_path, a_lat))
    agents = []
    for i, a in enumerate(data.get("agents", []) or []):
        where = f"agents[{i}]"
        if not isinstance(a, dict):
            raise ScenarioError(f"{where}: must be a mapping")
        jit = a.get("jitter", {}) or {}
        behavior = a.get("behavior", "constant")
        if behavior not in ("constant", "schedule", "follower"):
            raise ScenarioError(f"{where}: unknown behavior {behavior!r}")
        sched = tuple((float(t), float(acc)) for t, acc in (a.get("schedule") or []))
        agents.append(AgentSpec(
            id=str(a.get("id", f"V{i}")), path=_path(a.get("path"), where=f"{where}.path"),
            s0=_num(a, "s0", 0.0, where), v0=_num(a, "v0", 0.0, where), behavior=behavior,
            schedule=sched,
            trigger_ego_s=None if a.get("trigger_ego_s") is None else float(a["trigger_ego_s"]),
            v_max=_num(a, "v_max", 15.0, where), a_min=_num(a, "a_min", -3.0, where),
            a_max=_num(a, "a_max", 1.5, where), jitter_s0=_num(jit, "s0", 0.0, where),
            jitter_v0=_num(jit, "v0", 0.0, where), jitter_t=_num(jit, "t", 0.0, where)))
    occluders = tuple(np.asarray(p, dtype=float) for p in (data.get("occluders") or []))
    for p in occluders:
        if p.ndim != 2 or p.shape[1] != 2 or len(p) < 3:
            raise ScenarioError("occluder polygons need at least three (x, y) vertices")
    inters = tuple(Intersection(_path(x.get("lane"), where="intersections.lane"),
                                _num(x, "length", None, "intersections"), bool(x.get("occluded", True)))
                   for x in (data.get("intersections") or []))
    return Scenario(
        name=str(data.get("name", "scenario")), ego_path=ego_path, ego_s0=_num(ego, "s0", 0.0, "ego"),
        ego_v0=_num(ego, "v0", 0.0, "ego"), goal_s=min(_num(ego, "goal_s", ego_path.length, "ego"), ego_path.length),
        agents=tuple(agents), duration=_num(data, "duration", 30.0), dt=_num(data, "dt", 0.02),
        replan_period=_num(data, "replan_period", 0.1), seed=int(data.get("seed", 0)),
        vehicle_length=_num(veh, "length", 4.5), vehicle_width=_num(veh, "width", 2.0),
        occluders=occluders, intersections=inters, source=source)


def load_scenario(path) -> Scenario:
    path = Path(path)
    if not path.exists():
        cand = FIXTURE_DIR / f"{path.name}.yaml" if path.suffix == "" else None
        if cand is None or not cand.exists():
            raise ScenarioError(f"scenario file not found: {path}")
        path = cand
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{path}: {exc}") from None
    try:
        return scenario_from_dict(data, source=str(path))
    except ScenarioError as exc:
        raise ScenarioError(f"{path}: {exc}") from None


def fixture(name: str) -> Scenario:
    return load_scenario(FIXTURE_DIR / f"{name}.yaml")


def fixture_names() -> list[str]:
    return sorted(p.stem for p in FIXTURE_DIR.glob("*.yaml"))


SAFETY_SUITE = ("give_way", "overtake", "blind_corner")
