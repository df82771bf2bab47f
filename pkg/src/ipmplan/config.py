"""Planner constants in one place.

Fields tagged ``[ref]`` hold the reference experiment values; untagged
fields are choices made here. Every field can be overridden from the command
line with ``--set name=value``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field


@dataclass(frozen=True)
class PlannerParams:
    # vehicle limits
    a_min: float = -3.0            # [ref]
    a_max: float = 1.5             # [ref]
    a_lat_max: float = 2.0
    jerk_max: float = 5.0
    # s-t graph search
    t_h: float = 10.0              # [ref]
    c_v: float = 0.1               # [ref]
    r_v: float = 0.2               # [ref]
    r_t: float = 0.2               # [ref]
    max_gap: float = 10.0          # [ref] largest gap between stations
    max_iter: int = 20000
    w_a: float = 0.2
    w_v: float = 1.0
    accels: tuple = (-3.0, -1.5, -0.5, 0.0, 0.5, 1.0, 1.5)
    breakpoint_jump: float = 0.5
    # priority classifier gate
    cr1: float = 0.5               # [ref]
    cr2: float = 1.5               # [ref]
    cr3: float = 5.0               # [ref]
    cp: float = 0.95               # [ref]
    # occlusion heuristic: Dist(p_o, p_j) = obs_fraction * lane length
    obs_fraction: float = 0.15     # [ref]
    # invariable safe set
    t_react: float = 0.4
    standstill_gap: float = 2.0
    safe_stop_margin: float = 1.0
    lead_a_min: float = -3.0
    # output trajectory
    traj_dt: float = 0.1
    # closed loop
    sim_dt: float = 0.02
    replan_period: float = 0.1
    vehicle_length: float = 4.5
    vehicle_width: float = 2.0

    def replace(self, **kw) -> "PlannerParams":
        return dataclasses.replace(self, **kw)


DEFAULTS = PlannerParams()


def _coerce(name: str, raw: str):
    fld = {f.name: f for f in dataclasses.fields(PlannerParams)}.get(name)
    if fld is None:
        raise KeyError(f"unknown parameter {name!r}")
    default = getattr(DEFAULTS, name)
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(float(x) for x in raw.split(",") if x.strip())
    except ValueError:
        raise ValueError(f"parameter {name!r} expects {type(default).__name__}, got {raw!r}") from None
    return raw


def apply_overrides(params: PlannerParams, items) -> PlannerParams:
    """Apply ``name=value`` strings, type-checked against the defaults."""
    kw = {}
    for item in items or ():
        if "=" not in item:
            raise ValueError(f"override {item!r} is not name=value")
        name, raw = item.split("=", 1)
        kw[name.strip()] = _coerce(name.strip(), raw.strip())
    return params.replace(**kw) if kw else params


def describe(params: PlannerParams) -> list[str]:
    return [f"{f.name}={getattr(params, f.name)!r}" for f in dataclasses.fields(params)]
