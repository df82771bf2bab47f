"""Priority determination on top of the s-t graph search.

Each planning cycle builds a :class:`PlanningContext` from observations,
searches the graph, then walks the best profile checking interaction
priority at every interaction point. Where the ego would not have priority
it falls back to earlier nodes inside the invariable safe set and re-expands
one step, repeating until the profile passes or reduces to a safe stop.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .config import DEFAULTS, PlannerParams
from .geometry import InteractionPoint, PathProfile, observation_speed_profile
from .ipm import (ArrivalBounds, PriorityClassifier, ProtectionTimeModel, arrival_bounds,
                  priority_features, priority_probability, protection_times)
from .search import (EmptySearchError, GraphNode, SearchResult, SearchSpace, search,
                     select_path_points)

IPM = "pd-ipm"
M_MINUS = "pd-m-"
CVEL = "pd-cvel"
VARIANTS = (IPM, M_MINUS, CVEL)


# ---------------------------------------------------------------------------
# context
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AgentObservation:
    id: str
    path: PathProfile
    s: float
    v: float
    a_min: float = -3.0
    a_max: float = 1.5
    length: float = 4.5
    width: float = 2.0


@dataclass(frozen=True)
class Gate:
    """A place where the ego may have to give way.

    ``stop``: fixed conflict area starting at ``gate_s`` (ego centre station).
    ``follow``: a leading vehicle on the ego path at ``lead_s`` moving at ``lead_v``
    until it leaves the ego path at ``lead_exit_s``.
    """

    kind: str
    agent: AgentObservation
    ip: Optional[InteractionPoint] = None
    gate_s: float = math.inf
    lead_s: float = math.inf
    lead_v: float = 0.0
    lead_exit_s: float = math.inf


@dataclass(frozen=True, eq=False)
class PlanningContext:
    path: PathProfile
    ego_s: float
    ego_v: float
    agents: tuple
    interaction_points: tuple
    protection: ProtectionTimeModel
    classifier: PriorityClassifier
    params: PlannerParams = DEFAULTS
    variant: str = IPM
    goal_s: Optional[float] = None
    # map-level interaction points of occluded areas (carry observation_s)
    occluded_points: tuple = ()

    def __post_init__(self):
        ids = {a.id for a in self.agents}
        for ip in self.interaction_points:
            if ip.agent_id not in ids:
                raise ValueError(f"interaction point {ip.id} references unknown agent {ip.agent_id!r}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown planner variant {self.variant!r}")

    def agent(self, agent_id: str) -> AgentObservation:
        for a in self.agents:
            if a.id == agent_id:
                return a
        raise KeyError(agent_id)

    @property
    def half_length(self) -> float:
        return 0.5 * self.params.vehicle_length


def build_gates(ctx: PlanningContext) -> list[Gate]:
    """Gates that still matter at the current cycle."""
    gates = []
    half = ctx.half_length
    for ip in ctx.interaction_points:
        ag = ctx.agent(ip.agent_id)
        overlap_half = 0.5 * (ip.run_end_s - ip.run_start_s)
        if ip.is_line and ip.delta_theta < 0.5 * math.pi:
            exit_agent_s = ip.agent_s + (ip.run_end_s - ip.ego_s)
            if ag.s < ip.agent_s:
                if ctx.ego_s <= ip.ego_s:
                    gates.append(Gate("stop", ag, ip, gate_s=ip.run_start_s - half))
                continue
            if ag.s > exit_agent_s + 0.5 * ag.length:
                continue
            lead_s = ip.ego_s + (ag.s - ip.agent_s)
            if lead_s > ctx.ego_s:
                gates.append(Gate("follow", ag, ip, lead_s=lead_s, lead_v=max(ag.v, 0.0),
                                  lead_exit_s=ip.run_end_s))
            continue
        clear = 0.5 * ag.length + max(overlap_half, 0.5 * ctx.params.vehicle_width)
        if ag.s > ip.agent_s + clear:
            continue
        if ctx.ego_s > ip.run_end_s + half:
            continue
        gates.append(Gate("stop", ag, ip, gate_s=ip.run_start_s - half))
    return gates


# ---------------------------------------------------------------------------
# priority and safe set
# ---------------------------------------------------------------------------

def baseline_decider(kind: str, *, m_minus: float = 0.0, ego_dist: float = 0.0, ego_v: float = 0.0,
                     agent_dist: float = 0.0, agent_v: float = 0.0) -> bool:
    """True when the baseline gives the ego priority (overtake)."""
    if kind == M_MINUS:
        return m_minus < 0.0
    if kind == CVEL:
        if agent_v <= 0.0:
            return True
        if ego_v <= 0.0:
            return False
        return ego_dist / ego_v - agent_dist / agent_v < 0.0
    raise ValueError(f"unknown baseline {kind!r}")


def _agent_gap(ip: InteractionPoint, ag: AgentObservation) -> float:
    """Distance from the agent's front bumper to the interaction point."""
    return ip.agent_s - ag.s - 0.5 * ag.length


def _features(ctx: PlanningContext, node: GraphNode, ip: InteractionPoint, ag: AgentObservation):
    d_agent = _agent_gap(ip, ag)
    agent_b = arrival_bounds(ag.v, d_agent, ag.a_max, ag.a_min)
    ego_d = max(ip.ego_s - ctx.ego_s, 0.0)
    ego_latest = arrival_bounds(ctx.ego_v, ego_d, ctx.params.a_max, ctx.params.a_min).t_max
    ego_b = ArrivalBounds(node.t, max(node.t, ego_latest))
    dtm, dtp = protection_times(ctx.protection, 0.0, ip.delta_theta)
    return priority_features(ego_b, agent_b, dtm, dtp)


def priority_is_low(ctx: PlanningContext, node: GraphNode, ip: InteractionPoint) -> bool:
    """True if any agent competing for ``ip`` out-ranks the ego arriving as ``node``."""
    competitors = [a for a in ctx.agents if a.id == ip.agent_id]
    for ag in competitors:
        if _agent_gap(ip, ag) <= 0.0:
            # agent already inside the conflict area
            return True
        if ctx.variant == CVEL:
            ego_dist = ip.ego_s - ctx.ego_s
            ego_v = ego_dist / node.t if node.t > 0 else math.inf
            if not baseline_decider(CVEL, ego_dist=ego_dist, ego_v=ego_v,
                                    agent_dist=_agent_gap(ip, ag), agent_v=ag.v):
                return True
            continue
        m_minus, m_plus = _features(ctx, node, ip, ag)
        if ctx.variant == M_MINUS:
            if not baseline_decider(M_MINUS, m_minus=m_minus):
                return True
            continue
        if priority_probability(ctx.classifier, m_minus, m_plus, node.t) < ctx.classifier.cp:
            return True
    return False


def _lead_state(gate: Gate, t):
    s = gate.lead_s + gate.lead_v * np.asarray(t, dtype=float)
    return s, s <= gate.lead_exit_s


def safe_set_mask(ctx: PlanningContext, gate: Gate, s, v, t) -> np.ndarray:
    """Vectorised invariable-safe-set test for states (s, v, t)."""
    p = ctx.params
    s, v, t = np.broadcast_arrays(np.asarray(s, float), np.asarray(v, float), np.asarray(t, float))
    brake = v * v / (2.0 * abs(p.a_min))
    if gate.kind == "stop":
        ok = s + brake <= gate.gate_s - p.safe_stop_margin + 1e-9
        return ok | ((v <= 1e-9) & (s <= gate.gate_s + 1e-9))
    lead_s, on_path = _lead_state(gate, t)
    gap = lead_s - s - p.vehicle_length
    need = (v * p.t_react + brake - gate.lead_v ** 2 / (2.0 * abs(p.lead_a_min))
            + p.standstill_gap)
    return (gap >= need - 1e-9) | ~on_path


def in_invariable_safe_set(ctx: PlanningContext, node: GraphNode, gate) -> bool:
    """Stop-before-the-gate or RSS following test for one node.

    ``gate`` is a :class:`Gate` or an :class:`InteractionPoint` (treated as a
    fixed gate at its overlap entry).
    """
    if isinstance(gate, InteractionPoint):
        ag = AgentObservation(gate.agent_id, ctx.path, 0.0, 0.0)
        gate = Gate("stop", ag, gate, gate_s=gate.run_start_s - ctx.half_length)
    return bool(safe_set_mask(ctx, gate, node.s, node.v, node.t))


def _stop_position(ctx: PlanningContext, gate: Gate) -> float:
    p = ctx.params
    if gate.kind == "stop":
        return gate.gate_s - p.safe_stop_margin
    lead_stop = gate.lead_s + gate.lead_v ** 2 / (2.0 * abs(p.lead_a_min))
    return lead_stop - p.vehicle_length - p.standstill_gap


# ---------------------------------------------------------------------------
# profile checking
# ---------------------------------------------------------------------------

def _committed(ctx: PlanningContext, gate: Gate) -> bool:
    """The ego can no longer stop before a fixed gate; it has to go through."""
    if gate.kind != "stop":
        return False
    return not bool(safe_set_mask(ctx, gate, ctx.ego_s, ctx.ego_v, 0.0))


def _segment_states(parent: GraphNode, node: GraphNode, n: int = 4):
    """States along the constant-acceleration edge parent -> node (excluding parent)."""
    dt = node.t - parent.t
    if dt <= 0:
        return np.array([node.s]), np.array([node.v]), np.array([node.t])
    a = (node.v - parent.v) / dt
    tau = dt * np.arange(1, n + 1) / n
    v = np.maximum(parent.v + a * tau, 0.0)
    s = parent.s + parent.v * tau + 0.5 * a * tau * tau
    return s, v, parent.t + tau


def first_failure(ctx: PlanningContext, profile: Sequence[GraphNode], gates: Sequence[Gate]):
    """(index, gate) of the first node whose priority is low, or None.

    A fixed gate is checked at the first node reaching its interaction
    point; a leading vehicle is checked along every edge.
    """
    follow = [g for g in gates if g.kind == "follow"]
    checks: dict[int, list[Gate]] = {}
    for g in gates:
        if g.kind != "stop" or _committed(ctx, g):
            continue
        for i in range(1, len(profile)):
            if profile[i].s >= g.ip.ego_s - 0.1 - 1e-9:
                checks.setdefault(i, []).append(g)
                break
    for i in range(1, len(profile)):
        node = profile[i]
        if follow:
            s, v, t = _segment_states(profile[i - 1], node)
            for g in follow:
                if not safe_set_mask(ctx, g, s, v, t).all():
                    return i, g
        for g in checks.get(i, ()):
            if priority_is_low(ctx, node, g.ip):
                return i, g
    return None


def _passes(ctx: PlanningContext, chain: Sequence[GraphNode], gate: Gate) -> bool:
    """Whole chain respects ``gate`` (edges for a leader, the gate node for a fixed gate)."""
    if gate.kind == "follow":
        for i in range(1, len(chain)):
            s, v, t = _segment_states(chain[i - 1], chain[i])
            if not safe_set_mask(ctx, gate, s, v, t).all():
                return False
        return True
    last = chain[-1]
    return bool(safe_set_mask(ctx, gate, last.s, last.v, last.t))


def check_and_expand(ctx: PlanningContext, result: SearchResult, fail_layer: int,
                     gate: Gate) -> Optional[list[GraphNode]]:
    """Backtrack into V for nodes inside the gate's safe set and re-expand one step.

    Layers are visited from ``fail_layer - 1`` down to the root. In the first
    layer holding any candidate, children are ranked by (cost, time) and the
    cheapest whose chain respects the gate is returned.
    """
    p = ctx.params
    sp = result.space
    stop_s = _stop_position(ctx, gate)
    for l in range(min(fail_layer - 1, result.depth), -1, -1):
        ids = result.layer_ids(l)
        ids = ids[safe_set_mask(ctx, gate, sp.stations[l], result.v[ids], result.t[ids])]
        if len(ids) == 0:
            continue
        cands = [result.node(int(i)) for i in ids]
        ranked: list[tuple[float, float, int, GraphNode, GraphNode]] = []
        v = result.v[ids][:, None]
        t = result.t[ids][:, None]
        if l + 1 < sp.k:
            s_next = sp.stations[l + 1]
            ds = s_next - sp.stations[l]
            acc = np.asarray(sp.accels, float)[None, :]
            with np.errstate(invalid="ignore", divide="ignore"):
                disc = v * v + 2.0 * acc * ds
                zero = np.abs(acc) < 1e-6
                vc = np.where(zero, v, np.sqrt(np.maximum(disc, 0.0)))
                tc = np.where(zero, t + ds / np.where(v > 0, v, np.nan),
                              t + (vc - v) / np.where(zero, 1.0, acc))
            ok = np.where(zero, v > 0, disc > 0)
            ok &= (vc >= sp.c_v) & (vc >= sp.v_lower[l + 1]) & (vc <= sp.v_upper[l + 1]) & (tc <= sp.t_h)
            ok &= safe_set_mask(ctx, gate, s_next, np.where(ok, vc, 0.0), np.where(ok, tc, 0.0))
            jc = (result.cost[ids][:, None] + sp.w_a * (acc * acc * (tc - t))
                  + sp.w_v * np.abs(vc - sp.v_ref[l + 1]))
            for r, c in zip(*np.nonzero(ok)):
                par = cands[r]
                child = GraphNode(l + 1, float(s_next), float(vc[r, c]), float(tc[r, c]),
                                  float(jc[r, c]), par, float(acc[0, c]))
                ranked.append((child.cost, child.t, int(ids[r]), par, child))
        # exact stop at the stop position (search prunes v < c_v, so add it here)
        for par in cands:
            gap = stop_s - par.s
            if par.v <= 1e-9:
                vref = float(np.interp(par.s, ctx.path.s, ctx.path.speed_limit))
                child = GraphNode(l + 1, par.s, 0.0, par.t + 1.0, par.cost + sp.w_v * vref, par, 0.0)
            elif gap > 1e-6:
                a = -par.v * par.v / (2.0 * gap)
                if a < p.a_min - 1e-9:
                    continue
                dt = 2.0 * gap / par.v
                vref = float(np.interp(stop_s, ctx.path.s, ctx.path.speed_limit))
                child = GraphNode(l + 1, float(stop_s), 0.0, par.t + dt,
                                  par.cost + sp.w_a * a * a * dt + sp.w_v * vref, par, a)
            else:
                continue
            ranked.append((child.cost, child.t, 1 << 40, par, child))
        ranked.sort(key=lambda r: r[:3])
        for _, _, _, par, child in ranked:
            chain = par.chain() + [child]
            if _passes(ctx, chain, gate):
                return chain
    return None


# ---------------------------------------------------------------------------
# trajectory output
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PlannedTrajectory:
    t: np.ndarray
    s: np.ndarray
    v: np.ndarray
    a: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("t", "s", "v", "a"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def state_at(self, t: float) -> tuple[float, float]:
        """(s, v) at time ``t``; constant speed past the end."""
        if t <= self.t[-1]:
            return float(np.interp(t, self.t, self.s)), float(np.interp(t, self.t, self.v))
        return float(self.s[-1] + self.v[-1] * (t - self.t[-1])), float(self.v[-1])

    def to_csv(self) -> str:
        lines = [f"# {k}: {v}" for k, v in self.provenance.items()]
        lines.append("t,s,v,a")
        lines.extend(f"{t:.4f},{s:.6f},{v:.6f},{a:.6f}" for t, s, v, a in zip(self.t, self.s, self.v, self.a))
        return "\n".join(lines) + "\n"


class SmoothingError(ValueError):
    pass


def smooth(profile: Sequence[GraphNode], dt: float = 0.1, jerk_max: float = 5.0,
           provenance: Optional[dict] = None) -> PlannedTrajectory:
    """Resample a node chain at ``dt`` with jerk-limited acceleration ramps.

    Accelerations are constant between nodes; each change is spread over a
    ramp of ``|da| / jerk_max`` seconds centred on the node time (shortened
    when the neighbouring segments are too short). Positions at node times
    stay within a few centimetres of the nodes. A profile ending at rest is
    finished from the second-to-last node by the constant deceleration that
    stops exactly at the last station, with the ramp into that braking
    completed at the node, so the result never passes the stop.
    """
    nodes = list(profile)
    times = np.array([n.t for n in nodes], float)
    if len(nodes) < 2 or np.any(np.diff(times) <= 0):
        raise SmoothingError("profile times must increase strictly")
    t0 = times[0]
    times = times - t0
    s_n = np.array([n.s for n in nodes], float)
    v_n = np.array([n.v for n in nodes], float)
    seg_dt = np.diff(times)
    seg_a = np.diff(v_n) / seg_dt
    to_rest = v_n[-1] == 0.0 and len(nodes) >= 3
    # piecewise linear acceleration knots
    kt, ka = [0.0], [seg_a[0]]
    for i in range(1, len(seg_a)):
        da = seg_a[i] - seg_a[i - 1]
        half = 0.5 * abs(da) / jerk_max
        tn = times[i]
        if to_rest and i == len(seg_a) - 1:
            width = min(2.0 * half, seg_dt[i - 1])
            lo, hi = tn - width, tn
        else:
            half = min(half, 0.5 * seg_dt[i - 1], 0.5 * seg_dt[i])
            lo, hi = tn - half, tn + half
        kt.extend([lo, hi])
        ka.extend([seg_a[i - 1], seg_a[i]])
    kt.append(times[-1])
    ka.append(seg_a[-1])
    kt = np.array(kt)
    ka = np.array(ka)
    t_split = times[-2] if to_rest else times[-1]
    n_out = int(math.floor(t_split / dt + 1e-9))
    ts = np.arange(n_out + 1) * dt
    if ts[-1] < t_split - 1e-9:
        ts = np.append(ts, t_split)
    s_out, v_out, a_out = _integrate_knots(kt, ka, ts, s_n[0], v_n[0])
    if to_rest:
        s1, v1 = s_out[-1], v_out[-1]
        gap = s_n[-1] - s1
        if v1 > 1e-9 and gap > 1e-9:
            a_stop = -v1 * v1 / (2.0 * gap)
            t_stop = t_split + 2.0 * gap / v1
            tail = np.arange(n_out + 1, int(math.floor(t_stop / dt - 1e-9)) + 1) * dt
            tail = np.append(tail, t_stop)
            tau = tail - t_split
            a_out[-1] = a_stop
            ts = np.concatenate([ts, tail])
            s_out = np.concatenate([s_out, s1 + v1 * tau + 0.5 * a_stop * tau * tau])
            v_out = np.concatenate([v_out, np.maximum(v1 + a_stop * tau, 0.0)])
            a_out = np.concatenate([a_out, np.full(len(tail), a_stop)])
    s_out = np.minimum(s_out, s_n[-1])
    s_out = np.maximum.accumulate(s_out)
    v_out = np.maximum(v_out, 0.0)
    if v_n[-1] == 0.0:
        v_out[-1] = 0.0
        a_out[-1] = 0.0
        s_out[-1] = s_n[-1] if abs(s_out[-1] - s_n[-1]) < 0.1 else s_out[-1]
    return PlannedTrajectory(ts + t0, s_out, v_out, a_out, dict(provenance or {}))


def _integrate_knots(kt, ka, ts, s, v):
    """Integrate a piecewise linear acceleration exactly; stays at rest once stopped."""
    grid = np.union1d(kt[kt <= ts[-1]], ts)
    s_out = np.empty(len(ts))
    v_out = np.empty(len(ts))
    a_out = np.empty(len(ts))
    stopped = False
    j = 0
    for gi in range(len(grid)):
        tg = grid[gi]
        if gi > 0 and not stopped:
            h = tg - grid[gi - 1]
            a0 = float(np.interp(grid[gi - 1] + 1e-12, kt, ka))
            a1 = float(np.interp(tg - 1e-12, kt, ka))
            if h > 0:
                dv = a0 * h + 0.5 * (a1 - a0) * h
                if v + dv <= 0.0 and (a0 < 0 or a1 < 0):
                    # come to rest inside this piece
                    aa = 0.5 * (a0 + a1)
                    tau = min(h, v / -aa) if aa < 0 else h
                    s += v * tau + 0.5 * aa * tau * tau
                    v = 0.0
                    stopped = True
                else:
                    s += v * h + 0.5 * a0 * h * h + (a1 - a0) * h * h / 6.0
                    v += dv
        while j < len(ts) and abs(ts[j] - tg) < 1e-12:
            s_out[j] = s
            v_out[j] = v
            a_out[j] = 0.0 if stopped else float(np.interp(tg, kt, ka))
            j += 1
    return s_out, v_out, a_out


def _hold(s: float, horizon: float, dt: float, provenance: dict) -> PlannedTrajectory:
    ts = np.arange(int(round(horizon / dt)) + 1) * dt
    z = np.zeros_like(ts)
    return PlannedTrajectory(ts, np.full_like(ts, s), z, z, provenance)


def safe_stop(ctx: PlanningContext, stop_s: float, provenance: dict) -> PlannedTrajectory:
    """Brake to standstill before ``stop_s`` (harder if needed), then hold."""
    p = ctx.params
    v0 = max(ctx.ego_v, 0.0)
    if v0 <= 1e-9:
        return _hold(ctx.ego_s, 1.0, p.traj_dt, provenance)
    gap = stop_s - ctx.ego_s
    a = -v0 * v0 / (2.0 * gap) if gap > 1e-6 else p.a_min
    a = min(max(a, p.a_min), -1e-3)
    t_stop = v0 / -a
    ts = np.arange(int(math.floor(t_stop / p.traj_dt)) + 1) * p.traj_dt
    ts = np.append(ts, t_stop) if ts[-1] < t_stop - 1e-9 else ts
    v = np.maximum(v0 + a * ts, 0.0)
    s = ctx.ego_s + v0 * ts + 0.5 * a * ts * ts
    v[-1] = 0.0
    acc = np.full_like(ts, a)
    acc[-1] = 0.0
    return PlannedTrajectory(ts, s, v, acc, provenance)


# ---------------------------------------------------------------------------
# search space and the full cycle
# ---------------------------------------------------------------------------

def build_search_space(ctx: PlanningContext, gates: Sequence[Gate] = ()) -> SearchSpace:
    p = ctx.params
    path = ctx.path
    goal = path.length if ctx.goal_s is None else min(ctx.goal_s, path.length)
    vmax = float(path.speed_limit.max())
    s_to = min(goal, ctx.ego_s + max(vmax, ctx.ego_v) * p.t_h)
    if s_to - ctx.ego_s < 0.1:
        s_to = min(ctx.ego_s + 0.1, path.length) if path.length > ctx.ego_s + 0.1 else ctx.ego_s + 0.1
    ips = [ip for ip in ctx.interaction_points if ip.ego_s > ctx.ego_s]
    occl = [ip for ip in ctx.occluded_points if ip.observation_s is not None]
    stations = np.array(select_path_points(path, ips + occl, p.max_gap, ctx.ego_s, s_to,
                                           jump=p.breakpoint_jump))
    k = len(stations)
    upper = np.empty(k)
    for l in range(k):
        upper[l] = path.limit_between(stations[max(l - 1, 0)], stations[min(l + 1, k - 1)])
    for ip in occl:
        dtp = protection_times(ctx.protection, 0.0, ip.delta_theta)[1]
        upper = np.minimum(upper, observation_speed_profile(ip, dtp, stations, ctx.ego_s))
    upper[0] = max(upper[0], ctx.ego_v)
    lower = np.zeros(k)
    return SearchSpace(stations, lower, upper, np.minimum(upper, vmax), t_h=p.t_h, c_v=p.c_v,
                       accels=p.accels, w_a=p.w_a, w_v=p.w_v, r_v=p.r_v, r_t=p.r_t,
                       max_iter=p.max_iter, max_gap=p.max_gap)


def check_profile(ctx: PlanningContext, profile: Sequence[GraphNode], gates: Optional[Sequence[Gate]] = None):
    """Re-run the priority walk on a profile; None means every node passes."""
    return first_failure(ctx, profile, build_gates(ctx) if gates is None else gates)


def determine_profile(ctx: PlanningContext, result: SearchResult, gates: Optional[Sequence[Gate]] = None,
                      max_rounds: Optional[int] = None):
    """(profile or None, gate labels hit, last failing gate).

    ``None`` means no candidate passed within the round cap and the caller
    has to fall back to a safe stop.
    """
    gates = build_gates(ctx) if gates is None else list(gates)
    profile = result.best_profile
    rounds = result.space.k if max_rounds is None else max_rounds
    gated: list[str] = []
    gate = None
    for _ in range(rounds):
        fail = first_failure(ctx, profile, gates)
        if fail is None:
            return profile, gated, None
        i, gate = fail
        gated.append(_gate_label(gate))
        new = check_and_expand(ctx, result, i, gate)
        if new is None:
            break
        profile = new
    return None, gated, gate


def determine(ctx: PlanningContext, result: SearchResult, gates: Optional[Sequence[Gate]] = None,
              max_rounds: Optional[int] = None) -> PlannedTrajectory:
    """Pick a speed profile whose every interaction point is passed with priority."""
    p = ctx.params
    profile, gated, gate = determine_profile(ctx, result, gates, max_rounds)
    if profile is not None:
        prov = {"selected": "search-best" if not gated else "backtracked",
                "gated": " ".join(gated) or "-", "final_layer": profile[-1].layer}
        return smooth(profile, p.traj_dt, p.jerk_max, prov)
    stop_s = _stop_position(ctx, gate)
    return safe_stop(ctx, stop_s, {"selected": "safe-stop", "gated": " ".join(gated) or "-"})


def _gate_label(g: Gate) -> str:
    if g.kind == "follow":
        return f"follow:{g.agent.id}"
    return f"ip{g.ip.id}:{g.agent.id}"


def plan(ctx: PlanningContext, return_search: bool = False):
    """One planning cycle: search, then priority determination."""
    gates = build_gates(ctx)
    space = build_search_space(ctx, gates)
    try:
        result = search(space, (ctx.ego_v, 0.0))
    except EmptySearchError:
        stop_s = min([_stop_position(ctx, g) for g in gates], default=ctx.ego_s)
        traj = safe_stop(ctx, max(stop_s, ctx.ego_s), {"selected": "safe-stop", "gated": "empty-search"})
        return (traj, None) if return_search else traj
    traj = determine(ctx, result, gates)
    return (traj, result) if return_search else traj
