"""Closed-loop simulation: scripted agents, limited field of view, replanning, collisions."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..config import DEFAULTS, PlannerParams
from ..geometry import InteractionPoint, default_overlap_radius, find_interaction_points
from ..ipm import PriorityClassifier, ProtectionTimeModel
from ..kernels import project_points, rect_overlap
from ..planner import IPM, AgentObservation, PlannedTrajectory, PlanningContext, plan
from .scenario import AgentSpec, Scenario

FOV_RANGE = 120.0
FOV_FLOOR = 0.2
# follower: IDM-style parameters
IDM_HEADWAY = 1.5
IDM_GAP = 2.0
IDM_DELTA = 4.0
FOLLOW_LATERAL = 1.5


def fov_range(bearing: float) -> float:
    return FOV_RANGE * max(1.0 - 2.0 * abs(bearing) / math.pi, FOV_FLOOR)


def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    return (d1 * d2 < 0) and (d3 * d4 < 0)


def line_of_sight(a, b, occluders) -> bool:
    """True if the segment a-b crosses no occluder edge."""
    for poly in occluders:
        n = len(poly)
        for i in range(n):
            if _segments_cross(a, b, poly[i], poly[(i + 1) % n]):
                return False
    return True


def fov_filter(ego_pose, agents, occluders=()) -> list:
    """Agents inside the bearing-dependent range and not hidden behind an occluder.

    ``ego_pose`` is (x, y, yaw); each agent needs ``x`` and ``y`` attributes
    (or is an (x, y) pair).
    """
    ex, ey, yaw = ego_pose
    if not all(math.isfinite(v) for v in (ex, ey, yaw)):
        raise ValueError("ego pose must be finite")
    c, s = math.cos(yaw), math.sin(yaw)
    out = []
    for ag in agents:
        ax, ay = (ag.x, ag.y) if hasattr(ag, "x") else ag
        dx, dy = ax - ex, ay - ey
        bx, by = c * dx + s * dy, -s * dx + c * dy
        dist = math.hypot(bx, by)
        if dist > 0 and dist > fov_range(math.atan2(by, bx)):
            continue
        if occluders and not line_of_sight((ex, ey), (ax, ay), occluders):
            continue
        out.append(ag)
    return out


# ---------------------------------------------------------------------------
# agents
# ---------------------------------------------------------------------------

@dataclass
class AgentState:
    spec: AgentSpec
    s: float
    v: float
    a: float = 0.0
    t_offset: float = 0.0            # jitter on the schedule clock
    trigger_time: Optional[float] = None
    active: bool = True

    @property
    def id(self) -> str:
        return self.spec.id

    def pose(self):
        return self.spec.path.pose_at(self.s)

    @property
    def x(self) -> float:
        return self.pose()[0]

    @property
    def y(self) -> float:
        return self.pose()[1]


def _schedule_accel(st: AgentState, t: float) -> float:
    sp = st.spec
    if sp.trigger_ego_s is not None:
        if st.trigger_time is None:
            return 0.0
        t = t - st.trigger_time
    t -= st.t_offset
    acc = 0.0
    for ts, a in sp.schedule:
        if t >= ts:
            acc = a
    return acc


def _follower_accel(st: AgentState, leader_gap: float, leader_v: float) -> float:
    sp = st.spec
    v0 = max(sp.v_max, 0.1)
    b = abs(sp.a_min)
    free = 1.0 - (st.v / v0) ** IDM_DELTA
    if math.isinf(leader_gap):
        return sp.a_max * free
    dv = st.v - leader_v
    want = IDM_GAP + st.v * IDM_HEADWAY + st.v * dv / (2.0 * math.sqrt(sp.a_max * b))
    gap = max(leader_gap, 0.1)
    return sp.a_max * (free - (max(want, 0.0) / gap) ** 2)


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

@dataclass
class SimMetrics:
    completion: float
    collision_count: int
    avg_speed: float
    planning_times: list = field(default_factory=list)
    reached_goal: bool = False
    duration: float = 0.0

    def row(self) -> dict:
        return {"completion": self.completion, "collision_count": self.collision_count,
                "avg_speed": self.avg_speed}


@dataclass
class SimResult:
    metrics: SimMetrics
    trace_header: list
    trace_rows: list
    # (cycle index, time, PlannedTrajectory, SearchResult or None, PlanningContext)
    cycles: list = field(default_factory=list)

    def trace_csv(self) -> str:
        lines = [",".join(self.trace_header)]
        for row in self.trace_rows:
            lines.append(",".join(_fmt(v) for v in row))
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.4f}"


Planner = Callable[[PlanningContext], PlannedTrajectory]


class Simulation:
    """One closed-loop run of a scenario with a fixed seed."""

    def __init__(self, scenario: Scenario, protection: ProtectionTimeModel, classifier: PriorityClassifier,
                 params: PlannerParams = DEFAULTS, variant: str = IPM, seed: Optional[int] = None,
                 planner: Optional[Planner] = None, keep_cycles: bool = False):
        self.sc = scenario
        self.params = params.replace(vehicle_length=scenario.vehicle_length,
                                     vehicle_width=scenario.vehicle_width)
        self.protection = protection
        self.classifier = classifier.with_gate(self.params.cr1, self.params.cr2, self.params.cr3,
                                               self.params.cp)
        self.variant = variant
        self.seed = scenario.seed if seed is None else int(seed)
        self.planner = planner
        self.keep_cycles = keep_cycles
        rng = np.random.default_rng(self.seed)
        self.agents: list[AgentState] = []
        for spec in scenario.agents:
            u = rng.uniform(-1.0, 1.0, size=3)
            s0 = float(np.clip(spec.s0 + spec.jitter_s0 * u[0], 0.0, spec.path.length))
            v0 = max(spec.v0 + spec.jitter_v0 * u[1], 0.0)
            self.agents.append(AgentState(spec, s0, v0, t_offset=float(spec.jitter_t * u[2])))
        radius = default_overlap_radius(scenario.vehicle_width, scenario.vehicle_width)
        self.ips: dict[str, tuple] = {}
        next_id = 0
        for spec in scenario.agents:
            pts = find_interaction_points(scenario.ego_path, spec.path, radius, agent_id=spec.id,
                                          first_id=next_id)
            next_id += len(pts)
            self.ips[spec.id] = tuple(pts)
        occl = []
        for k, inter in enumerate(scenario.intersections):
            if not inter.occluded:
                continue
            for ip in find_interaction_points(scenario.ego_path, inter.lane, radius,
                                              agent_id=f"lane{k}", first_id=10_000 + 100 * k):
                obs = max(ip.ego_s - self.params.obs_fraction * inter.length, 0.0)
                occl.append(_with_observation(ip, obs))
        self.occluded_points = tuple(occl)

    # -- helpers ---------------------------------------------------------
    def _ego_pose(self, s: float):
        return self.sc.ego_path.pose_at(s)

    def _agent_accel(self, st: AgentState, t: float, ego_xy, ego_v: float) -> float:
        sp = st.spec
        if sp.behavior == "constant":
            return 0.0
        if sp.behavior == "schedule":
            return _schedule_accel(st, t)
        # follower: nearest vehicle ahead on this agent's path
        others = [(a.x, a.y, a.v) for a in self.agents if a is not st and a.active]
        others.append((ego_xy[0], ego_xy[1], ego_v))
        pts = np.array([[o[0], o[1]] for o in others])
        d, proj = project_points(pts, sp.path.xy, sp.path.s)
        gap, lead_v = math.inf, 0.0
        for (dist, ps, o) in zip(d, proj, others):
            if dist <= FOLLOW_LATERAL and ps > st.s:
                g = ps - st.s - self.sc.vehicle_length
                if g < gap:
                    gap, lead_v = g, o[2]
        acc = _follower_accel(st, gap, lead_v)
        return float(np.clip(acc, sp.a_min, sp.a_max))

    def _context(self, ego_s: float, ego_v: float) -> PlanningContext:
        x, y, yaw = self._ego_pose(ego_s)
        active = [a for a in self.agents if a.active]
        visible = fov_filter((x, y, yaw), active, self.sc.occluders)
        obs, ips = [], []
        for a in visible:
            obs.append(AgentObservation(a.id, a.spec.path, a.s, a.v, a.spec.a_min, a.spec.a_max,
                                        self.sc.vehicle_length, self.sc.vehicle_width))
            ips.extend(self.ips[a.id])
        return PlanningContext(self.sc.ego_path, ego_s, ego_v, tuple(obs), tuple(ips), self.protection,
                               self.classifier, self.params, self.variant, self.sc.goal_s,
                               self.occluded_points)

    # -- main loop -------------------------------------------------------
    def run(self) -> SimResult:
        sc = self.sc
        dt = sc.dt
        n_steps = int(round(sc.duration / dt))
        replan_every = max(int(round(sc.replan_period / dt)), 1)
        ego_s, ego_v, ego_a = sc.ego_s0, sc.ego_v0, 0.0
        traj: Optional[PlannedTrajectory] = None
        plan_t0 = 0.0
        collided = False
        touching: set[str] = set()
        collisions = 0
        speeds = []
        times = []
        cycles = []
        reached = False
        header = ["t", "ego_s", "ego_v", "ego_a"]
        for a in self.agents:
            header += [f"{a.id}_s", f"{a.id}_v", f"{a.id}_visible"]
        rows = []
        L, W = sc.vehicle_length, sc.vehicle_width
        t = 0.0
        for step in range(n_steps + 1):
            t = step * dt
            ex, ey, eyaw = self._ego_pose(ego_s)
            # collision check at the current state
            for a in self.agents:
                if not a.active:
                    continue
                ax, ay, ayaw = a.pose()
                if rect_overlap(ex, ey, eyaw, L, W, ax, ay, ayaw, L, W):
                    if a.id not in touching:
                        touching.add(a.id)
                        collisions += 1
                        collided = True
                else:
                    touching.discard(a.id)
            visible_ids = {a.id for a in fov_filter((ex, ey, eyaw), [a for a in self.agents if a.active],
                                                    sc.occluders)}
            row = [t, ego_s, ego_v, ego_a]
            for a in self.agents:
                row += [a.s, a.v, a.id in visible_ids]
            rows.append(row)
            if ego_s >= sc.goal_s - 1e-6:
                reached = True
                break
            if step == n_steps:
                break
            if not collided:
                speeds.append(ego_v)
            # replanning
            if not collided and step % replan_every == 0:
                ctx = self._context(ego_s, ego_v)
                c0 = time.perf_counter()
                if self.planner is not None:
                    traj, res = self.planner(ctx), None
                else:
                    traj, res = plan(ctx, return_search=True)
                times.append(time.perf_counter() - c0)
                plan_t0 = t
                if self.keep_cycles:
                    cycles.append((len(times) - 1, t, traj, res, ctx))
            # ego update
            if collided:
                ego_v, ego_a = 0.0, 0.0
            else:
                s_new, v_new = traj.state_at(t + dt - plan_t0)
                ego_a = (v_new - ego_v) / dt
                ego_s, ego_v = max(s_new, ego_s), v_new
                ego_s = min(ego_s, sc.ego_path.length)
            # agents
            exy = (ex, ey)
            accs = [self._agent_accel(a, t, exy, ego_v) if a.active else 0.0 for a in self.agents]
            for a, acc in zip(self.agents, accs):
                if not a.active:
                    continue
                sp = a.spec
                if sp.trigger_ego_s is not None and a.trigger_time is None and ego_s >= sp.trigger_ego_s:
                    a.trigger_time = t + dt
                v_new = a.v + acc * dt
                cap = sp.v_max if sp.behavior != "constant" else math.inf
                if v_new < 0.0:
                    # stop within the step
                    tau = a.v / -acc if acc < 0 else 0.0
                    a.s += a.v * tau + 0.5 * acc * tau * tau
                    a.v = 0.0
                else:
                    v_new = min(v_new, max(cap, a.v))
                    a.s += 0.5 * (a.v + v_new) * dt
                    a.v = v_new
                a.a = acc
                if a.s >= sp.path.length:
                    a.active = False
                    touching.discard(a.id)
        completion = max(min(ego_s, sc.goal_s) - sc.ego_s0, 0.0)
        metrics = SimMetrics(completion, collisions, float(np.mean(speeds)) if speeds else 0.0, times,
                             reached, t)
        return SimResult(metrics, header, rows, cycles)


def _with_observation(ip: InteractionPoint, obs_s: float) -> InteractionPoint:
    import dataclasses
    return dataclasses.replace(ip, observation_s=obs_s)


def run_scenario(scenario: Scenario, protection, classifier, params: PlannerParams = DEFAULTS,
                 variant: str = IPM, seed: Optional[int] = None, planner: Optional[Planner] = None,
                 keep_cycles: bool = False) -> SimResult:
    return Simulation(scenario, protection, classifier, params, variant, seed, planner, keep_cycles).run()


def never_yield_planner(ctx: PlanningContext) -> PlannedTrajectory:
    """Stub that ignores everyone and drives at the path speed limit."""
    p = ctx.params
    v_lim = float(np.interp(ctx.ego_s, ctx.path.s, ctx.path.speed_limit))
    ts = np.arange(0, 31) * p.traj_dt
    v = np.minimum(ctx.ego_v + p.a_max * ts, v_lim) if ctx.ego_v <= v_lim else np.full_like(ts, ctx.ego_v)
    s = ctx.ego_s + np.concatenate([[0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * p.traj_dt)])
    return PlannedTrajectory(ts, s, v, np.gradient(v, ts), {"selected": "never-yield"})
