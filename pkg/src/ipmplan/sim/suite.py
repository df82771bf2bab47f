"""Batch runs over (scenario, variant, seed) and their aggregate tables."""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..config import DEFAULTS, PlannerParams
from ..geometry import PathProfile, default_overlap_radius, find_interaction_points
from ..planner import IPM, AgentObservation, PlanningContext
from .scenario import Scenario
from .world import run_scenario

BUCKET_EDGES_MS = (1.0, 10.0, 20.0, 30.0, 40.0)
BUCKET_LABELS = ("<1", "1-10", "10-20", "20-30", "30-40", ">=40")


@dataclass(frozen=True)
class RunRecord:
    scenario: str
    variant: str
    seed: int
    completion: float
    collision_count: int
    avg_speed: float
    reached_goal: bool
    planning_times: tuple


@dataclass(frozen=True)
class SuiteRow:
    variant: str
    runs: int
    completion: tuple      # (mean, std)
    collisions: tuple
    avg_speed: tuple


def _one(job) -> RunRecord:
    scenario, variant, seed, protection, classifier, params = job
    m = run_scenario(scenario, protection, classifier, params, variant, seed).metrics
    return RunRecord(scenario.name, variant, int(seed), float(m.completion), int(m.collision_count),
                     float(m.avg_speed), bool(m.reached_goal), tuple(m.planning_times))


def run_records(scenarios: Sequence[Scenario], variants: Sequence[str], seeds: Sequence[int], protection,
                classifier, params: PlannerParams = DEFAULTS, workers: int = 1) -> list[RunRecord]:
    """Every (scenario, variant, seed) run, sorted by (variant, scenario, seed)."""
    if not scenarios:
        raise ValueError("need at least one scenario")
    if not variants or not seeds:
        raise ValueError("need at least one variant and one seed")
    jobs = [(sc, var, s, protection, classifier, params) for sc in scenarios for var in variants for s in seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            recs = list(pool.map(_one, jobs, chunksize=1))
    else:
        recs = [_one(j) for j in jobs]
    return sorted(recs, key=lambda r: (r.variant, r.scenario, r.seed))


def _ms(values) -> tuple[float, float]:
    a = np.asarray(values, dtype=float)
    return float(a.mean()), float(a.std())


def aggregate(records: Sequence[RunRecord]) -> list[SuiteRow]:
    """Per-variant mean and (population) standard deviation over all runs."""
    rows = []
    for var in sorted({r.variant for r in records}):
        sel = [r for r in records if r.variant == var]
        rows.append(SuiteRow(var, len(sel), _ms([r.completion for r in sel]),
                             _ms([r.collision_count for r in sel]), _ms([r.avg_speed for r in sel])))
    return rows


def run_suite(scenarios: Sequence[Scenario], variants: Sequence[str], seeds: Sequence[int], protection,
              classifier, params: PlannerParams = DEFAULTS, workers: int = 1):
    records = run_records(scenarios, variants, seeds, protection, classifier, params, workers)
    return aggregate(records), records


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def table_csv(rows: Sequence[SuiteRow]) -> str:
    out = ["variant,runs,completion_mean,completion_std,collisions_mean,collisions_std,"
           "avg_speed_mean,avg_speed_std"]
    for r in rows:
        out.append(f"{r.variant},{r.runs},{r.completion[0]:.6f},{r.completion[1]:.6f},"
                   f"{r.collisions[0]:.6f},{r.collisions[1]:.6f},{r.avg_speed[0]:.6f},{r.avg_speed[1]:.6f}")
    return "\n".join(out) + "\n"


def records_csv(records: Sequence[RunRecord]) -> str:
    out = ["scenario,variant,seed,completion,collision_count,avg_speed,reached_goal"]
    for r in records:
        out.append(f"{r.scenario},{r.variant},{r.seed},{r.completion:.6f},{r.collision_count},"
                   f"{r.avg_speed:.6f},{int(r.reached_goal)}")
    return "\n".join(out) + "\n"


def table_text(rows: Sequence[SuiteRow]) -> str:
    head = ("variant", "runs", "completion (m)", "collisions", "avg speed (m/s)")
    body = [(r.variant, str(r.runs), f"{r.completion[0]:.1f} ± {r.completion[1]:.2f}",
             f"{r.collisions[0]:.1f} ± {r.collisions[1]:.2f}", f"{r.avg_speed[0]:.2f} ± {r.avg_speed[1]:.2f}")
            for r in rows]
    widths = [max(len(x[i]) for x in [head, *body]) for i in range(len(head))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(head, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in body]
    return "\n".join(lines) + "\n"


def timing_buckets(times_s: Sequence[float]) -> list[tuple[str, int, float]]:
    """(label, count, percent) per bucket; percentages sum to 100."""
    ms = np.asarray(times_s, dtype=float) * 1e3
    idx = np.searchsorted(np.asarray(BUCKET_EDGES_MS), ms, side="right")
    counts = np.bincount(idx, minlength=len(BUCKET_LABELS))
    total = max(int(counts.sum()), 1)
    return [(lab, int(c), 100.0 * c / total) for lab, c in zip(BUCKET_LABELS, counts)]


def timing_text(times_s: Sequence[float]) -> str:
    ms = np.asarray(times_s, dtype=float) * 1e3
    lines = [f"cycles: {len(ms)}"]
    if len(ms):
        lines.append(f"mean_ms: {ms.mean():.3f}  median_ms: {np.median(ms):.3f}  max_ms: {ms.max():.3f}")
    lines += [f"{lab:>6} ms: {c:6d}  {p:6.2f}%" for lab, c, p in timing_buckets(times_s)]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# open-loop timing contexts
# ---------------------------------------------------------------------------

def timing_contexts(n: int, protection, classifier, n_agents: int = 10, layers: int = 20, seed: int = 0,
                    params: PlannerParams = DEFAULTS, max_tries: int = 100_000) -> list[PlanningContext]:
    """Random crossing situations with ``n_agents`` visible agents and exactly ``layers`` stations.

    The ego drives a straight 200 m road limited to 15 m/s; agents cross it
    perpendicularly at random stations with random distance and speed.
    """
    from ..planner import build_gates, build_search_space

    rng = np.random.default_rng(seed)
    ego_path = PathProfile.from_waypoints([(0.0, 0.0), (200.0, 0.0)], speed_limit=15.0)
    radius = default_overlap_radius(params.vehicle_width, params.vehicle_width)
    out = []
    for _ in range(max_tries):
        if len(out) >= n:
            break
        xs = np.sort(rng.uniform(12.0, 145.0, size=n_agents))
        if np.any(np.diff(xs) < 3.0):
            continue
        agents, ips = [], []
        for i, x in enumerate(xs):
            sign = 1.0 if rng.random() < 0.5 else -1.0
            path = PathProfile.from_waypoints([(x, 60.0 * sign), (x, -60.0 * sign)])
            pts = find_interaction_points(ego_path, path, radius, agent_id=f"A{i}", first_id=len(ips))
            d = float(rng.uniform(8.0, 50.0))
            agents.append(AgentObservation(f"A{i}", path, pts[0].agent_s - d, float(rng.uniform(0.0, 9.0))))
            ips.extend(pts)
        ctx = PlanningContext(ego_path, 0.0, float(rng.uniform(4.0, 10.0)), tuple(agents), tuple(ips),
                              protection, classifier, params, IPM)
        if build_search_space(ctx, build_gates(ctx)).k == layers:
            out.append(ctx)
    if len(out) < n:
        raise RuntimeError(f"found only {len(out)} contexts with {layers} layers")
    return out
