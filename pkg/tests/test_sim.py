import math

import numpy as np
import pytest
import yaml

from ipmplan.config import DEFAULTS
from ipmplan.geometry import default_overlap_radius, find_interaction_points
from ipmplan.ipm import InsufficientDataError, clip_features, pair_features
from ipmplan.kernels import rect_overlap
from ipmplan.planner import IPM, M_MINUS
from ipmplan.sim.datagen import PairRuleConfig, generate_interaction_pairs, rule_score
from ipmplan.sim.scenario import (ScenarioError, fixture, fixture_names, load_scenario,
                                  scenario_from_dict)
from ipmplan.sim.suite import aggregate, run_suite, table_text, timing_buckets
from ipmplan.sim.world import Simulation, fov_filter, line_of_sight, never_yield_planner, run_scenario


# --- field of view -------------------------------------------------------

def test_fov_examples():
    assert fov_filter((0, 0, 0), [(100.0, 0.0)]) == [(100.0, 0.0)]
    assert fov_filter((0, 0, 0), [(-30.0, 0.0)]) == []
    assert fov_filter((0, 0, 0), [(-23.0, 0.0)]) == [(-23.0, 0.0)]
    for yaw in np.linspace(-3, 3, 7):
        assert fov_filter((5.0, 5.0, yaw), [(5.0, 5.0)]) == [(5.0, 5.0)]
    with pytest.raises(ValueError):
        fov_filter((math.nan, 0, 0), [])


def test_occluder_blocks_line_of_sight():
    box = [np.array([[10, -5], [20, -5], [20, 5], [10, 5]], float)]
    assert not line_of_sight((0, 0), (30, 0), box)
    assert line_of_sight((0, 0), (30, 20), box)
    assert fov_filter((0, 0, 0), [(30.0, 0.0)], box) == []


# --- scenarios -----------------------------------------------------------

BASE = {"name": "t", "duration": 5, "ego": {"path": [[0, 0], [100, 0]], "speed_limit": 10, "v0": 0,
                                            "goal_s": 90}}


def test_fixtures_load():
    names = fixture_names()
    for n in ("give_way", "overtake", "blind_corner", "never_passable", "free_drive"):
        assert n in names
        sc = fixture(n)
        assert sc.name == n and sc.goal_s <= sc.ego_path.length


@pytest.mark.parametrize("patch, msg", [
    ({"dt": 0}, "positive"),
    ({"ego": {"path": [[0, 0]]}}, "ego.path"),
    ({"agents": [{"id": "a", "path": [[0, 0], [10, 0]], "s0": 20}]}, "off its path"),
    ({"agents": [{"id": "a", "path": [[0, 0], [10, 0]]}, {"id": "a", "path": [[0, 0], [10, 0]]}]}, "duplicate"),
    ({"agents": [{"id": "a", "path": [[0, 0], [10, 0]], "behavior": "schedule",
                  "schedule": [[0, 5.0]]}]}, "outside its bounds"),
    ({"agents": [{"id": "a", "path": [[0, 0], [10, 0]], "behavior": "fly"}]}, "behavior"),
    ({"occluders": [[[0, 0], [1, 1]]]}, "three"),
])
def test_scenario_errors(patch, msg):
    data = dict(BASE, **patch)
    with pytest.raises(ScenarioError, match=msg):
        scenario_from_dict(data)


def test_load_scenario_errors(tmp_path):
    with pytest.raises(ScenarioError, match="not found"):
        load_scenario(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("name: [unclosed\n")
    with pytest.raises(ScenarioError, match=str(bad)):
        load_scenario(bad)
    ok = tmp_path / "ok.yaml"
    ok.write_text(yaml.safe_dump(BASE))
    assert load_scenario(ok).name == "t"


# --- closed loop ---------------------------------------------------------

def test_free_drive_reaches_and_holds_limit(model):
    sc = fixture("free_drive")
    res = run_scenario(sc, *model, seed=0)
    v = np.array([r[2] for r in res.trace_rows])
    limit = float(sc.ego_path.speed_limit.max())
    assert res.metrics.reached_goal and res.metrics.collision_count == 0
    assert v.max() <= limit + 1e-6
    # speeds above sqrt(limit^2 - 2 a ds) cannot step up with the smallest positive
    # acceleration over a full station gap without overshooting the limit
    a_up = min(a for a in DEFAULTS.accels if a > 0)
    floor = math.sqrt(limit ** 2 - 2.0 * a_up * DEFAULTS.max_gap)
    cruise = v[len(v) // 2: int(len(v) * 0.8)]
    assert np.all(cruise >= floor - 1e-6)


def test_crossing_fixture_yields_and_stub_collides(model):
    # seed 1 times the crossing agent into the ego's path
    sc = fixture("blind_corner")
    res = run_scenario(sc, *model, seed=1)
    assert res.metrics.collision_count == 0 and res.metrics.reached_goal
    stub = run_scenario(sc, *model, seed=1, planner=never_yield_planner)
    assert stub.metrics.collision_count >= 1


def test_give_way_merges_behind_agent(model):
    sc = fixture("give_way")
    ag = sc.agents[0]
    (ip,) = find_interaction_points(sc.ego_path, ag.path, default_overlap_radius(), ag.id)
    half = 0.5 * sc.vehicle_length
    for seed in range(3):
        res = run_scenario(sc, *model, seed=seed)
        col = res.trace_header.index(f"{ag.id}_s")
        rows = res.trace_rows
        t_ego = next(r[0] for r in rows if r[1] + half >= ip.run_start_s)
        t_agent = next(r[0] for r in rows if r[col] - half >= ip.agent_s)
        assert res.metrics.collision_count == 0
        assert t_agent < t_ego


def test_determinism(model):
    sc = fixture("overtake")
    a = run_scenario(sc, *model, seed=3)
    b = run_scenario(sc, *model, seed=3)
    assert a.metrics.row() == b.metrics.row()
    assert a.trace_csv() == b.trace_csv()


def test_hidden_agents_never_reach_the_planner(model):
    sc = fixture("blind_corner")
    sim = Simulation(sc, *model, seed=1, keep_cycles=True)
    res = sim.run()
    col = res.trace_header.index(f"{sc.agents[0].id}_visible")
    by_time = {round(r[0], 6): r[col] for r in res.trace_rows}
    hidden_cycles = 0
    for _, t, _, _, ctx in res.cycles:
        seen = {a.id for a in ctx.agents}
        if not by_time[round(t, 6)]:
            hidden_cycles += 1
            assert sc.agents[0].id not in seen
        for ip in ctx.interaction_points:
            assert ip.agent_id in seen
    assert hidden_cycles > 0


def test_agents_respect_accel_bounds(model):
    sc = fixture("overtake")
    res = run_scenario(sc, *model, seed=0)
    for ag in sc.agents:
        col = res.trace_header.index(f"{ag.id}_v")
        v = np.array([r[col] for r in res.trace_rows])
        acc = np.diff(v) / sc.dt
        assert acc.min() >= ag.a_min - 1e-6 and acc.max() <= ag.a_max + 1e-6


def test_rect_overlap_symmetric_and_irreflexive():
    rng = np.random.default_rng(0)
    for _ in range(300):
        a = (*rng.uniform(-4, 4, 2), rng.uniform(-3, 3), 4.5, 2.0)
        b = (*rng.uniform(-4, 4, 2), rng.uniform(-3, 3), 4.5, 2.0)
        assert rect_overlap(*a, *b) == rect_overlap(*b, *a)
    assert rect_overlap(0, 0, 0, 4.5, 2.0, 4.4, 0, 0, 4.5, 2.0)
    assert not rect_overlap(0, 0, 0, 4.5, 2.0, 4.6, 0, 0, 4.5, 2.0)


# --- suite ---------------------------------------------------------------

def test_single_run_suite_has_zero_std(model):
    rows, recs = run_suite([fixture("free_drive")], [IPM], [0], *model)
    assert len(rows) == 1 and rows[0].runs == 1
    assert rows[0].completion[1] == rows[0].avg_speed[1] == rows[0].collisions[1] == 0.0
    assert "±" in table_text(rows)


def test_suite_rows_per_variant(model):
    rows, recs = run_suite([fixture("free_drive")], [IPM, M_MINUS], [0, 1], *model)
    assert [r.variant for r in rows] == sorted([IPM, M_MINUS])
    assert len(recs) == 4
    assert aggregate(recs) == rows


def test_timing_buckets_partition():
    times = np.array([0.0005, 0.005, 0.015, 0.025, 0.035, 0.05, 0.002, 0.01])
    b = timing_buckets(times)
    assert sum(c for _, c, _ in b) == len(times)
    assert sum(p for _, _, p in b) == pytest.approx(100.0)
    # 10 ms lands in the 10-20 bucket
    assert dict((lab, c) for lab, c, _ in b)["10-20"] == 2


# --- synthetic pairs -----------------------------------------------------

def test_datagen_examples():
    with pytest.raises(InsufficientDataError):
        generate_interaction_pairs(PairRuleConfig(), 0, 0)
    cfg = PairRuleConfig()
    pairs = generate_interaction_pairs(cfg, 5000, 0)
    share = np.mean([p.label for p in pairs])
    assert 0.4 <= share <= 0.6
    x, y = pair_features(pairs[:500], cfg.rule_protection())
    for (mm, mp), lab in zip(x, y):
        assert (rule_score(cfg, mm, mp) < 0) == bool(lab)
    again = generate_interaction_pairs(cfg, 50, 0)
    assert again == pairs[:50]
