import itertools
import math

import numpy as np
import pytest

from ipmplan.geometry import POINT_OVERLAP, InteractionPoint, PathProfile, curvature_speed_limit
from ipmplan.search import (EmptySearchError, GraphNode, SearchSpace, expand, node_cost, search,
                            select_path_points)


def brute_force(space: SearchSpace, v0: float, t0: float = 0.0):
    """(depth, min cost) over every acceleration sequence, with the search's own feasibility rules."""
    best = {0: 0.0}
    k = space.k
    for depth in range(1, k):
        costs = []
        for seq in itertools.product(space.accels, repeat=depth):
            v, t, j = v0, t0, 0.0
            ok = True
            for l, a in enumerate(seq):
                node = GraphNode(l, float(space.stations[l]), v, t, j)
                if t > space.t_h:
                    ok = False
                    break
                nxt = expand(node, a, float(space.stations[l + 1]), space.v_lower[l + 1],
                             space.v_upper[l + 1], space.t_h, space.c_v)
                if nxt is None:
                    ok = False
                    break
                vc, tc = nxt
                j = node_cost(j, a, tc - t, vc, space.v_ref[l + 1], space.w_a, space.w_v)
                v, t = vc, tc
            if ok:
                costs.append(j)
        if costs:
            best[depth] = min(costs)
    depth = max(best)
    return depth, best[depth]


def random_space(rng, fine=True):
    k = int(rng.integers(2, 5))
    stations = np.concatenate([[0.0], np.cumsum(rng.uniform(1.0, 10.0, k - 1))])
    n_acc = int(rng.integers(1, 4))
    accels = tuple(sorted(rng.choice([-3.0, -1.5, -0.5, 0.0, 0.5, 1.0, 1.5], n_acc, replace=False)))
    hi = rng.uniform(3.0, 15.0, k)
    lo = np.minimum(rng.uniform(0.0, 4.0, k), hi - 0.5)
    ref = rng.uniform(0.0, 15.0, k)
    r = 1e-9 if fine else 0.2
    return SearchSpace(stations, lo, hi, ref, t_h=float(rng.uniform(3.0, 12.0)), c_v=0.1, accels=accels,
                       w_a=float(rng.uniform(0.1, 1.0)), w_v=float(rng.uniform(0.1, 2.0)), r_v=r, r_t=r)


def test_select_uniform():
    path = PathProfile.from_waypoints([(0, 0), (30, 0)])
    assert select_path_points(path, [], 10.0) == pytest.approx([0.0, 10.0, 20.0, 30.0])


def test_select_keeps_interaction_station_verbatim():
    path = PathProfile.from_waypoints([(0, 0), (30, 0)])
    ip = InteractionPoint(0, 13.2, "a", 3.0, (13.2, 0.0), 1.0, POINT_OVERLAP)
    pts = select_path_points(path, [ip], 10.0)
    assert 13.2 in pts
    assert all(0 < b - a <= 10.0 + 1e-9 for a, b in zip(pts, pts[1:]))


def test_select_finds_limit_breakpoint():
    r = 1.0 / 0.08          # curvature bound sqrt(2 / 0.08) = 5 m/s
    th = np.linspace(0.0, 1.2, 100)
    bend = np.column_stack([18.0 + r * np.sin(th), r - r * np.cos(th)])
    path = PathProfile.from_waypoints(np.vstack([[[0.0, 0.0]], bend]), speed_limit=8.0)
    path = path.with_speed_limit(curvature_speed_limit(path, 2.0))
    # oracle: first sample whose bound drops below the straight-road limit
    drop = path.s[np.argmax(path.speed_limit < 8.0 - 0.5)]
    assert drop == pytest.approx(18.0, abs=0.5)
    pts = select_path_points(path, [], 10.0)
    assert min(abs(p - 18.0) for p in pts) <= 0.5


def test_expand_examples():
    n = GraphNode(0, 0.0, 4.0, 1.0, 0.0)
    assert expand(n, 1.0, 10.0) == pytest.approx((6.0, 3.0))
    assert expand(GraphNode(0, 0.0, 5.0, 0.0, 0.0), 0.0, 10.0) == pytest.approx((5.0, 2.0))
    assert expand(GraphNode(0, 0.0, 2.0, 0.0, 0.0), -3.0, 10.0) is None
    assert expand(n, 1.0, 10.0, v_upper=5.0) is None
    assert expand(n, 1.0, 10.0, t_h=2.5) is None
    with pytest.raises(ValueError):
        expand(n, 1.0, 0.0)


def test_expand_matches_integration():
    v, s, t, a = 4.0, 0.0, 0.0, 1.0
    dt = 1e-4
    while s < 10.0:
        s += v * dt + 0.5 * a * dt * dt
        v += a * dt
        t += dt
    vc, tc = expand(GraphNode(0, 0.0, 4.0, 0.0, 0.0), 1.0, 10.0)
    assert vc == pytest.approx(v, abs=1e-3) and tc == pytest.approx(t, abs=1e-3)


def test_node_cost_examples():
    assert node_cost(0.0, 1.0, 2.0, 5.0, 5.0, 1.0, 1.0) == pytest.approx(2.0)
    assert node_cost(4.2, 0.0, 3.0, 5.0, 5.0, 1.0, 1.0) == 4.2
    assert node_cost(3.0, -2.0, 1.0, 6.5, 5.0, 0.5, 2.0) == pytest.approx(8.0)
    with pytest.raises(ValueError):
        node_cost(0.0, 1.0, -1.0, 0.0, 0.0, 1.0, 1.0)


def test_single_forced_step():
    sp = SearchSpace([0.0, 10.0], [0, 0], [20, 20], [7.0, 7.0], accels=(0.0,), w_v=1.0)
    res = search(sp, (5.0, 0.0))
    prof = res.best_profile
    assert len(prof) == 2
    assert prof[-1].t == pytest.approx(2.0)
    assert prof[-1].cost == pytest.approx(2.0)


def test_search_matches_brute_force_three_layers():
    sp = SearchSpace([0.0, 8.0, 16.0, 24.0], [0] * 4, [20] * 4, [6.0] * 4, accels=(-1.0, 0.0, 1.0),
                     r_v=1e-9, r_t=1e-9)
    res = search(sp, (5.0, 0.0))
    depth, cost = brute_force(sp, 5.0)
    assert res.depth == depth == 3
    assert res.best_profile[-1].cost == cost


def test_search_matches_brute_force_random():
    rng = np.random.default_rng(11)
    for _ in range(60):
        sp = random_space(rng)
        v0 = float(rng.uniform(sp.v_lower[0], sp.v_upper[0]))
        try:
            res = search(sp, (v0, 0.0))
        except EmptySearchError:
            assert brute_force(sp, v0)[0] == 0
            continue
        depth, cost = brute_force(sp, v0)
        assert res.depth == depth
        assert res.best_profile[-1].cost == cost


def test_truncation_keeps_cheaper_node():
    # both children land in cell (27, 9); the zero-acceleration one is cheaper
    sp = SearchSpace([0.0, 10.0], [0, 0], [20, 20], [5.5, 5.5], accels=(0.0, 0.02))
    res = search(sp, (5.5, 0.0))
    (only,) = res.layer_ids(1)
    assert res.v[only] == 5.5


def test_truncation_property_random():
    rng = np.random.default_rng(5)
    for _ in range(40):
        sp = random_space(rng, fine=False)
        try:
            res = search(sp, (float(sp.v_lower[0]), 0.0))
        except EmptySearchError:
            continue
        for l in range(res.depth + 1):
            ids = res.layer_ids(l)
            cells = {(math.floor(res.v[i] / sp.r_v), math.floor(res.t[i] / sp.r_t)) for i in ids}
            assert len(cells) == len(ids)


def test_profile_invariants():
    sp = SearchSpace(np.arange(0, 101, 10.0), np.zeros(11), np.full(11, 12.0), np.full(11, 10.0))
    res = search(sp, (3.0, 0.0))
    prof = res.best_profile
    assert [n.layer for n in prof] == list(range(len(prof)))
    assert np.all(np.diff([n.t for n in prof]) > 0)
    assert [n.s for n in prof] == list(sp.stations[:len(prof)])
    for n in prof:
        assert sp.v_lower[n.layer] - 1e-9 <= n.v <= sp.v_upper[n.layer] + 1e-9
        assert 0 <= n.t <= sp.t_h and n.cost >= 0


def test_empty_search_and_bad_space():
    sp = SearchSpace([0.0, 10.0], [0, 0], [20, 20], [5, 5], accels=(0.0,))
    with pytest.raises(EmptySearchError):
        search(sp, (0.0, 0.0))
    with pytest.raises(ValueError):
        search(sp, (25.0, 0.0))
    with pytest.raises(ValueError):
        SearchSpace([0.0, 12.0], [0, 0], [20, 20], [5, 5])
    with pytest.raises(ValueError):
        SearchSpace([0.0, 5.0, 5.0], [0] * 3, [20] * 3, [5] * 3)
