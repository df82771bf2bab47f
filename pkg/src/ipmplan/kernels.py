"""Hot numeric kernels.

Every kernel exists twice: a numba version (``*_nb``) and a plain
numpy/Python version (``*_py``). The public name is bound to one of them
by :mod:`ipmplan._accel`. The two versions perform the same floating point
operations in the same order so their results are bit-identical.
"""
import heapq
import math

import numpy as np

from ._accel import njit, pick

# node states inside the search arrays
OPEN = 0
EXPANDED = 1
DROPPED = 2


# ---------------------------------------------------------------------------
# point to polyline projection
# ---------------------------------------------------------------------------

@njit(cache=True)
def _project_points_nb(points, poly, poly_s):
    n = points.shape[0]
    m = poly.shape[0]
    dist = np.empty(n)
    proj_s = np.empty(n)
    for i in range(n):
        px = points[i, 0]
        py = points[i, 1]
        best = np.inf
        best_s = 0.0
        if m == 1:
            dx = px - poly[0, 0]
            dy = py - poly[0, 1]
            best = math.sqrt(dx * dx + dy * dy)
            best_s = poly_s[0]
        for j in range(m - 1):
            ax = poly[j, 0]
            ay = poly[j, 1]
            ex = poly[j + 1, 0] - ax
            ey = poly[j + 1, 1] - ay
            den = ex * ex + ey * ey
            u = 0.0
            if den > 0.0:
                u = ((px - ax) * ex + (py - ay) * ey) / den
                if u < 0.0:
                    u = 0.0
                elif u > 1.0:
                    u = 1.0
            dx = px - (ax + u * ex)
            dy = py - (ay + u * ey)
            d = math.sqrt(dx * dx + dy * dy)
            if d < best:
                best = d
                best_s = poly_s[j] + u * (poly_s[j + 1] - poly_s[j])
        dist[i] = best
        proj_s[i] = best_s
    return dist, proj_s


def _project_points_py(points, poly, poly_s):
    points = np.asarray(points, dtype=float)
    poly = np.asarray(poly, dtype=float)
    poly_s = np.asarray(poly_s, dtype=float)
    if poly.shape[0] == 1:
        d = np.hypot(points[:, 0] - poly[0, 0], points[:, 1] - poly[0, 1])
        return d, np.full(points.shape[0], poly_s[0])
    a = poly[:-1]
    e = poly[1:] - a
    den = (e * e).sum(axis=1)
    rel = points[:, None, :] - a[None, :, :]
    with np.errstate(invalid="ignore", divide="ignore"):
        u = np.where(den > 0.0, (rel * e[None]).sum(axis=2) / den, 0.0)
    u = np.clip(u, 0.0, 1.0)
    foot = a[None] + u[..., None] * e[None]
    diff = points[:, None, :] - foot
    d = np.sqrt(diff[..., 0] ** 2 + diff[..., 1] ** 2)
    # first minimum wins, same as the strict '<' scan
    j = np.argmin(d, axis=1)
    rows = np.arange(points.shape[0])
    s = poly_s[j] + u[rows, j] * (poly_s[j + 1] - poly_s[j])
    return d[rows, j], s


project_points = pick(_project_points_nb, _project_points_py)


# ---------------------------------------------------------------------------
# oriented rectangle overlap (separating axis test)
# ---------------------------------------------------------------------------

@njit(cache=True)
def _rect_overlap_nb(x1, y1, yaw1, l1, w1, x2, y2, yaw2, l2, w2):
    c1 = math.cos(yaw1)
    s1 = math.sin(yaw1)
    c2 = math.cos(yaw2)
    s2 = math.sin(yaw2)
    dx = x2 - x1
    dy = y2 - y1
    axes = ((c1, s1), (-s1, c1), (c2, s2), (-s2, c2))
    for k in range(4):
        ax, ay = axes[k]
        r1 = 0.5 * l1 * abs(c1 * ax + s1 * ay) + 0.5 * w1 * abs(-s1 * ax + c1 * ay)
        r2 = 0.5 * l2 * abs(c2 * ax + s2 * ay) + 0.5 * w2 * abs(-s2 * ax + c2 * ay)
        if abs(dx * ax + dy * ay) >= r1 + r2:
            return False
    return True


def _rect_overlap_py(x1, y1, yaw1, l1, w1, x2, y2, yaw2, l2, w2):
    c1, s1 = math.cos(yaw1), math.sin(yaw1)
    c2, s2 = math.cos(yaw2), math.sin(yaw2)
    dx, dy = x2 - x1, y2 - y1
    for ax, ay in ((c1, s1), (-s1, c1), (c2, s2), (-s2, c2)):
        r1 = 0.5 * l1 * abs(c1 * ax + s1 * ay) + 0.5 * w1 * abs(-s1 * ax + c1 * ay)
        r2 = 0.5 * l2 * abs(c2 * ax + s2 * ay) + 0.5 * w2 * abs(-s2 * ax + c2 * ay)
        if abs(dx * ax + dy * ay) >= r1 + r2:
            return False
    return True


rect_overlap = pick(_rect_overlap_nb, _rect_overlap_py)


# ---------------------------------------------------------------------------
# s-t graph search
# ---------------------------------------------------------------------------
#
# Returns (layer, v, t, cost, parent, state, n_nodes, popped, n_popped).
# ``popped`` lists node ids in the order they were taken from the open list;
# these form the node list V.  Only nodes that won their truncation cell are
# ever pushed, and a pushed node that later loses its cell is marked DROPPED
# and skipped when it surfaces.


@njit(cache=True)
def _heap_less(cost, t, a, b):
    if cost[a] != cost[b]:
        return cost[a] < cost[b]
    if t[a] != t[b]:
        return t[a] < t[b]
    return a < b


@njit(cache=True)
def _heap_push(heap, size, node, cost, t):
    i = size
    heap[i] = node
    while i > 0:
        p = (i - 1) >> 1
        if _heap_less(cost, t, heap[i], heap[p]):
            tmp = heap[p]
            heap[p] = heap[i]
            heap[i] = tmp
            i = p
        else:
            break
    return size + 1


@njit(cache=True)
def _heap_pop(heap, size, cost, t):
    top = heap[0]
    size -= 1
    heap[0] = heap[size]
    i = 0
    while True:
        lft = 2 * i + 1
        rgt = lft + 1
        m = i
        if lft < size and _heap_less(cost, t, heap[lft], heap[m]):
            m = lft
        if rgt < size and _heap_less(cost, t, heap[rgt], heap[m]):
            m = rgt
        if m == i:
            break
        tmp = heap[m]
        heap[m] = heap[i]
        heap[i] = tmp
        i = m
    return top, size


@njit(cache=True)
def _cell_slot(keys, key_l, key_v, key_t, mask):
    h = (key_l * 1000003 + key_v * 998244353 + key_t * 2654435761) & mask
    while True:
        if keys[h, 0] == -1:
            return h
        if keys[h, 0] == key_l and keys[h, 1] == key_v and keys[h, 2] == key_t:
            return h
        h = (h + 1) & mask


@njit(cache=True)
def _search_nb(stations, v_lo, v_hi, v_ref, accels, t_h, c_v, w_a, w_v,
               r_v, r_t, max_iter, v0, t0):
    k = stations.shape[0]
    n_acc = accels.shape[0]
    cap = max_iter * n_acc + 1
    layer = np.empty(cap, np.int64)
    vel = np.empty(cap)
    tim = np.empty(cap)
    cost = np.empty(cap)
    parent = np.empty(cap, np.int64)
    state = np.empty(cap, np.int64)
    heap = np.empty(cap, np.int64)
    popped = np.empty(max_iter, np.int64)

    size = 1
    while size < 2 * cap:
        size <<= 1
    mask = size - 1
    keys = np.full((size, 3), -1, np.int64)
    occupant = np.full(size, -1, np.int64)

    layer[0] = 0
    vel[0] = v0
    tim[0] = t0
    cost[0] = 0.0
    parent[0] = -1
    state[0] = OPEN
    n = 1
    slot = _cell_slot(keys, 0, int(math.floor(v0 / r_v)), int(math.floor(t0 / r_t)), mask)
    keys[slot, 0] = 0
    keys[slot, 1] = int(math.floor(v0 / r_v))
    keys[slot, 2] = int(math.floor(t0 / r_t))
    occupant[slot] = 0
    hsize = _heap_push(heap, 0, 0, cost, tim)
    n_pop = 0

    while n_pop < max_iter and hsize > 0:
        q, hsize = _heap_pop(heap, hsize, cost, tim)
        if state[q] == DROPPED:
            continue
        state[q] = EXPANDED
        popped[n_pop] = q
        n_pop += 1
        lq = layer[q]
        if lq >= k - 1 or tim[q] > t_h:
            continue
        ds = stations[lq + 1] - stations[lq]
        vq = vel[q]
        for ia in range(n_acc):
            a = accels[ia]
            if abs(a) < 1e-6:
                if vq <= 0.0:
                    continue
                vc = vq
                tc = tim[q] + ds / vq
            else:
                disc = vq * vq + 2.0 * a * ds
                if disc <= 0.0:
                    continue
                vc = math.sqrt(disc)
                tc = tim[q] + (vc - vq) / a
            if vc < c_v or vc < v_lo[lq + 1] or vc > v_hi[lq + 1] or tc > t_h:
                continue
            dt = tc - tim[q]
            jc = cost[q] + w_a * (a * a * dt) + w_v * abs(vc - v_ref[lq + 1])
            kv = int(math.floor(vc / r_v))
            kt = int(math.floor(tc / r_t))
            slot = _cell_slot(keys, lq + 1, kv, kt, mask)
            occ = occupant[slot]
            if occ >= 0 and not jc < cost[occ]:
                continue
            layer[n] = lq + 1
            vel[n] = vc
            tim[n] = tc
            cost[n] = jc
            parent[n] = q
            state[n] = OPEN
            if occ >= 0:
                if state[occ] == OPEN:
                    state[occ] = DROPPED
            else:
                keys[slot, 0] = lq + 1
                keys[slot, 1] = kv
                keys[slot, 2] = kt
            occupant[slot] = n
            hsize = _heap_push(heap, hsize, n, cost, tim)
            n += 1
    return layer, vel, tim, cost, parent, state, n, popped, n_pop


def _search_py(stations, v_lo, v_hi, v_ref, accels, t_h, c_v, w_a, w_v,
               r_v, r_t, max_iter, v0, t0):
    stations = [float(x) for x in stations]
    v_lo = [float(x) for x in v_lo]
    v_hi = [float(x) for x in v_hi]
    v_ref = [float(x) for x in v_ref]
    accels = [float(x) for x in accels]
    k = len(stations)
    layer, vel, tim, cost, parent, state = [0], [float(v0)], [float(t0)], [0.0], [-1], [OPEN]
    cells = {(0, math.floor(v0 / r_v), math.floor(t0 / r_t)): 0}
    heap = [(0.0, float(t0), 0)]
    popped = []
    while len(popped) < max_iter and heap:
        _, _, q = heapq.heappop(heap)
        if state[q] == DROPPED:
            continue
        state[q] = EXPANDED
        popped.append(q)
        lq = layer[q]
        if lq >= k - 1 or tim[q] > t_h:
            continue
        ds = stations[lq + 1] - stations[lq]
        vq = vel[q]
        for a in accels:
            if abs(a) < 1e-6:
                if vq <= 0.0:
                    continue
                vc = vq
                tc = tim[q] + ds / vq
            else:
                disc = vq * vq + 2.0 * a * ds
                if disc <= 0.0:
                    continue
                vc = math.sqrt(disc)
                tc = tim[q] + (vc - vq) / a
            if vc < c_v or vc < v_lo[lq + 1] or vc > v_hi[lq + 1] or tc > t_h:
                continue
            dt = tc - tim[q]
            jc = cost[q] + w_a * (a * a * dt) + w_v * abs(vc - v_ref[lq + 1])
            key = (lq + 1, math.floor(vc / r_v), math.floor(tc / r_t))
            occ = cells.get(key, -1)
            if occ >= 0 and not jc < cost[occ]:
                continue
            n = len(layer)
            layer.append(lq + 1)
            vel.append(vc)
            tim.append(tc)
            cost.append(jc)
            parent.append(q)
            state.append(OPEN)
            if occ >= 0 and state[occ] == OPEN:
                state[occ] = DROPPED
            cells[key] = n
            heapq.heappush(heap, (jc, tc, n))
    n = len(layer)
    return (np.asarray(layer, np.int64), np.asarray(vel), np.asarray(tim),
            np.asarray(cost), np.asarray(parent, np.int64),
            np.asarray(state, np.int64), n, np.asarray(popped, np.int64), len(popped))


search_kernel = pick(_search_nb, _search_py)
