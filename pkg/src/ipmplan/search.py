"""Layered s-t graph search over sampled path stations."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .geometry import InteractionPoint, PathProfile
from .kernels import EXPANDED, search_kernel


class EmptySearchError(RuntimeError):
    """No node beyond the first layer is reachable."""


@dataclass(frozen=True)
class GraphNode:
    layer: int
    s: float
    v: float
    t: float
    cost: float
    parent: Optional["GraphNode"] = None
    # action that produced this node (nan for the root)
    accel: float = float("nan")
    id: int = -1

    def chain(self) -> list["GraphNode"]:
        out, node = [], self
        while node is not None:
            out.append(node)
            node = node.parent
        return out[::-1]


@dataclass(frozen=True, eq=False)
class SearchSpace:
    stations: np.ndarray
    v_lower: np.ndarray
    v_upper: np.ndarray
    v_ref: np.ndarray          # reference speed for the deviation cost
    t_h: float = 10.0
    c_v: float = 0.1
    accels: tuple = (-3.0, -1.5, -0.5, 0.0, 0.5, 1.0, 1.5)
    w_a: float = 0.2
    w_v: float = 1.0
    r_v: float = 0.2
    r_t: float = 0.2
    max_iter: int = 20000
    max_gap: float = 10.0

    def __post_init__(self):
        for name in ("stations", "v_lower", "v_upper", "v_ref"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "accels", tuple(float(a) for a in self.accels))
        k = len(self.stations)
        if k < 1 or any(len(getattr(self, n)) != k for n in ("v_lower", "v_upper", "v_ref")):
            raise ValueError("per-layer arrays must match the station count")
        gaps = np.diff(self.stations)
        if np.any(gaps <= 0):
            raise ValueError("stations must increase strictly")
        if np.any(gaps > self.max_gap + 1e-9):
            raise ValueError(f"station gap exceeds {self.max_gap} m")
        if not (self.r_v > 0 and self.r_t > 0 and self.t_h > 0):
            raise ValueError("resolutions and horizon must be positive")
        if not self.accels:
            raise ValueError("empty acceleration set")

    @property
    def k(self) -> int:
        return len(self.stations)


class SearchResult:
    """Expanded node list V (per layer) and the lowest-cost deepest profile.

    Nodes are kept in flat arrays; :class:`GraphNode` objects are built on
    demand.
    """

    def __init__(self, space: SearchSpace, raw):
        layer, v, t, cost, parent, state, n, popped, n_pop = raw
        self.space = space
        self.layer = np.asarray(layer[:n])
        self.v = np.asarray(v[:n])
        self.t = np.asarray(t[:n])
        self.cost = np.asarray(cost[:n])
        self.parent = np.asarray(parent[:n])
        self.expanded_ids = np.asarray(popped[:n_pop])
        self._cache: dict[int, GraphNode] = {}
        el = self.layer[self.expanded_ids]
        self.depth = int(el.max()) if n_pop else 0
        if self.depth == 0:
            raise EmptySearchError("no node beyond layer 0 is reachable")
        deep = self.expanded_ids[el == self.depth]
        # lowest cost, then earliest time, then insertion order
        order = np.lexsort((deep, self.t[deep], self.cost[deep]))
        self.best_id = int(deep[order[0]])

    def node(self, i: int) -> GraphNode:
        got = self._cache.get(i)
        if got is not None:
            return got
        chain = []
        j = i
        while j >= 0 and j not in self._cache:
            chain.append(j)
            j = int(self.parent[j])
        par = self._cache.get(j) if j >= 0 else None
        for j in reversed(chain):
            p = int(self.parent[j])
            acc = float("nan")
            if p >= 0:
                dv = self.v[j] - self.v[p]
                dt = self.t[j] - self.t[p]
                acc = float(dv / dt) if dt > 0 else 0.0
            par = GraphNode(int(self.layer[j]), float(self.space.stations[self.layer[j]]),
                            float(self.v[j]), float(self.t[j]), float(self.cost[j]), par, acc, j)
            self._cache[j] = par
        return self._cache[i]

    def layer_ids(self, l: int) -> np.ndarray:
        return self.expanded_ids[self.layer[self.expanded_ids] == l]

    @property
    def nodes(self) -> list[list[GraphNode]]:
        return [[self.node(int(i)) for i in self.layer_ids(l)] for l in range(self.depth + 1)]

    @property
    def best_profile(self) -> list[GraphNode]:
        return self.node(self.best_id).chain()

    def trace_lines(self) -> list[str]:
        """One line per expanded node: ``layer s v t J parent_id``."""
        out = []
        for i in self.expanded_ids:
            i = int(i)
            out.append(f"{self.layer[i]} {self.space.stations[self.layer[i]]:.6f} {self.v[i]:.6f} "
                       f"{self.t[i]:.6f} {self.cost[i]:.6f} {self.parent[i]}")
        return out


def search(space: SearchSpace, initial: tuple[float, float]) -> SearchResult:
    """Best-first expansion with per-cell local truncation."""
    v0, t0 = initial
    if not space.v_lower[0] - 1e-9 <= v0 <= space.v_upper[0] + 1e-9:
        raise ValueError(f"initial speed {v0} outside layer-0 bounds")
    raw = search_kernel(space.stations, space.v_lower, space.v_upper, space.v_ref,
                        np.asarray(space.accels, dtype=float), float(space.t_h), float(space.c_v),
                        float(space.w_a), float(space.w_v), float(space.r_v), float(space.r_t),
                        int(space.max_iter), float(v0), float(t0))
    return SearchResult(space, raw)


def expand(node: GraphNode, a: float, s_next: float, v_lower: float = 0.0, v_upper: float = math.inf,
           t_h: float = math.inf, c_v: float = 0.0) -> Optional[tuple[float, float]]:
    """Constant-acceleration step to ``s_next``; returns (v, t) or None if infeasible."""
    if not s_next > node.s:
        raise ValueError("s_next must lie ahead of the node")
    ds = s_next - node.s
    if abs(a) < 1e-6:
        if node.v <= 0.0:
            return None
        vc, tc = node.v, node.t + ds / node.v
    else:
        disc = node.v * node.v + 2.0 * a * ds
        if disc <= 0.0:
            return None
        vc = math.sqrt(disc)
        tc = node.t + (vc - node.v) / a
    if vc < c_v or vc < v_lower or vc > v_upper or tc > t_h:
        return None
    return vc, tc


def node_cost(parent_cost: float, a: float, dt: float, v: float, v_limit: float,
              w_a: float, w_v: float) -> float:
    if dt < 0:
        raise ValueError("dt must be non-negative")
    return parent_cost + w_a * (a * a * dt) + w_v * abs(v - v_limit)


def select_path_points(path: PathProfile, interaction_points: Sequence[InteractionPoint], max_gap: float,
                       s_from: float = 0.0, s_to: Optional[float] = None, extra: Sequence[float] = (),
                       jump: float = 0.5, dedup: float = 0.1) -> list[float]:
    """Stations for the graph: interaction/observation points, limit breakpoints, then gap fill."""
    if max_gap <= 0:
        raise ValueError("max_gap must be positive")
    s_to = path.length if s_to is None else min(s_to, path.length)
    must = [s_from, s_to]
    for ip in interaction_points:
        for s in (ip.ego_s, ip.observation_s):
            if s is not None and s_from < s < s_to:
                must.append(float(s))
    must.extend(float(s) for s in extra if s_from < s < s_to)
    soft = []
    lim = path.speed_limit
    for i in np.flatnonzero(np.abs(np.diff(lim)) > jump):
        # breakpoint sits on the slower side of the jump
        j = i + 1 if lim[i + 1] < lim[i] else i
        s = float(path.s[j])
        if s_from < s < s_to:
            soft.append(s)
    # hard stations are kept verbatim; breakpoints too close to one are dropped
    pts = sorted(must)
    merged = []
    for s in pts:
        if merged and s - merged[-1] < dedup:
            continue
        merged.append(s)
    for s in soft:
        if min(abs(s - m) for m in merged) >= dedup:
            merged.append(s)
    merged.sort()
    out = [merged[0]]
    for s in merged[1:]:
        start = out[-1]
        gap = s - start
        n = int(math.ceil(gap / max_gap - 1e-9))
        out.extend(start + gap * i / n for i in range(1, n))
        out.append(s)
    return out
