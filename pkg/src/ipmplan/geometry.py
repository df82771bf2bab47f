"""Paths, interaction points and path-side speed limits."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .kernels import project_points

RESAMPLE_STEP = 0.5

POINT_OVERLAP = "point-overlap"
LINE_OVERLAP = "line-overlap-entry"
# resampling slack when comparing a run with the length of a straight crossing (m)
CROSSING_SLACK = 2.0 * RESAMPLE_STEP
# shallower contacts (including tangent joins) are treated as merges
MIN_CROSSING_ANGLE = math.radians(10.0)


def wrap_angle(a):
    """Wrap to [-pi, pi)."""
    return (np.asarray(a) + np.pi) % (2.0 * np.pi) - np.pi


def angle_diff(a: float, b: float) -> float:
    """Absolute heading difference in [0, pi]."""
    d = abs(float(wrap_angle(a - b)))
    return min(d, math.pi)


def three_point_curvature(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Signed curvature from the circle through each point and its neighbours.

    End points copy the value of their only interior neighbour.
    """
    n = len(x)
    kappa = np.zeros(n)
    if n < 3:
        return kappa
    x0, y0 = x[:-2], y[:-2]
    x1, y1 = x[1:-1], y[1:-1]
    x2, y2 = x[2:], y[2:]
    cross = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
    a = np.hypot(x1 - x0, y1 - y0)
    b = np.hypot(x2 - x1, y2 - y1)
    c = np.hypot(x2 - x0, y2 - y0)
    den = a * b * c
    with np.errstate(invalid="ignore", divide="ignore"):
        k = np.where(den > 1e-12, 2.0 * cross / den, 0.0)
    kappa[1:-1] = k
    kappa[0] = kappa[1]
    kappa[-1] = kappa[-2]
    return kappa


@dataclass(frozen=True, eq=False)
class PathProfile:
    """Arc-length parameterised polyline with per-point speed limit."""

    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    yaw: np.ndarray
    kappa: np.ndarray
    speed_limit: np.ndarray

    def __post_init__(self):
        for name in ("x", "y", "s", "yaw", "kappa", "speed_limit"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n = len(self.s)
        if n == 0:
            raise ValueError("empty path")
        if any(len(getattr(self, k)) != n for k in ("x", "y", "yaw", "kappa", "speed_limit")):
            raise ValueError("path arrays differ in length")
        if self.s[0] != 0.0 or np.any(np.diff(self.s) <= 0.0):
            raise ValueError("arc length must start at 0 and increase strictly")
        if np.any(self.speed_limit < 0.0):
            raise ValueError("negative speed limit")

    @classmethod
    def from_waypoints(cls, waypoints: Sequence[Sequence[float]], speed_limit: float = 15.0,
                       step: float = RESAMPLE_STEP) -> "PathProfile":
        """Resample a waypoint polyline at ``step`` metres."""
        pts = np.asarray(waypoints, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise ValueError("need at least two (x, y) waypoints")
        seg = np.hypot(*np.diff(pts, axis=0).T)
        keep = np.concatenate([[True], seg > 1e-9])
        pts = pts[keep]
        seg = np.hypot(*np.diff(pts, axis=0).T)
        s_raw = np.concatenate([[0.0], np.cumsum(seg)])
        total = s_raw[-1]
        n = max(int(math.ceil(total / step - 1e-9)), 1)
        s = np.linspace(0.0, total, n + 1)
        x = np.interp(s, s_raw, pts[:, 0])
        y = np.interp(s, s_raw, pts[:, 1])
        # tangent of the raw segment each sample lies on; corners take the outgoing one
        idx = np.clip(np.searchsorted(s_raw, s, side="right") - 1, 0, len(seg) - 1)
        d = np.diff(pts, axis=0)
        yaw = np.unwrap(np.arctan2(d[idx, 1], d[idx, 0]))
        kappa = three_point_curvature(x, y)
        limit = np.full(len(s), float(speed_limit))
        return cls(x, y, s, yaw, kappa, limit)

    @property
    def length(self) -> float:
        return float(self.s[-1])

    @property
    def xy(self) -> np.ndarray:
        return np.column_stack([self.x, self.y])

    def pose_at(self, s: float) -> tuple[float, float, float]:
        """Interpolated (x, y, yaw); clamps to the path ends."""
        s = min(max(s, 0.0), self.length)
        i = int(np.searchsorted(self.s, s, side="right")) - 1
        i = min(max(i, 0), len(self.s) - 2) if len(self.s) > 1 else 0
        if len(self.s) == 1:
            return float(self.x[0]), float(self.y[0]), float(self.yaw[0])
        u = (s - self.s[i]) / (self.s[i + 1] - self.s[i])
        x = self.x[i] + u * (self.x[i + 1] - self.x[i])
        y = self.y[i] + u * (self.y[i + 1] - self.y[i])
        return float(x), float(y), float(self.yaw[i] if u < 0.5 else self.yaw[i + 1])

    def yaw_at(self, s: float) -> float:
        return self.pose_at(s)[2]

    def limit_between(self, s0: float, s1: float) -> float:
        """Lowest speed limit on [s0, s1] including the interpolated ends."""
        lo, hi = min(s0, s1), max(s0, s1)
        mask = (self.s >= lo) & (self.s <= hi)
        vals = [float(np.interp(lo, self.s, self.speed_limit)),
                float(np.interp(hi, self.s, self.speed_limit))]
        if mask.any():
            vals.append(float(self.speed_limit[mask].min()))
        return min(vals)

    def with_speed_limit(self, limit: np.ndarray) -> "PathProfile":
        return PathProfile(self.x, self.y, self.s, self.yaw, self.kappa, limit)


@dataclass(frozen=True)
class InteractionPoint:
    """Shared-space point between the ego path and one agent path.

    ``run_start_s``/``run_end_s`` delimit the ego stations whose distance to
    the agent path is below the overlap radius; the stop line for yielding
    is derived from ``run_start_s``.
    """

    id: int
    ego_s: float
    agent_id: str
    agent_s: float
    position: tuple[float, float]
    delta_theta: float
    kind: str
    observation_s: Optional[float] = None
    run_start_s: float = field(default=float("nan"))
    run_end_s: float = field(default=float("nan"))

    def __post_init__(self):
        if not 0.0 <= self.delta_theta <= math.pi:
            raise ValueError("delta_theta outside [0, pi]")
        if self.observation_s is not None and not self.observation_s < self.ego_s:
            raise ValueError("observation point must precede the interaction point")
        if math.isnan(self.run_start_s):
            object.__setattr__(self, "run_start_s", self.ego_s)
        if math.isnan(self.run_end_s):
            object.__setattr__(self, "run_end_s", self.ego_s)

    @property
    def is_line(self) -> bool:
        return self.kind == LINE_OVERLAP


def default_overlap_radius(ego_width: float = 2.0, agent_width: float = 2.0) -> float:
    return 0.5 * (ego_width + agent_width) + 0.5


def _segment_intersection(p0, p1, q0, q1):
    """Return (u, w) with p0 + u (p1 - p0) == q0 + w (q1 - q0), or None."""
    r = p1 - p0
    d = q1 - q0
    den = r[0] * d[1] - r[1] * d[0]
    if abs(den) < 1e-12:
        return None
    qp = q0 - p0
    u = (qp[0] * d[1] - qp[1] * d[0]) / den
    w = (qp[0] * r[1] - qp[1] * r[0]) / den
    if -1e-9 <= u <= 1 + 1e-9 and -1e-9 <= w <= 1 + 1e-9:
        return u, w
    return None


def _crossing_near(ego: PathProfile, agent: PathProfile, i: int, agent_s: float):
    """Exact polyline crossing around ego sample ``i``, if the paths cross there."""
    exy, axy = ego.xy, agent.xy
    j = int(np.searchsorted(agent.s, agent_s, side="right")) - 1
    best = None
    for ei in range(max(i - 2, 0), min(i + 2, len(exy) - 1)):
        for aj in range(max(j - 2, 0), min(j + 3, len(axy) - 1)):
            hit = _segment_intersection(exy[ei], exy[ei + 1], axy[aj], axy[aj + 1])
            if hit is None:
                continue
            u, w = hit
            es = ego.s[ei] + u * (ego.s[ei + 1] - ego.s[ei])
            as_ = agent.s[aj] + w * (agent.s[aj + 1] - agent.s[aj])
            pos = exy[ei] + u * (exy[ei + 1] - exy[ei])
            cand = (abs(es - ego.s[i]), float(es), float(as_), (float(pos[0]), float(pos[1])))
            if best is None or cand[0] < best[0]:
                best = cand
    return None if best is None else best[1:]


def find_interaction_points(ego: PathProfile, agent: PathProfile, overlap_radius: float,
                            agent_id: str = "agent", first_id: int = 0) -> list[InteractionPoint]:
    """Collapse each run of ego samples within ``overlap_radius`` of the agent path.

    A run where the polylines cross at more than ``MIN_CROSSING_ANGLE`` is a
    point overlap at the crossing unless it is longer than a straight crossing
    at that angle would be; without a
    crossing, runs longer than twice the radius count as line overlaps. Line
    overlaps are reported at the first station of the run.
    """
    if overlap_radius <= 0:
        raise ValueError("overlap_radius must be positive")
    dist, proj_s = project_points(ego.xy, agent.xy, agent.s)
    close = dist < overlap_radius
    points: list[InteractionPoint] = []
    if not close.any():
        return points
    edges = np.diff(np.concatenate([[0], close.astype(np.int8), [0]]))
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1) - 1
    for a, b in zip(starts, stops):
        run_len = ego.s[b] - ego.s[a]
        i = int(a + np.argmin(dist[a:b + 1]))
        hit = _crossing_near(ego, agent, i, float(proj_s[i]))
        if hit is not None:
            # a straight crossing at angle th stays within the radius for 2 r / sin(th)
            sin_th = math.sin(angle_diff(ego.yaw_at(hit[0]), agent.yaw_at(hit[1])))
            is_line = (sin_th < math.sin(MIN_CROSSING_ANGLE)
                       or run_len > 2.0 * overlap_radius / sin_th + CROSSING_SLACK)
        else:
            is_line = run_len > 2.0 * overlap_radius
        if is_line:
            i = int(a)
            kind = LINE_OVERLAP
            ego_s, agent_s = float(ego.s[i]), float(proj_s[i])
            pos = (float(ego.x[i]), float(ego.y[i]))
        else:
            kind = POINT_OVERLAP
            if hit is not None:
                ego_s, agent_s, pos = hit
            else:
                ego_s, agent_s = float(ego.s[i]), float(proj_s[i])
                ax, ay, _ = agent.pose_at(agent_s)
                pos = (0.5 * (float(ego.x[i]) + ax), 0.5 * (float(ego.y[i]) + ay))
        dtheta = angle_diff(ego.yaw_at(ego_s), agent.yaw_at(agent_s))
        points.append(InteractionPoint(
            id=first_id + len(points), ego_s=ego_s, agent_id=agent_id, agent_s=agent_s,
            position=pos, delta_theta=dtheta, kind=kind,
            run_start_s=float(ego.s[a]), run_end_s=float(ego.s[b])))
    return points


def curvature_speed_limit(path: PathProfile, a_lat_max: float) -> np.ndarray:
    """Per-point bound ``min(limit, sqrt(a_lat_max / |kappa|))``."""
    if a_lat_max <= 0:
        raise ValueError("a_lat_max must be positive")
    k = np.abs(path.kappa)
    with np.errstate(divide="ignore"):
        bound = np.where(k > 0.0, np.sqrt(a_lat_max / np.where(k > 0.0, k, 1.0)), np.inf)
    return np.minimum(path.speed_limit, bound)


def observation_speed_limit(ip: InteractionPoint, dt_plus: float, ego_s_now: float,
                            observation_distance: Optional[float] = None) -> Optional[float]:
    """Worst-case speed bound before the observation point of an occluded area.

    The distance between observation point and interaction point defaults to
    their separation along the ego path. Returns None once the ego has
    passed the observation point.
    """
    if dt_plus <= 0:
        raise ValueError("dt_plus must be positive")
    if ip.observation_s is None:
        raise ValueError("interaction point has no observation point")
    if ego_s_now > ip.observation_s:
        return None
    dist = ip.ego_s - ip.observation_s if observation_distance is None else observation_distance
    return dist / dt_plus


def observation_speed_profile(ip: InteractionPoint, dt_plus: float, stations: np.ndarray,
                              ego_s_now: float) -> np.ndarray:
    """Station-wise bound: ``d_e(s) / dt_plus`` for s up to the observation point, inf after.

    At the observation point this equals :func:`observation_speed_limit`;
    farther away the remaining distance is larger and so is the bound.
    """
    stations = np.asarray(stations, dtype=float)
    out = np.full(stations.shape, np.inf)
    vbar = observation_speed_limit(ip, dt_plus, ego_s_now)
    if vbar is None:
        return out
    before = stations <= ip.observation_s + 1e-9
    out[before] = np.maximum(ip.ego_s - stations[before], ip.ego_s - ip.observation_s) / dt_plus
    return out
