"""Scenario-adaptive local planning from viewpoint candidates.

A sliding window of per-frame obstacle proportions detects corner-like
surroundings; together with the distance to the highest-priority frontier
it selects the viewpoint filtering criterion (steering rate near targets
and in corners, coverage count otherwise).  Filtered viewpoints form a
layered directed acyclic graph searched with Dijkstra, and the chosen
viewpoint gets a kinematically bounded trajectory: shortcut-smoothed
geometric path, trapezoidal speed profile, linear yaw ramp.
"""

from __future__ import annotations

import enum
import heapq
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import Disconnected, EmptyFrame, NoViewpoints, Unreachable
from .frontiers import ViewpointCandidate
from .voxel import FREE, LayerView, SensorFrame, VoxelMap


class Scenario(enum.Enum):
    NEAR_TARGET = "near_target"
    CORNER = "corner"
    DEFAULT = "default"


@dataclass
class UavState:
    position: np.ndarray
    yaw: float
    speed: float = 0.0


@dataclass
class MotionLimits:
    v_max: float = 2.0
    yaw_rate_max: float = 1.0
    accel_max: float = 2.0
    safety_margin: float = 0.3


@dataclass
class LocalParams:
    d_near_threshold: float = 3.0
    corner_ratio_threshold: float = 0.5
    window_capacity: int = 20
    filter_keep: int = 5
    dag_depth: int = 3
    min_cost_dist: float = 0.05


def wrap_angle(a: float) -> float:
    """Wrap to [-pi, pi]."""
    return math.atan2(math.sin(a), math.cos(a))


class ObstacleWindow:
    """Bounded queue of per-frame obstacle proportions."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.values: deque[float] = deque(maxlen=capacity)

    @property
    def mean(self) -> float:
        if not self.values:
            return 0.0
        return sum(self.values) / len(self.values)


def frame_obstacle_ratio(frame: SensorFrame) -> float:
    """Fraction of returns that hit inside the sensing range."""
    n = frame.depths.shape[0]
    if n == 0:
        raise EmptyFrame("frame has no returns")
    return float(np.count_nonzero(frame.depths < frame.max_range) / n)


def update_window(w: ObstacleWindow, ratio: float) -> float:
    """Append one ratio (evicting the oldest at capacity); returns the mean."""
    w.values.append(float(ratio))
    return w.mean


def classify_scenario(target_distance: float, window_mean: float,
                      params: LocalParams) -> Scenario:
    """Near-target beats corner beats default."""
    if target_distance < params.d_near_threshold:
        return Scenario.NEAR_TARGET
    if window_mean > params.corner_ratio_threshold:
        return Scenario.CORNER
    return Scenario.DEFAULT


def evaluate_candidates(cands: list[ViewpointCandidate], uav: UavState,
                        dist_fn, params: LocalParams) -> list[ViewpointCandidate]:
    """Fill per-candidate costs relative to the current state.

    cost_dist is the path distance from the pose (clamped below by
    min_cost_dist when computing the steering rate so the ratio stays
    finite), cost_yaw the wrapped absolute yaw change.
    """
    out = []
    for c in cands:
        cost_dist = float(dist_fn(uav.position, c.position))
        cost_yaw = abs(wrap_angle(c.yaw - uav.yaw))
        rate = cost_yaw / max(cost_dist, params.min_cost_dist)
        out.append(ViewpointCandidate(
            position=c.position, yaw=c.yaw, n_view=c.n_view,
            cost_dist=cost_dist, cost_yaw=cost_yaw, steering_rate=rate))
    return out


def filter_viewpoints(cands: list[ViewpointCandidate], scenario: Scenario,
                      k: int) -> list[ViewpointCandidate]:
    """Top-k by the scenario's criterion; stable ties by candidate index."""
    if not cands:
        raise ValueError("no candidates to filter")
    if scenario in (Scenario.NEAR_TARGET, Scenario.CORNER):
        keyed = sorted(enumerate(cands), key=lambda t: (-t[1].steering_rate, t[0]))
    else:
        keyed = sorted(enumerate(cands), key=lambda t: (-t[1].n_view, t[0]))
    return [c for _, c in keyed[:k]]


@dataclass
class LocalGraph:
    """Layered DAG: node 0 is the pose, layer t the t-th frontier's viewpoints."""

    poses: list[tuple[np.ndarray, float]]  # (position, yaw) per node
    layers: list[list[int]]
    edges: dict[int, list[tuple[int, float]]] = field(default_factory=dict)
    viewpoint_of: dict[int, ViewpointCandidate] = field(default_factory=dict)

    @property
    def node_count(self) -> int:
        return len(self.poses)


def build_viewpoint_dag(uav: UavState, global_order: list[int],
                        filtered: dict[int, list[ViewpointCandidate]],
                        limits: MotionLimits, params: LocalParams,
                        dist_many) -> LocalGraph:
    """Connect consecutive layers with time-cost edges.

    Edge weight = path_distance / v_max + wrapped yaw change / yaw_rate_max.
    dist_many(src_position, [dst_positions]) returns path distances for a
    whole fan of edges at once.  Layers past a frontier with no filtered
    viewpoints are dropped; if the first frontier has none the graph
    cannot start (NoViewpoints).
    """
    if not global_order:
        raise ValueError("empty global order")
    if not filtered.get(global_order[0]):
        raise NoViewpoints(f"frontier {global_order[0]} has no viewpoints")

    g = LocalGraph(poses=[(np.asarray(uav.position, dtype=np.float64), uav.yaw)],
                   layers=[[0]])
    for fid in global_order[:params.dag_depth]:
        vps = filtered.get(fid)
        if not vps:
            break
        layer = []
        for vp in vps:
            idx = g.node_count
            g.poses.append((np.asarray(vp.position, dtype=np.float64), vp.yaw))
            g.viewpoint_of[idx] = vp
            layer.append(idx)
        g.layers.append(layer)

    for prev, cur in zip(g.layers, g.layers[1:]):
        dests = [g.poses[b][0] for b in cur]
        for a in prev:
            pa, ya = g.poses[a]
            dists = dist_many(pa, dests)
            out = []
            for b, d in zip(cur, dists):
                yb = g.poses[b][1]
                w = (float(d) / limits.v_max
                     + abs(wrap_angle(yb - ya)) / limits.yaw_rate_max)
                out.append((b, w))
            g.edges[a] = out
    return g


def shortest_local_path(g: LocalGraph) -> tuple[list[int], ViewpointCandidate]:
    """Dijkstra from the pose to the deepest layer.

    Returns (node path, the layer-1 viewpoint on it).
    """
    if len(g.layers) < 2:
        raise Disconnected("graph has no viewpoint layers")
    dist = {0: 0.0}
    prev: dict[int, int] = {}
    heap = [(0.0, 0)]
    settled = set()
    while heap:
        d, u = heapq.heappop(heap)
        if u in settled:
            continue
        settled.add(u)
        for v, w in g.edges.get(u, []):
            nd = d + w
            if nd < dist.get(v, math.inf):
                dist[v] = nd
                prev[v] = u
                heapq.heappush(heap, (nd, v))
    last = g.layers[-1]
    best = None
    for node in last:
        if node in dist and (best is None or dist[node] < dist[best]):
            best = node
    if best is None:
        raise Disconnected("no full-depth path through the viewpoint graph")
    path = [best]
    while path[-1] != 0:
        path.append(prev[path[-1]])
    path.reverse()
    return path, g.viewpoint_of[path[1]]


# -- trajectory generation ----------------------------------------------


@dataclass
class Trajectory:
    """Densely sampled feasible motion: t, position, yaw (unwrapped), speed."""

    times: np.ndarray
    positions: np.ndarray
    yaws: np.ndarray
    speeds: np.ndarray
    duration: float

    def sample(self, t: float) -> tuple[np.ndarray, float, float]:
        t = min(max(t, 0.0), self.duration)
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        i = max(0, min(i, len(self.times) - 2)) if len(self.times) > 1 else 0
        if len(self.times) == 1:
            return self.positions[0].copy(), float(self.yaws[0]), 0.0
        t0, t1 = self.times[i], self.times[i + 1]
        a = 0.0 if t1 == t0 else (t - t0) / (t1 - t0)
        pos = (1 - a) * self.positions[i] + a * self.positions[i + 1]
        yaw = (1 - a) * self.yaws[i] + a * self.yaws[i + 1]
        spd = (1 - a) * self.speeds[i] + a * self.speeds[i + 1]
        return pos, float(yaw), float(spd)

    @property
    def end_position(self) -> np.ndarray:
        return self.positions[-1].copy()

    @property
    def end_yaw(self) -> float:
        return float(self.yaws[-1])


def _trapezoid_times(length: float, v_max: float, a_max: float):
    """(duration, ramp time, peak speed) for a rest-to-rest profile."""
    if length <= 0.0:
        return 0.0, 0.0, 0.0
    if length > v_max * v_max / a_max:
        t_ramp = v_max / a_max
        return 2.0 * t_ramp + (length - v_max * v_max / a_max) / v_max, t_ramp, v_max
    t_ramp = math.sqrt(length / a_max)
    return 2.0 * t_ramp, t_ramp, a_max * t_ramp


def _trapezoid_state(t: float, t_ramp: float, peak: float, a_max: float,
                     duration: float, length: float):
    """(arc position, speed) at time t along the trapezoid."""
    if duration <= 0.0:
        return 0.0, 0.0
    t = min(max(t, 0.0), duration)
    if t < t_ramp:
        return 0.5 * a_max * t * t, a_max * t
    if t > duration - t_ramp:
        dt = duration - t
        return length - 0.5 * a_max * dt * dt, a_max * dt
    return 0.5 * a_max * t_ramp * t_ramp + peak * (t - t_ramp), peak


def find_grid_path(vmap: VoxelMap, view: LayerView, start, goal,
                   margin: float) -> list[np.ndarray] | None:
    """A* voxel path (as world centres) keeping pessimistic clearance.

    The start voxel is exempt from the margin (the vehicle is already
    there); every other traversed voxel must be Free with clearance at or
    above margin.  None when unreachable.
    """
    a = vmap.world_to_voxel(start)
    b = vmap.world_to_voxel(goal)
    if not (vmap.in_bounds(a) and vmap.in_bounds(b)):
        return None
    if np.array_equal(a, b):
        return [vmap.voxel_center(a)]
    targets = np.ascontiguousarray(b.reshape(1, 3))
    dists, parents = _kernels.grid_search(
        vmap.states, vmap.clearance_pess, float(margin), view.k0, view.k1,
        int(a[0]), int(a[1]), int(a[2]), targets, vmap.resolution, 1, 1)
    if not math.isfinite(dists[0]):
        return None
    ny, nz = int(vmap.dims[1]), int(vmap.dims[2])
    flat = (int(b[0]) * ny + int(b[1])) * nz + int(b[2])
    chain = [flat]
    while parents[chain[-1]] >= 0:
        chain.append(int(parents[chain[-1]]))
    chain.reverse()
    path = []
    for f in chain:
        vz = f % nz
        vy = (f // nz) % ny
        vx = f // (nz * ny)
        path.append(vmap.voxel_center((vx, vy, vz)))
    return path


def _segment_clear(vmap: VoxelMap, a: np.ndarray, b: np.ndarray,
                   margin: float) -> bool:
    length = float(np.linalg.norm(b - a))
    steps = max(2, int(math.ceil(length / (0.5 * vmap.resolution))) + 1)
    for i in range(steps + 1):
        p = a + (b - a) * (i / steps)
        if vmap.clearance_at(p, pessimistic=True) < margin:
            return False
    return True


def shortcut_path(vmap: VoxelMap, waypoints: list[np.ndarray],
                  margin: float) -> list[np.ndarray]:
    """Greedily skip waypoints while the straight segment keeps clearance."""
    if len(waypoints) <= 2:
        return waypoints
    out = [waypoints[0]]
    i = 0
    last = len(waypoints) - 1
    while i < last:
        j = last
        while j > i + 1 and not _segment_clear(vmap, waypoints[i],
                                               waypoints[j], margin):
            j -= 1
        out.append(waypoints[j])
        i = j
    return out


def generate_trajectory(uav: UavState, viewpoint: ViewpointCandidate,
                        vmap: VoxelMap, view: LayerView,
                        limits: MotionLimits,
                        sample_dt: float = 0.05) -> Trajectory:
    """Plan and time-parameterise motion to a viewpoint.

    Raises Unreachable when no margin-keeping path exists.  Total duration
    is the larger of the translation and yaw ramp times; the translation
    profile is stretched when yaw dominates so both limits hold throughout.
    """
    start = np.asarray(uav.position, dtype=np.float64)
    goal = np.asarray(viewpoint.position, dtype=np.float64)
    raw = find_grid_path(vmap, view, start, goal, limits.safety_margin)
    if raw is None:
        raise Unreachable("no clearance-keeping path to viewpoint")
    waypoints = [start] + raw + [goal]
    waypoints = [w for i, w in enumerate(waypoints)
                 if i == 0 or float(np.linalg.norm(w - waypoints[i - 1])) > 1e-12]
    waypoints = shortcut_path(vmap, waypoints, limits.safety_margin)

    seg = np.array([np.linalg.norm(b - a)
                    for a, b in zip(waypoints, waypoints[1:])])
    cum = np.concatenate(([0.0], np.cumsum(seg)))
    length = float(cum[-1])

    dyaw = wrap_angle(viewpoint.yaw - uav.yaw)
    t_yaw = abs(dyaw) / limits.yaw_rate_max
    t_trans, t_ramp, peak = _trapezoid_times(length, limits.v_max,
                                             limits.accel_max)
    duration = max(t_trans, t_yaw)

    if duration <= 0.0:
        once = np.asarray([start])
        return Trajectory(times=np.zeros(1), positions=once,
                          yaws=np.asarray([uav.yaw]), speeds=np.zeros(1),
                          duration=0.0)

    stretch = t_trans / duration if duration > 0 else 1.0
    n = max(2, int(math.ceil(duration / sample_dt)) + 1)
    times = np.linspace(0.0, duration, n)
    positions = np.empty((n, 3))
    speeds = np.empty(n)
    for i, t in enumerate(times):
        arc, spd = _trapezoid_state(t * stretch, t_ramp, peak,
                                    limits.accel_max, t_trans, length)
        positions[i] = _point_at_arc(waypoints, cum, arc)
        speeds[i] = spd * stretch
    yaws = uav.yaw + dyaw * (times / duration)
    return Trajectory(times=times, positions=positions, yaws=yaws,
                      speeds=speeds, duration=float(duration))


def _point_at_arc(waypoints: list[np.ndarray], cum: np.ndarray,
                  arc: float) -> np.ndarray:
    if arc <= 0.0:
        return waypoints[0].copy()
    if arc >= cum[-1]:
        return waypoints[-1].copy()
    i = int(np.searchsorted(cum, arc, side="right")) - 1
    i = min(i, len(waypoints) - 2)
    seg = cum[i + 1] - cum[i]
    a = 0.0 if seg == 0 else (arc - cum[i]) / seg
    return (1 - a) * waypoints[i] + a * waypoints[i + 1]


def spin_trajectory(uav: UavState, yaw_rate: float,
                    turns: float = 1.0, sample_dt: float = 0.05) -> Trajectory:
    """In-place full rotation used to seed the map around the start pose."""
    total = 2.0 * math.pi * turns
    duration = total / yaw_rate
    n = max(2, int(math.ceil(duration / sample_dt)) + 1)
    times = np.linspace(0.0, duration, n)
    positions = np.tile(np.asarray(uav.position, dtype=np.float64), (n, 1))
    yaws = uav.yaw + total * (times / duration)
    return Trajectory(times=times, positions=positions, yaws=yaws,
                      speeds=np.zeros(n), duration=float(duration))
