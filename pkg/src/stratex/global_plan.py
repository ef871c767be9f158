"""Omission-aware global ordering of frontiers.

Edge costs combine travel time between average positions with an additive
deferral penalty for frontiers that are young and sparsely neighboured
(both gates are open intervals; a frontier at or past either gate carries
no penalty, which prioritises long-lived, at-risk frontiers).  The
(N+1)x(N+1) matrix has a zero first column so the tour is open, gets
compressed to the neighbourhood of the current pose, and is solved
exactly for small sizes or by nearest-neighbour plus 2-opt otherwise.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import NoFrontiers, UnknownId
from .frontiers import (Frontier, FrontierSet, ensure_pair_distances,
                        path_distances)
from .voxel import LayerView

EXACT_SOLVE_LIMIT = 12  # Held-Karp above this many frontiers gets slow


class EdgeRole(enum.Enum):
    FRONTIER = "frontier"
    POSE = "pose"


@dataclass
class OmissionParams:
    """Weights and gates for the deferral penalty and problem compression."""

    alpha_f: float = 1.0
    alpha_p: float = 1.0
    omega_i: float = 1.0
    n_t: float = 1.0
    t_max: float = 30.0
    n_max: int = 5
    s_near: float = 8.0
    v_max: float = 2.0
    x_near: int = 10
    n_min_tsp: int = 4
    n_ref_cells: int = 40
    unreachable_penalty: float = 2.0

    def validate(self) -> None:
        numeric = [self.alpha_f, self.alpha_p, self.omega_i, self.n_t,
                   self.t_max, self.n_max, self.s_near, self.v_max,
                   self.x_near, self.n_min_tsp, self.n_ref_cells]
        if any(v <= 0 for v in numeric):
            raise ValueError("all omission parameters must be positive")
        if self.n_min_tsp < 3:
            raise ValueError("n_min_tsp must be at least 3")
        if self.x_near < self.n_min_tsp:
            raise ValueError("x_near must be at least n_min_tsp")


@dataclass
class CostMatrix:
    """(N+1)^2 cost matrix in seconds; row/col 0 is the current pose."""

    values: np.ndarray
    id_map: list[int]  # frontier id per matrix index 1..N

    @property
    def size(self) -> int:
        return self.values.shape[0]

    def index_of(self, fid: int) -> int:
        try:
            return self.id_map.index(fid) + 1
        except ValueError:
            raise UnknownId(f"frontier {fid} not in matrix") from None


@dataclass
class Tour:
    node_order: list[int]  # matrix indices, starting at 0
    frontier_order: list[int]  # same path as frontier ids
    cost: float


def omission_penalty(f: Frontier, params: OmissionParams, role: EdgeRole,
                     now: float) -> float:
    """Deferral penalty alpha(f) * omega(T) * beta(N) in seconds.

    omega and beta are piecewise constants over open intervals: zero at or
    past t_max / n_max and zero at exactly T = 0 or N = 0.
    """
    t = f.duration(now)
    omega = params.omega_i if 0.0 < t < params.t_max else 0.0
    if omega == 0.0:
        return 0.0
    beta = params.n_t if 0 < f.near_count < params.n_max else 0.0
    if beta == 0.0:
        return 0.0
    base = params.alpha_f if role is EdgeRole.FRONTIER else params.alpha_p
    alpha = base * min(f.cell_count / params.n_ref_cells, 1.0)
    return alpha * omega * beta


def frontier_cost(a: Frontier, b: Frontier, params: OmissionParams,
                  now: float, distance: float) -> float:
    """Travel time a->b plus the source frontier's deferral penalty."""
    return distance / params.v_max + omission_penalty(a, params,
                                                      EdgeRole.FRONTIER, now)


def position_cost(b: Frontier, params: OmissionParams, now: float,
                  distance: float) -> float:
    """Travel time pose->b plus the destination's deferral penalty."""
    return distance / params.v_max + omission_penalty(b, params,
                                                      EdgeRole.POSE, now)


def uav_distances(fset: FrontierSet, view: LayerView, uav_pos,
                  params: OmissionParams, reach=None,
                  bounded: bool = False) -> dict[int, float]:
    """Path distance from the pose to every live frontier's average position.

    Unreachable targets fall back to Euclidean distance times the
    configured penalty so every cost stays finite.  bounded=True limits
    the flood to twice s_near and reports more distant frontiers at their
    Euclidean separation (enough for neighbourhood selection and ranking).
    """
    ids = fset.live_ids()
    if not ids:
        return {}
    pos = np.asarray(uav_pos, dtype=np.float64)
    cap = 2.0 * params.s_near if bounded else 0.0
    positions = []
    flood_ids = []
    out: dict[int, float] = {}
    for fid in ids:
        delta = fset.frontiers[fid].avg_position - pos
        euclid = float(np.linalg.norm(delta))
        if bounded and euclid >= params.s_near:
            out[fid] = euclid
        else:
            positions.append(fset.frontiers[fid].avg_position)
            flood_ids.append((fid, euclid))
    if flood_ids:
        dists = path_distances(view, uav_pos, positions, reach, cap)
        for (fid, euclid), d in zip(flood_ids, dists):
            if not math.isfinite(d):
                if bounded and reach is not None and reach.connected(
                        reach.components_of_point(pos),
                        reach.components_of_point(fset.frontiers[fid].avg_position)):
                    d = cap  # reachable but farther than the search bound
                else:
                    d = euclid * params.unreachable_penalty
            out[fid] = float(d)
    return out


def near_current_ids(fset: FrontierSet, uav_dists: dict[int, float],
                     params: OmissionParams) -> list[int]:
    """Frontiers within s_near of the pose, capped and padded for the solver.

    Sorted ascending by distance (ties by id).  When fewer than n_min_tsp
    qualify, the closest remaining frontiers fill the list even beyond
    s_near.
    """
    if not fset.frontiers:
        raise NoFrontiers("no live frontiers")
    ranked = sorted(uav_dists.items(), key=lambda kv: (kv[1], kv[0]))
    near = [fid for fid, d in ranked if d < params.s_near][:params.x_near]
    if len(near) < params.n_min_tsp:
        for fid, _ in ranked:
            if fid not in near:
                near.append(fid)
            if len(near) >= params.n_min_tsp:
                break
        near.sort(key=lambda fid: (uav_dists[fid], fid))
    return near


def build_cost_matrix(fset: FrontierSet, view: LayerView, uav_pos,
                      params: OmissionParams,
                      uav_dists: dict[int, float] | None = None) -> CostMatrix:
    """Full (N+1)^2 matrix: zero column 0, pose costs in row 0, pairwise
    frontier costs elsewhere (diagonal included, never used by solvers).

    The deferral penalty is constant along a row (it belongs to the source
    frontier), so rows assemble as S/v_max plus a per-row offset.  Also
    refreshes each frontier's importance-cost table.
    """
    ids = fset.live_ids()
    if not ids:
        raise NoFrontiers("no live frontiers")
    ensure_pair_distances(fset, view, params.unreachable_penalty)
    if uav_dists is None:
        uav_dists = uav_distances(fset, view, uav_pos, params)
    now = fset.now
    n = len(ids)

    s_matrix = np.zeros((n, n), dtype=np.float64)
    for i, fa in enumerate(ids):
        for j in range(i + 1, n):
            s = fset.pair_distance(fa, ids[j])
            s_matrix[i, j] = s
            s_matrix[j, i] = s

    values = np.zeros((n + 1, n + 1), dtype=np.float64)
    for j, fid in enumerate(ids, start=1):
        values[0, j] = position_cost(fset.frontiers[fid], params, now,
                                     uav_dists[fid])
    pens = np.array([omission_penalty(fset.frontiers[fid], params,
                                      EdgeRole.FRONTIER, now)
                     for fid in ids])
    values[1:, 1:] = s_matrix / params.v_max + pens[:, None]
    for i, fa in enumerate(ids):
        row = values[i + 1, 1:]
        fset.frontiers[fa].importance_costs = {
            fb: float(row[j]) for j, fb in enumerate(ids) if fb != fa}
    return CostMatrix(values=values, id_map=list(ids))


def compress_matrix(m: CostMatrix, ids: list[int]) -> CostMatrix:
    """Sub-matrix over the pose node plus the given frontier ids."""
    idx = [0] + [m.index_of(fid) for fid in ids]
    sel = np.ix_(idx, idx)
    return CostMatrix(values=m.values[sel].copy(), id_map=list(ids))


def _path_cost(values: np.ndarray, path: list[int]) -> float:
    total = 0.0
    for a, b in zip(path, path[1:]):
        total += values[a, b]
    return total


def _nearest_neighbour(values: np.ndarray) -> list[int]:
    n = values.shape[0] - 1
    path = [0]
    remaining = list(range(1, n + 1))
    cur = 0
    while remaining:
        best = min(remaining, key=lambda j: (values[cur, j], j))
        path.append(best)
        remaining.remove(best)
        cur = best
    return path


def _two_opt(values: np.ndarray, path: list[int]) -> list[int]:
    """First-improvement 2-opt over the open path; deterministic scans."""
    n = len(path) - 1
    path = list(path)
    improved = True
    while improved:
        improved = False
        for i in range(1, n):
            for j in range(i + 1, n + 1):
                before = values[path[i - 1], path[i]]
                after = values[path[i - 1], path[j]]
                if j < n:
                    before += values[path[j], path[j + 1]]
                    after += values[path[i], path[j + 1]]
                if after < before - 1e-12:
                    path[i:j + 1] = path[i:j + 1][::-1]
                    improved = True
    return path


def solve_tsp(m: CostMatrix) -> Tour:
    """Open tour from the pose node over all frontier nodes.

    The matrix is symmetrised by the elementwise max of the two directed
    entries (the zero column is kept so the tour stays open).  Exact
    dynamic programming up to EXACT_SOLVE_LIMIT frontiers, otherwise
    nearest-neighbour plus 2-opt to convergence.
    """
    n = m.size - 1
    if n < 1:
        raise ValueError("matrix must contain at least one frontier node")
    sym = np.maximum(m.values, m.values.T)
    sym[:, 0] = 0.0
    if n <= EXACT_SOLVE_LIMIT:
        order, _ = _kernels.held_karp(sym)
        path = [int(v) for v in order]
    else:
        path = _two_opt(sym, _nearest_neighbour(sym))
    cost = _path_cost(sym, path)
    return Tour(node_order=path,
                frontier_order=[m.id_map[i - 1] for i in path[1:]],
                cost=cost)


def plan_global(fset: FrontierSet, view: LayerView, uav_pos,
                params: OmissionParams,
                uav_dists: dict[int, float] | None = None) -> list[int]:
    """Visit order for the current neighbourhood of frontiers.

    Raises NoFrontiers when the live set is empty (layer completion
    signal).  The first returned id is the highest-priority frontier.
    """
    if uav_dists is None:
        uav_dists = uav_distances(fset, view, uav_pos, params)
    ids = near_current_ids(fset, uav_dists, params)
    full = build_cost_matrix(fset, view, uav_pos, params, uav_dists)
    comp = compress_matrix(full, ids)
    tour = solve_tsp(comp)
    return tour.frontier_order
