"""Frontier extraction, clustering, bookkeeping, and viewpoint sampling.

A frontier cell is an Unknown voxel 6-adjacent to at least one Free voxel,
both inside the active layer view.  Cells cluster by 26-connectivity and
oversized clusters are bisected along their longest bbox axis at the cell
median.  Clusters keep stable ids across incremental updates (largest
cell overlap wins, ties to the lower old id) so per-frontier duration is
meaningful.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import _kernels
from .errors import EndpointOccupied
from .voxel import FREE, OCCUPIED, UNKNOWN, LayerView, UpdateRegion

_STRUCT26 = np.ones((3, 3, 3), dtype=bool)


@dataclass(eq=False)
class ViewpointCandidate:
    """A candidate sensing pose for one frontier (identity-compared)."""

    position: np.ndarray
    yaw: float
    n_view: int
    cost_dist: float = 0.0
    cost_yaw: float = 0.0
    steering_rate: float = 0.0


@dataclass
class Frontier:
    id: int
    cells: np.ndarray  # (k, 3) int64, lexicographically sorted
    avg_position: np.ndarray
    bbox_lo: np.ndarray
    bbox_hi: np.ndarray
    birth_time: float
    near_count: int = 0
    viewpoints: list[ViewpointCandidate] = field(default_factory=list)
    importance_costs: dict[int, float] = field(default_factory=dict)
    drift: float = 0.0  # centre movement since the cached distances were exact

    @property
    def cell_count(self) -> int:
        return int(self.cells.shape[0])

    def duration(self, now: float) -> float:
        return now - self.birth_time


@dataclass
class ChangeReport:
    removed_ids: list[int] = field(default_factory=list)
    added_ids: list[int] = field(default_factory=list)
    changed_ids: list[int] = field(default_factory=list)

    @property
    def any_change(self) -> bool:
        return bool(self.removed_ids or self.added_ids or self.changed_ids)


class FrontierSet:
    """Live frontiers keyed by id, plus the pairwise distance cache."""

    def __init__(self):
        self.frontiers: dict[int, Frontier] = {}
        self.next_id = 0
        self.now = 0.0
        self._pair_dist: dict[tuple[int, int], float] = {}
        self.stale_viewpoints: set[int] = set()

    def live_ids(self) -> list[int]:
        return sorted(self.frontiers)

    def __len__(self) -> int:
        return len(self.frontiers)

    def tick(self, now: float) -> None:
        self.now = now

    def pair_distance(self, a: int, b: int) -> float | None:
        if a == b:
            return 0.0
        key = (a, b) if a < b else (b, a)
        return self._pair_dist.get(key)

    def set_pair_distance(self, a: int, b: int, value: float) -> None:
        key = (a, b) if a < b else (b, a)
        self._pair_dist[key] = value

    def invalidate(self, fid: int) -> None:
        self._pair_dist = {k: v for k, v in self._pair_dist.items() if fid not in k}

    def snapshot(self) -> list[dict]:
        """JSON-friendly trace of the live set."""
        out = []
        for fid in self.live_ids():
            f = self.frontiers[fid]
            out.append({
                "id": fid,
                "cell_count": f.cell_count,
                "avg_position": [float(x) for x in f.avg_position],
                "near_count": f.near_count,
                "duration": f.duration(self.now),
            })
        return out


# -- cell scanning -----------------------------------------------------


def frontier_cell_scan(view: LayerView, region: UpdateRegion) -> np.ndarray:
    """All frontier cells inside region (clipped to the view slab).

    Vectorised reference rule: Unknown with a 6-neighbour Free voxel,
    neighbours looked up inside the slab only.
    """
    dims = view.map.dims
    region = UpdateRegion(
        (region.lo[0], region.lo[1], max(region.lo[2], view.k0)),
        (region.hi[0], region.hi[1], min(region.hi[2], view.k1 - 1)))
    if region.empty:
        return np.zeros((0, 3), dtype=np.int64)

    # pad the window by one voxel (clamped to the slab) for neighbour reads
    pad = region.expanded(1, dims)
    pad = UpdateRegion(
        (pad.lo[0], pad.lo[1], max(pad.lo[2], view.k0)),
        (pad.hi[0], pad.hi[1], min(pad.hi[2], view.k1 - 1)))
    sub = view.map.states[pad.slices()]
    free = sub == FREE
    adj = np.zeros_like(free)
    adj[:-1, :, :] |= free[1:, :, :]
    adj[1:, :, :] |= free[:-1, :, :]
    adj[:, :-1, :] |= free[:, 1:, :]
    adj[:, 1:, :] |= free[:, :-1, :]
    adj[:, :, :-1] |= free[:, :, 1:]
    adj[:, :, 1:] |= free[:, :, :-1]
    cells_mask = (sub == UNKNOWN) & adj

    # restrict back to the requested region
    r0 = tuple(r - p for r, p in zip(region.lo, pad.lo))
    r1 = tuple(r - p for r, p in zip(region.hi, pad.lo))
    keep = np.zeros_like(cells_mask)
    keep[r0[0]:r1[0] + 1, r0[1]:r1[1] + 1, r0[2]:r1[2] + 1] = True
    cells_mask &= keep

    idx = np.argwhere(cells_mask).astype(np.int64)
    idx += np.asarray(pad.lo, dtype=np.int64)
    return _sort_cells(idx)


def _sort_cells(cells: np.ndarray) -> np.ndarray:
    if cells.shape[0] == 0:
        return cells.reshape(0, 3)
    order = np.lexsort((cells[:, 2], cells[:, 1], cells[:, 0]))
    return np.ascontiguousarray(cells[order])


# -- clustering --------------------------------------------------------


def cluster_cells(cells: np.ndarray, resolution: float,
                  split_threshold: float) -> list[np.ndarray]:
    """26-connected components, then recursive longest-axis bisection.

    Components whose bbox longest edge (voxel extent times resolution)
    exceeds split_threshold are cut at the cell median along that axis.
    """
    cells = np.asarray(cells, dtype=np.int64).reshape(-1, 3)
    if cells.shape[0] == 0:
        return []
    lo = cells.min(axis=0)
    shape = tuple(cells.max(axis=0) - lo + 1)
    grid = np.zeros(shape, dtype=np.uint8)
    local = cells - lo
    grid[local[:, 0], local[:, 1], local[:, 2]] = 1
    labels, count = ndimage.label(grid, structure=_STRUCT26)
    comp_of_cell = labels[local[:, 0], local[:, 1], local[:, 2]]

    out: list[np.ndarray] = []
    for comp in range(1, count + 1):
        comp_cells = cells[comp_of_cell == comp]
        out.extend(_bisect(comp_cells, resolution, split_threshold))
    out.sort(key=lambda c: tuple(c[0]))
    return [_sort_cells(c) for c in out]


def _bisect(cells: np.ndarray, resolution: float, threshold: float) -> list[np.ndarray]:
    lo = cells.min(axis=0)
    hi = cells.max(axis=0)
    extents = (hi - lo + 1) * resolution
    axis = int(np.argmax(extents))
    if cells.shape[0] < 2 or float(extents[axis]) <= threshold:
        return [cells]
    order = np.lexsort((cells[:, 2], cells[:, 1], cells[:, 0],
                        cells[:, axis]))
    ordered = cells[order]
    mid = cells.shape[0] // 2
    return (_bisect(ordered[:mid], resolution, threshold)
            + _bisect(ordered[mid:], resolution, threshold))


# -- distances ---------------------------------------------------------


class ReachabilityIndex:
    """Connected-component labels over the Free voxels of a view.

    A target with some Free 26-neighbour in the source's component is
    exactly the condition for the grid search to settle it, so the index
    answers reachability without running any flood.
    """

    def __init__(self, view: LayerView):
        self.view = view
        slab = view.slab_states() == FREE
        self.labels, _ = ndimage.label(slab, structure=_STRUCT26)

    def components_of_voxel(self, v) -> frozenset[int]:
        m = self.view.map
        x, y, z = int(v[0]), int(v[1]), int(v[2])
        if not m.in_bounds((x, y, z)) or not (self.view.k0 <= z < self.view.k1):
            return frozenset()
        zz = z - self.view.k0
        if m.states[x, y, z] == FREE:
            return frozenset((int(self.labels[x, y, zz]),))
        out = set()
        nx, ny = int(m.dims[0]), int(m.dims[1])
        nzz = self.view.k1 - self.view.k0
        for dx in (-1, 0, 1):
            ax = x + dx
            if ax < 0 or ax >= nx:
                continue
            for dy in (-1, 0, 1):
                ay = y + dy
                if ay < 0 or ay >= ny:
                    continue
                for dz in (-1, 0, 1):
                    az = zz + dz
                    if az < 0 or az >= nzz:
                        continue
                    lab = int(self.labels[ax, ay, az])
                    if lab > 0:
                        out.add(lab)
        return frozenset(out)

    def components_of_point(self, p) -> frozenset[int]:
        return self.components_of_voxel(self.view.map.world_to_voxel(p))

    def connected(self, a: frozenset[int], b: frozenset[int]) -> bool:
        return bool(a & b)


def center_distance(a: Frontier, b: Frontier) -> float:
    """Euclidean distance between average positions."""
    d = a.avg_position - b.avg_position
    return float(math.sqrt(float(d @ d)))


def astar_distance(view: LayerView, from_pos, to_pos) -> float:
    """Shortest 26-connected path length through Free voxels, in metres.

    Endpoints may sit on non-Free voxels (they are treated as terminals);
    an Occupied endpoint raises EndpointOccupied.  Returns math.inf when
    no path exists.
    """
    m = view.map
    a = m.world_to_voxel(from_pos)
    b = m.world_to_voxel(to_pos)
    for v in (a, b):
        if not m.in_bounds(v):
            raise ValueError(f"endpoint voxel {v} out of bounds")
        if m.states[v[0], v[1], v[2]] == OCCUPIED:
            raise EndpointOccupied(f"endpoint voxel {tuple(int(x) for x in v)} is occupied")
    if np.array_equal(a, b):
        return 0.0
    targets = np.ascontiguousarray(b.reshape(1, 3))
    dists, _ = _kernels.grid_search(
        m.states, m.clearance_pess, -1.0, view.k0, view.k1,
        int(a[0]), int(a[1]), int(a[2]), targets, m.resolution, 1, 1)
    return float(dists[0])


def path_distances(view: LayerView, from_pos, to_positions,
                   reach: ReachabilityIndex | None = None,
                   max_dist: float = 0.0) -> np.ndarray:
    """Multi-target exact Dijkstra from one source; inf where unreached.

    Occupied or out-of-bounds targets report inf (callers apply their own
    fallback policy).  With a reachability index the flood only chases
    provably reachable targets, so it always terminates early instead of
    exhausting free space on disconnected ones.  max_dist > 0 bounds the
    searched radius; targets beyond it stay inf.
    """
    m = view.map
    a = m.world_to_voxel(from_pos)
    out = np.full(len(to_positions), math.inf)
    if not m.in_bounds(a) or m.states[a[0], a[1], a[2]] == OCCUPIED:
        return out
    src_comps = reach.components_of_voxel(a) if reach is not None else None
    targets = []
    usable = []
    for i, p in enumerate(to_positions):
        v = m.world_to_voxel(p)
        if np.array_equal(v, a):
            out[i] = 0.0
            continue
        if not m.in_bounds(v) or m.states[v[0], v[1], v[2]] == OCCUPIED:
            continue
        if src_comps is not None and not (src_comps & reach.components_of_voxel(v)):
            continue
        targets.append(v)
        usable.append(i)
    if not targets:
        return out
    tarr = np.ascontiguousarray(np.asarray(targets, dtype=np.int64))
    ws, run_id = m.search_workspace()
    dists = _kernels.grid_search_ws(
        m.states, m.clearance_pess, -1.0, view.k0, view.k1,
        int(a[0]), int(a[1]), int(a[2]), tarr, m.resolution, 0, len(targets),
        float(max_dist), *ws, run_id)
    for i, d in zip(usable, dists):
        out[i] = d
    return out


def ensure_pair_distances(fset: FrontierSet, view: LayerView,
                          unreachable_penalty: float = 2.0,
                          reach: ReachabilityIndex | None = None,
                          exact_within: float = 0.0) -> None:
    """Fill the pairwise path-distance cache for every live pair.

    One bounded multi-target flood per frontier with missing rows.
    Unreachable (or occupied-endpoint) pairs fall back to Euclidean centre
    distance times unreachable_penalty so downstream costs stay finite.

    When exact_within > 0, pairs whose Euclidean separation already
    exceeds it take the Euclidean distance directly (a path lower bound,
    and enough to keep the proximity gate closed) and floods stop at that
    radius, with capped-out pairs recorded at the cap.
    """
    ids = fset.live_ids()
    cap = exact_within if exact_within > 0 else 0.0
    for i, fid in enumerate(ids):
        partners = [g for g in ids[i + 1:] if fset.pair_distance(fid, g) is None]
        if not partners:
            continue
        f = fset.frontiers[fid]
        flood_partners = []
        for g in partners:
            euclid = center_distance(f, fset.frontiers[g])
            if exact_within > 0 and euclid >= exact_within:
                fset.set_pair_distance(fid, g, euclid)
            else:
                flood_partners.append((g, euclid))
        if not flood_partners:
            continue
        others = [fset.frontiers[g].avg_position for g, _ in flood_partners]
        dists = path_distances(view, f.avg_position, others, reach, cap)
        for (g, euclid), d in zip(flood_partners, dists):
            if not math.isfinite(d):
                if reach is not None and cap > 0 and not reach.connected(
                        reach.components_of_point(f.avg_position),
                        reach.components_of_point(fset.frontiers[g].avg_position)):
                    d = euclid * unreachable_penalty
                elif cap > 0:
                    d = cap  # reachable but farther than the search bound
                else:
                    d = euclid * unreachable_penalty
            fset.set_pair_distance(fid, g, float(d))


def update_info(fset: FrontierSet, view: LayerView, s_near: float,
                unreachable_penalty: float = 2.0,
                reach: ReachabilityIndex | None = None,
                exact_within: float = 0.0) -> None:
    """Recompute near counts over the distance gate (strict: S < s_near)."""
    ensure_pair_distances(fset, view, unreachable_penalty, reach, exact_within)
    ids = fset.live_ids()
    for fid in ids:
        f = fset.frontiers[fid]
        f.near_count = sum(
            1 for g in ids
            if g != fid and fset.pair_distance(fid, g) < s_near)


# -- extraction --------------------------------------------------------


def extract_frontiers(view: LayerView, changed: UpdateRegion,
                      fset: FrontierSet, split_threshold: float = 1.5,
                      pair_cache_drift_tol: float = 0.0) -> ChangeReport:
    """Incrementally refresh the frontier set after a map update.

    Only clusters intersecting the (1-voxel expanded) changed region are
    recomputed; untouched clusters that become 26-adjacent to recomputed
    cells are absorbed so components stay maximal, matching a from-scratch
    extraction cell-for-cell.

    pair_cache_drift_tol > 0 lets a reshaped cluster keep its cached path
    distances while its centre has moved less than the tolerance in total;
    distances are then stale by at most the two endpoints' drifts.
    """
    report = ChangeReport()
    if changed.empty:
        return report
    dims = view.map.dims
    scan_region = changed.expanded(1, dims)

    new_cells = frontier_cell_scan(view, scan_region)
    pool = {tuple(c) for c in new_cells}

    # frontiers whose bbox overlaps the scan region are recomputed
    touched: dict[int, Frontier] = {}
    for fid, f in list(fset.frontiers.items()):
        if _bbox_overlaps(f.bbox_lo, f.bbox_hi, scan_region):
            touched[fid] = f
    for f in touched.values():
        for c in f.cells:
            t = tuple(int(x) for x in c)
            if _in_region(t, scan_region):
                continue  # rescanned above; may have disqualified
            pool.add(t)

    # absorb untouched frontiers adjacent to the pool (components must
    # stay maximal, as in a batch extraction)
    while True:
        if pool:
            parr = np.asarray(sorted(pool), dtype=np.int64)
            plo = parr.min(axis=0) - 1
            phi = parr.max(axis=0) + 1
        grabbed = []
        for fid, f in fset.frontiers.items():
            if fid in touched or not pool:
                continue
            if np.any(f.bbox_hi < plo) or np.any(f.bbox_lo > phi):
                continue
            if _adjacent_to_pool(f, pool):
                grabbed.append(fid)
        if not grabbed:
            break
        for fid in grabbed:
            f = fset.frontiers[fid]
            touched[fid] = f
            for c in f.cells:
                pool.add(tuple(int(x) for x in c))

    if not touched and not pool:
        return report

    pool_arr = np.asarray(sorted(pool), dtype=np.int64).reshape(-1, 3)
    clusters = cluster_cells(pool_arr, view.resolution, split_threshold)

    # match new clusters to the touched old frontiers by cell overlap
    old_cells = {fid: {tuple(int(x) for x in c) for c in f.cells}
                 for fid, f in touched.items()}
    pairs = []
    for ci, cluster in enumerate(clusters):
        cset = {tuple(int(x) for x in c) for c in cluster}
        for fid, ocells in old_cells.items():
            ov = len(cset & ocells)
            if ov > 0:
                pairs.append((-ov, fid, ci))
    pairs.sort()
    assigned_old: set[int] = set()
    assigned_new: dict[int, int] = {}
    for negov, fid, ci in pairs:
        if fid in assigned_old or ci in assigned_new:
            continue
        assigned_old.add(fid)
        assigned_new[ci] = fid

    for fid in touched:
        del fset.frontiers[fid]

    res = view.resolution
    origin = view.map.origin
    survivors: set[int] = set()
    for ci, cluster in enumerate(clusters):
        cells = _sort_cells(cluster)
        avg = origin + (cells.astype(np.float64) + 0.5).mean(axis=0) * res
        lo = cells.min(axis=0)
        hi = cells.max(axis=0)
        if ci in assigned_new:
            fid = assigned_new[ci]
            old = touched[fid]
            identical = (old.cells.shape == cells.shape
                         and np.array_equal(old.cells, cells))
            if identical:
                fset.frontiers[fid] = old
                survivors.add(fid)
                continue
            drift = old.drift + float(np.linalg.norm(avg - old.avg_position))
            keep_cache = 0.0 < drift <= pair_cache_drift_tol
            fset.frontiers[fid] = Frontier(
                id=fid, cells=cells, avg_position=avg, bbox_lo=lo, bbox_hi=hi,
                birth_time=old.birth_time,
                drift=drift if keep_cache else 0.0)
            if not keep_cache:
                fset.invalidate(fid)
            fset.stale_viewpoints.add(fid)
            survivors.add(fid)
            report.changed_ids.append(fid)
        else:
            fid = fset.next_id
            fset.next_id += 1
            fset.frontiers[fid] = Frontier(
                id=fid, cells=cells, avg_position=avg, bbox_lo=lo, bbox_hi=hi,
                birth_time=fset.now)
            fset.stale_viewpoints.add(fid)
            report.added_ids.append(fid)

    for fid in touched:
        if fid not in survivors:
            fset.invalidate(fid)
            fset.stale_viewpoints.discard(fid)
            report.removed_ids.append(fid)

    fset.frontiers = dict(sorted(fset.frontiers.items()))
    return report


def extract_full(view: LayerView, fset: FrontierSet,
                 split_threshold: float = 1.5) -> ChangeReport:
    """Seed or refresh the whole view (used at layer start)."""
    return extract_frontiers(view, UpdateRegion.whole(view.map.dims), fset,
                             split_threshold)


def _bbox_overlaps(lo, hi, region: UpdateRegion) -> bool:
    return all(int(hi[a]) >= region.lo[a] and int(lo[a]) <= region.hi[a]
               for a in range(3))


def _in_region(cell: tuple, region: UpdateRegion) -> bool:
    return all(region.lo[a] <= cell[a] <= region.hi[a] for a in range(3))


def _adjacent_to_pool(f: Frontier, pool: set) -> bool:
    if not pool:
        return False
    for c in f.cells:
        cx, cy, cz = int(c[0]), int(c[1]), int(c[2])
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for dz in (-1, 0, 1):
                    if (cx + dx, cy + dy, cz + dz) in pool:
                        return True
    return False


# -- viewpoints --------------------------------------------------------


def sample_viewpoints(f: Frontier, view: LayerView, sensor,
                      shell_radii=(1.0, 1.5, 2.0), shell_step_deg=20.0,
                      safety_margin: float = 0.3) -> list[ViewpointCandidate]:
    """Candidate poses on cylindrical shells around the average position.

    Kept candidates sit on Free voxels with pessimistic clearance at or
    above the safety margin, face the frontier centre, and see at least
    one frontier cell.  Sorted by coverage count, descending (stable).
    Requires a fresh clearance field.
    """
    m = view.map
    res = m.resolution
    z_lo, z_hi = view.z_bounds
    z_primary = float(np.clip(f.avg_position[2], z_lo + 0.5 * res,
                              z_hi - 0.5 * res))
    z_mid = float(np.clip(0.5 * (z_lo + z_hi), z_lo + 0.5 * res, z_hi - 0.5 * res))
    z_levels = [z_primary]
    angles = np.radians(np.arange(0.0, 360.0, shell_step_deg))

    mask, mlo = _frontier_mask(f)
    h_half = math.radians(sensor.fov_h_deg) / 2.0
    v_half = math.radians(sensor.fov_v_deg) / 2.0

    for z in z_levels + ([z_mid] if abs(z_mid - z_primary) > res else []):
        out: list[ViewpointCandidate] = []
        for radius in shell_radii:
            for ang in angles:
                pos = np.array([
                    f.avg_position[0] + radius * math.cos(ang),
                    f.avg_position[1] + radius * math.sin(ang),
                    z])
                v = m.world_to_voxel(pos)
                if not view.contains_voxel(v):
                    continue
                if m.states[v[0], v[1], v[2]] != FREE:
                    continue
                if m.clearance_pess[v[0], v[1], v[2]] < safety_margin:
                    continue
                yaw = math.atan2(f.avg_position[1] - pos[1],
                                 f.avg_position[0] - pos[0])
                local = pos - m.origin
                n_view = int(_kernels.count_visible_cells(
                    m.states, local[0], local[1], local[2], yaw, f.cells,
                    mask, int(mlo[0]), int(mlo[1]), int(mlo[2]),
                    h_half, v_half, float(sensor.max_range), res))
                if n_view >= 1:
                    out.append(ViewpointCandidate(position=pos, yaw=yaw,
                                                  n_view=n_view))
        if out:
            out.sort(key=lambda c: -c.n_view)
            return out
    return []


def _frontier_mask(f: Frontier) -> tuple[np.ndarray, np.ndarray]:
    lo = f.bbox_lo
    shape = tuple(int(x) for x in (f.bbox_hi - lo + 1))
    mask = np.zeros(shape, dtype=np.uint8)
    local = f.cells - lo
    mask[local[:, 0], local[:, 1], local[:, 2]] = 1
    return mask, lo
