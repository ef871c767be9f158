"""Compiled inner loops: voxel ray traversal, grid search, tour solving.

Every kernel is deterministic: no parallel reductions, fixed iteration
order, and explicit tie-breaking on heap pops and DP transitions.  The
render and integrate kernels share the exact same traversal arithmetic so
a depth value produced by rendering maps back onto the identical voxel
sequence during integration.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

UNKNOWN = 0
FREE = 1
OCCUPIED = 2

INF = math.inf


@njit(cache=True)
def _dda_init(px, py, pz, dx, dy, dz, res):
    """Set up Amanatides-Woo traversal state for one ray.

    Returns (vx, vy, vz, stepx, stepy, stepz, tmaxx, tmaxy, tmaxz,
    tdx, tdy, tdz).  Positions are map-local (origin already removed).
    """
    vx = int(math.floor(px / res))
    vy = int(math.floor(py / res))
    vz = int(math.floor(pz / res))

    if dx > 0.0:
        stepx = 1
        tmaxx = ((vx + 1) * res - px) / dx
        tdx = res / dx
    elif dx < 0.0:
        stepx = -1
        tmaxx = (vx * res - px) / dx
        tdx = -res / dx
    else:
        stepx = 0
        tmaxx = INF
        tdx = INF

    if dy > 0.0:
        stepy = 1
        tmaxy = ((vy + 1) * res - py) / dy
        tdy = res / dy
    elif dy < 0.0:
        stepy = -1
        tmaxy = (vy * res - py) / dy
        tdy = -res / dy
    else:
        stepy = 0
        tmaxy = INF
        tdy = INF

    if dz > 0.0:
        stepz = 1
        tmaxz = ((vz + 1) * res - pz) / dz
        tdz = res / dz
    elif dz < 0.0:
        stepz = -1
        tmaxz = (vz * res - pz) / dz
        tdz = -res / dz
    else:
        stepz = 0
        tmaxz = INF
        tdz = INF

    return vx, vy, vz, stepx, stepy, stepz, tmaxx, tmaxy, tmaxz, tdx, tdy, tdz


@njit(cache=True)
def render_rays(occ, px, py, pz, dirs, max_range, res, depths):
    """First-hit depth per ray against a ground-truth occupied grid.

    occ: 3D uint8 (1 = occupied).  depths is written in place; a ray with
    no hit inside max_range reports exactly max_range.  Leaving the grid
    counts as a hit at the exit parameter (worlds are closed, so this only
    guards against numeric corner cases).
    """
    nx, ny, nz = occ.shape
    n = dirs.shape[0]
    for i in range(n):
        dx = dirs[i, 0]
        dy = dirs[i, 1]
        dz = dirs[i, 2]
        (vx, vy, vz, sx, sy, sz,
         tmx, tmy, tmz, tdx, tdy, tdz) = _dda_init(px, py, pz, dx, dy, dz, res)
        t_entry = 0.0
        depth = max_range
        while True:
            if vx < 0 or vy < 0 or vz < 0 or vx >= nx or vy >= ny or vz >= nz:
                depth = t_entry
                break
            if occ[vx, vy, vz] != 0:
                depth = t_entry
                break
            # advance to the next voxel boundary; x wins ties, then y
            if tmx <= tmy and tmx <= tmz:
                t_entry = tmx
                tmx += tdx
                vx += sx
            elif tmy <= tmz:
                t_entry = tmy
                tmy += tdy
                vy += sy
            else:
                t_entry = tmz
                tmz += tdz
                vz += sz
            if t_entry >= max_range:
                depth = max_range
                break
        if depth > max_range:
            depth = max_range
        depths[i] = depth


@njit(cache=True)
def integrate_rays(states, px, py, pz, dirs, depths, max_range, res):
    """Carve one frame into the occupancy grid.

    Voxels entered strictly before a ray's depth become Free (only from
    Unknown); the voxel entered exactly at depth becomes Occupied when
    depth < max_range.  Occupied always wins over Free, and no write ever
    moves a voxel back toward Unknown.

    Returns (changed, lox, loy, loz, hix, hiy, hiz) where the bounds are
    the inclusive voxel box of all state changes (zeros if changed == 0).
    """
    nx, ny, nz = states.shape
    n = dirs.shape[0]
    changed = 0
    lox = nx
    loy = ny
    loz = nz
    hix = -1
    hiy = -1
    hiz = -1
    for i in range(n):
        dx = dirs[i, 0]
        dy = dirs[i, 1]
        dz = dirs[i, 2]
        depth = depths[i]
        (vx, vy, vz, sx, sy, sz,
         tmx, tmy, tmz, tdx, tdy, tdz) = _dda_init(px, py, pz, dx, dy, dz, res)
        t_entry = 0.0
        left_grid = False
        while t_entry < depth:
            if vx < 0 or vy < 0 or vz < 0 or vx >= nx or vy >= ny or vz >= nz:
                left_grid = True
                break
            if states[vx, vy, vz] == UNKNOWN:
                states[vx, vy, vz] = FREE
                changed += 1
                if vx < lox:
                    lox = vx
                if vy < loy:
                    loy = vy
                if vz < loz:
                    loz = vz
                if vx > hix:
                    hix = vx
                if vy > hiy:
                    hiy = vy
                if vz > hiz:
                    hiz = vz
            if tmx <= tmy and tmx <= tmz:
                t_entry = tmx
                tmx += tdx
                vx += sx
            elif tmy <= tmz:
                t_entry = tmy
                tmy += tdy
                vy += sy
            else:
                t_entry = tmz
                tmz += tdz
                vz += sz
        # loop fell through with t_entry >= depth: the current voxel is the
        # one entered exactly at the hit parameter (same arithmetic as the
        # renderer), so it is the obstacle endpoint.
        if depth < max_range and not left_grid:
            if (0 <= vx < nx and 0 <= vy < ny and 0 <= vz < nz
                    and states[vx, vy, vz] != OCCUPIED):
                states[vx, vy, vz] = OCCUPIED
                changed += 1
                if vx < lox:
                    lox = vx
                if vy < loy:
                    loy = vy
                if vz < loz:
                    loz = vz
                if vx > hix:
                    hix = vx
                if vy > hiy:
                    hiy = vy
                if vz > hiz:
                    hiz = vz
    if changed == 0:
        return 0, 0, 0, 0, -1, -1, -1
    return changed, lox, loy, loz, hix, hiy, hiz


@njit(cache=True)
def _heap_less(dist, a, b):
    # strict ordering with node-id tie-break keeps pops deterministic
    if dist[a] < dist[b]:
        return True
    if dist[a] > dist[b]:
        return False
    return a < b


@njit(cache=True)
def _heap_sift_up(heap, pos, dist, i):
    while i > 0:
        parent = (i - 1) >> 1
        if _heap_less(dist, heap[i], heap[parent]):
            heap[i], heap[parent] = heap[parent], heap[i]
            pos[heap[i]] = i
            pos[heap[parent]] = parent
            i = parent
        else:
            break


@njit(cache=True)
def _heap_sift_down(heap, pos, dist, size, i):
    while True:
        left = 2 * i + 1
        right = left + 1
        best = i
        if left < size and _heap_less(dist, heap[left], heap[best]):
            best = left
        if right < size and _heap_less(dist, heap[right], heap[best]):
            best = right
        if best == i:
            break
        heap[i], heap[best] = heap[best], heap[i]
        pos[heap[i]] = i
        pos[heap[best]] = best
        i = best


SQRT2 = math.sqrt(2.0)
SQRT3 = math.sqrt(3.0)


@njit(cache=True)
def _step_cost(res, c1, c2, c3):
    # canonical evaluation: any path with the same step-type counts gets a
    # bit-identical cost, so independent searches agree exactly
    return res * (c1 + c2 * SQRT2 + c3 * SQRT3)


@njit(cache=True)
def grid_search(states, clearance, min_clear, k0, k1,
                sx, sy, sz, targets, res, use_heuristic, stop_after,
                max_dist=0.0):
    """Dijkstra / A* over the 26-connected free grid inside a z-slab.

    states: 3D uint8 occupancy; clearance: 3D float32 (metres), consulted
    only when min_clear >= 0.  Traversable voxels are Free (and clear
    enough); target voxels may be settled regardless of state but are
    never expanded unless traversable.  use_heuristic requires exactly
    one target.  stop_after: stop once this many targets settled (0 means
    settle everything reachable).  max_dist > 0 abandons the search once
    the frontier of settled costs passes it (Dijkstra mode only).

    Path costs are derived from integer counts of straight / face-diagonal
    / space-diagonal steps so distances are exactly reproducible by any
    other correct search over the same grid.

    Returns (target_dists, parents) with parents as flat int64 indices
    (-1 for unset) and inf for unreached targets.
    """
    nx, ny, nz = states.shape
    n = nx * ny * nz
    m = targets.shape[0]

    dist = np.full(n, INF, dtype=np.float64)
    key = np.full(n, INF, dtype=np.float64)
    cnt1 = np.zeros(n, dtype=np.int32)
    cnt2 = np.zeros(n, dtype=np.int32)
    cnt3 = np.zeros(n, dtype=np.int32)
    parents = np.full(n, -1, dtype=np.int64)
    pos = np.full(n, -1, dtype=np.int64)
    heap = np.empty(n, dtype=np.int64)
    settled = np.zeros(n, dtype=np.uint8)

    is_target = np.zeros(n, dtype=np.uint8)
    target_dists = np.full(m, INF, dtype=np.float64)
    for t in range(m):
        ti = (targets[t, 0] * ny + targets[t, 1]) * nz + targets[t, 2]
        is_target[ti] = 1

    gx = gy = gz = 0
    if use_heuristic != 0:
        gx = targets[0, 0]
        gy = targets[0, 1]
        gz = targets[0, 2]

    start = (sx * ny + sy) * nz + sz
    dist[start] = 0.0
    if use_heuristic != 0:
        ddx = float(sx - gx)
        ddy = float(sy - gy)
        ddz = float(sz - gz)
        key[start] = res * math.sqrt(ddx * ddx + ddy * ddy + ddz * ddz)
    else:
        key[start] = 0.0
    heap[0] = start
    pos[start] = 0
    hsize = 1

    remaining = stop_after
    if remaining <= 0:
        remaining = m + 1  # never triggers early exit via countdown

    found = 0
    while hsize > 0:
        u = heap[0]
        hsize -= 1
        heap[0] = heap[hsize]
        pos[heap[0]] = 0
        pos[u] = -1
        if hsize > 0:
            _heap_sift_down(heap, pos, key, hsize, 0)
        if use_heuristic == 0 and max_dist > 0.0 and dist[u] > max_dist:
            break
        settled[u] = 1

        if is_target[u] != 0:
            found += 1
            if found >= remaining:
                break

        uz = u % nz
        uy = (u // nz) % ny
        ux = u // (nz * ny)

        # expand only traversable voxels (start is traversable by fiat)
        if u != start:
            if states[ux, uy, uz] != FREE:
                continue
            if min_clear >= 0.0 and clearance[ux, uy, uz] < min_clear:
                continue

        u1 = cnt1[u]
        u2 = cnt2[u]
        u3 = cnt3[u]
        for ox in range(-1, 2):
            vx = ux + ox
            if vx < 0 or vx >= nx:
                continue
            for oy in range(-1, 2):
                vy = uy + oy
                if vy < 0 or vy >= ny:
                    continue
                for oz in range(-1, 2):
                    if ox == 0 and oy == 0 and oz == 0:
                        continue
                    vz = uz + oz
                    if vz < k0 or vz >= k1:
                        continue
                    v = (vx * ny + vy) * nz + vz
                    if settled[v] != 0:
                        continue
                    if is_target[v] == 0:
                        if states[vx, vy, vz] != FREE:
                            continue
                        if min_clear >= 0.0 and clearance[vx, vy, vz] < min_clear:
                            continue
                    axes = abs(ox) + abs(oy) + abs(oz)
                    n1 = u1
                    n2 = u2
                    n3 = u3
                    if axes == 1:
                        n1 += 1
                    elif axes == 2:
                        n2 += 1
                    else:
                        n3 += 1
                    nd = _step_cost(res, n1, n2, n3)
                    if nd < dist[v]:
                        dist[v] = nd
                        cnt1[v] = n1
                        cnt2[v] = n2
                        cnt3[v] = n3
                        parents[v] = u
                        if use_heuristic != 0:
                            hx = float(vx - gx)
                            hy = float(vy - gy)
                            hz = float(vz - gz)
                            key[v] = nd + res * math.sqrt(hx * hx + hy * hy + hz * hz)
                        else:
                            key[v] = nd
                        if pos[v] == -1:
                            heap[hsize] = v
                            pos[v] = hsize
                            hsize += 1
                        _heap_sift_up(heap, pos, key, pos[v])

    for t in range(m):
        ti = (targets[t, 0] * ny + targets[t, 1]) * nz + targets[t, 2]
        if settled[ti] != 0:
            target_dists[t] = dist[ti]
    return target_dists, parents


@njit(cache=True)
def grid_search_ws(states, clearance, min_clear, k0, k1,
                   sx, sy, sz, targets, res, use_heuristic, stop_after,
                   max_dist, dist, key, cnt1, cnt2, cnt3, parents, pos,
                   heap, stamp, tstamp, run_id):
    """grid_search over caller-owned workspace arrays (no allocation).

    Validity is tracked by stamping nodes with run_id instead of clearing
    the arrays: a node whose stamp differs is untouched this run.  pos is
    -2 for settled nodes, -1 for touched-not-queued, else the heap slot.
    Semantics otherwise identical to grid_search.
    """
    nx, ny, nz = states.shape
    m = targets.shape[0]

    target_dists = np.full(m, INF, dtype=np.float64)
    for t in range(m):
        ti = (targets[t, 0] * ny + targets[t, 1]) * nz + targets[t, 2]
        tstamp[ti] = run_id

    gx = gy = gz = 0
    if use_heuristic != 0:
        gx = targets[0, 0]
        gy = targets[0, 1]
        gz = targets[0, 2]

    start = (sx * ny + sy) * nz + sz
    stamp[start] = run_id
    dist[start] = 0.0
    cnt1[start] = 0
    cnt2[start] = 0
    cnt3[start] = 0
    parents[start] = -1
    if use_heuristic != 0:
        ddx = float(sx - gx)
        ddy = float(sy - gy)
        ddz = float(sz - gz)
        key[start] = res * math.sqrt(ddx * ddx + ddy * ddy + ddz * ddz)
    else:
        key[start] = 0.0
    heap[0] = start
    pos[start] = 0
    hsize = 1

    remaining = stop_after
    if remaining <= 0:
        remaining = m + 1

    found = 0
    while hsize > 0:
        u = heap[0]
        hsize -= 1
        heap[0] = heap[hsize]
        pos[heap[0]] = 0
        pos[u] = -2
        if hsize > 0:
            _heap_sift_down(heap, pos, key, hsize, 0)
        if use_heuristic == 0 and max_dist > 0.0 and dist[u] > max_dist:
            break

        if tstamp[u] == run_id:
            found += 1
            if found >= remaining:
                break

        uz = u % nz
        uy = (u // nz) % ny
        ux = u // (nz * ny)

        if u != start:
            if states[ux, uy, uz] != FREE:
                continue
            if min_clear >= 0.0 and clearance[ux, uy, uz] < min_clear:
                continue

        u1 = cnt1[u]
        u2 = cnt2[u]
        u3 = cnt3[u]
        for ox in range(-1, 2):
            vx = ux + ox
            if vx < 0 or vx >= nx:
                continue
            for oy in range(-1, 2):
                vy = uy + oy
                if vy < 0 or vy >= ny:
                    continue
                for oz in range(-1, 2):
                    if ox == 0 and oy == 0 and oz == 0:
                        continue
                    vz = uz + oz
                    if vz < k0 or vz >= k1:
                        continue
                    v = (vx * ny + vy) * nz + vz
                    fresh = stamp[v] != run_id
                    if not fresh and pos[v] == -2:
                        continue
                    if tstamp[v] != run_id:
                        if states[vx, vy, vz] != FREE:
                            continue
                        if min_clear >= 0.0 and clearance[vx, vy, vz] < min_clear:
                            continue
                    axes = abs(ox) + abs(oy) + abs(oz)
                    n1 = u1
                    n2 = u2
                    n3 = u3
                    if axes == 1:
                        n1 += 1
                    elif axes == 2:
                        n2 += 1
                    else:
                        n3 += 1
                    nd = _step_cost(res, n1, n2, n3)
                    dv = INF if fresh else dist[v]
                    if nd < dv:
                        dist[v] = nd
                        cnt1[v] = n1
                        cnt2[v] = n2
                        cnt3[v] = n3
                        parents[v] = u
                        if use_heuristic != 0:
                            hx = float(vx - gx)
                            hy = float(vy - gy)
                            hz = float(vz - gz)
                            key[v] = nd + res * math.sqrt(hx * hx + hy * hy + hz * hz)
                        else:
                            key[v] = nd
                        if fresh or pos[v] == -1:
                            stamp[v] = run_id
                            heap[hsize] = v
                            pos[v] = hsize
                            hsize += 1
                        _heap_sift_up(heap, pos, key, pos[v])

    for t in range(m):
        ti = (targets[t, 0] * ny + targets[t, 1]) * nz + targets[t, 2]
        if stamp[ti] == run_id and pos[ti] == -2:
            target_dists[t] = dist[ti]
    return target_dists


@njit(cache=True)
def count_visible_cells(states, ox, oy, oz, yaw, cells,
                        mask, mlox, mloy, mloz,
                        fov_h_half, fov_v_half, max_range, res):
    """Number of target cells visible from a sensor pose.

    A cell is visible when it sits inside the yaw-centred FOV cone within
    max_range and the ray from the origin reaches it crossing only Free
    voxels or voxels inside the supplied membership mask (the cluster the
    cells belong to, which is Unknown by definition).
    """
    nx, ny, nz = states.shape
    mx, my, mz = mask.shape
    count = 0
    for c in range(cells.shape[0]):
        cx = (cells[c, 0] + 0.5) * res
        cy = (cells[c, 1] + 0.5) * res
        cz = (cells[c, 2] + 0.5) * res
        wx = cx - ox
        wy = cy - oy
        wz = cz - oz
        r = math.sqrt(wx * wx + wy * wy + wz * wz)
        if r > max_range:
            continue
        if r < 1e-9:
            count += 1
            continue
        bearing = math.atan2(wy, wx)
        dh = bearing - yaw
        while dh > math.pi:
            dh -= 2.0 * math.pi
        while dh < -math.pi:
            dh += 2.0 * math.pi
        if abs(dh) > fov_h_half:
            continue
        horiz = math.sqrt(wx * wx + wy * wy)
        if abs(math.atan2(wz, horiz)) > fov_v_half:
            continue

        dx = wx / r
        dy = wy / r
        dz = wz / r
        (vx, vy, vz, sx, sy, sz,
         tmx, tmy, tmz, tdx, tdy, tdz) = _dda_init(ox, oy, oz, dx, dy, dz, res)
        visible = False
        blocked = False
        guard = 0
        max_steps = 4 * (nx + ny + nz) + 8
        while guard < max_steps:
            guard += 1
            if vx < 0 or vy < 0 or vz < 0 or vx >= nx or vy >= ny or vz >= nz:
                blocked = True
                break
            if vx == cells[c, 0] and vy == cells[c, 1] and vz == cells[c, 2]:
                visible = True
                break
            st = states[vx, vy, vz]
            if st != FREE:
                ix = vx - mlox
                iy = vy - mloy
                iz = vz - mloz
                inside = (0 <= ix < mx and 0 <= iy < my and 0 <= iz < mz
                          and mask[ix, iy, iz] != 0)
                if not inside:
                    blocked = True
                    break
            if tmx <= tmy and tmx <= tmz:
                tmx += tdx
                vx += sx
            elif tmy <= tmz:
                tmy += tdy
                vy += sy
            else:
                tmz += tdz
                vz += sz
        if visible and not blocked:
            count += 1
    return count


@njit(cache=True)
def held_karp(matrix):
    """Exact open tour over matrix node 0 .. n (node 0 = start pose).

    Returns (order, cost) with order an int64 array [0, f1, ..., fn] of
    matrix indices.  Deterministic: strict-improvement updates scanned in
    ascending (mask, end, next) order.
    """
    size = matrix.shape[0]
    n = size - 1
    order = np.empty(size, dtype=np.int64)
    order[0] = 0
    if n == 0:
        return order, 0.0
    if n == 1:
        order[1] = 1
        return order, matrix[0, 1]

    full = 1 << n
    dp = np.full((full, n), INF, dtype=np.float64)
    parent = np.full((full, n), -1, dtype=np.int64)
    for j in range(n):
        dp[1 << j, j] = matrix[0, j + 1]

    for mask in range(1, full):
        for j in range(n):
            if (mask >> j) & 1 == 0:
                continue
            cur = dp[mask, j]
            if cur == INF:
                continue
            for k in range(n):
                if (mask >> k) & 1 != 0:
                    continue
                nmask = mask | (1 << k)
                nd = cur + matrix[j + 1, k + 1]
                if nd < dp[nmask, k]:
                    dp[nmask, k] = nd
                    parent[nmask, k] = j

    best_cost = INF
    best_end = -1
    last = full - 1
    for j in range(n):
        if dp[last, j] < best_cost:
            best_cost = dp[last, j]
            best_end = j

    mask = last
    j = best_end
    idx = n
    while j >= 0:
        order[idx] = j + 1
        idx -= 1
        pj = parent[mask, j]
        mask ^= 1 << j
        j = pj
    return order, best_cost
