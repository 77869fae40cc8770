"""Compiled inner loops: free flight, billiard steps, orbits and batch return times.

A scene is flattened into :class:`SceneArrays`.  Scatterer ids are integer
triples ``(i, j, m)``: lattice translate ``i*b1 + j*b2`` of motif disk ``m``
when ``m >= 0``, added disk with serial ``i`` when ``m == -1``.

Spatial lookup is a uniform grid of cell size ``h``.  Cells inside the
override box carry explicit candidate lists (CSR); outside it candidates are
generated from lattice arithmetic, which is how lattice tiles are
materialized lazily.  Status codes: 0 ok, 1 singular (near-tangent hit),
2 no hit within the flight cap, 3 escaped (finite gas, left bounding box),
4 step cap exceeded.
"""

from __future__ import annotations

import math
from collections import namedtuple

import numpy as np
from numba import njit

OK, SINGULAR, NOHIT, ESCAPED, EXCEEDED = 0, 1, 2, 3, 4

TANGENCY_TOL = 1e-9
SNAP = 16.0 * 2.220446049250313e-16

SceneArrays = namedtuple(
    "SceneArrays",
    [
        "has_lattice",  # int64 0/1
        "B",  # (2, 2) basis vectors as columns
        "Binv",
        "mc",  # (M, 2) motif centers
        "mr",  # (M,) motif radii
        "reach",  # (M, 2) candidate half-widths in lattice coordinates
        "h",  # grid cell size
        "box",  # int64[4]: x0, y0, nx, ny of the override box (cells)
        "cstart",  # int64[nx*ny + 1]
        "citem",  # int64[K] indices into the explicit table
        "ec",  # (E, 2) explicit centers
        "er",  # (E,)
        "eid",  # (E, 3)
        "ac",  # (A, 2) added disks by serial
        "ar",  # (A,)
        "bbox",  # float64[4] xmin, ymin, xmax, ymax of finite gases
        "cap",  # flight search cap
    ],
)


@njit(cache=True)
def lattice_center(B, mc, i, j, m):
    x = i * B[0, 0] + j * B[0, 1] + mc[m, 0]
    y = i * B[1, 0] + j * B[1, 1] + mc[m, 1]
    return x, y


@njit(cache=True)
def lattice_centers(B, mc, ii, jj, mm):
    out = np.empty((ii.shape[0], 2))
    for k in range(ii.shape[0]):
        x, y = lattice_center(B, mc, ii[k], jj[k], mm[k])
        out[k, 0] = x
        out[k, 1] = y
    return out


@njit(cache=True)
def disk_of(S, i, j, m):
    if m >= 0:
        x, y = lattice_center(S.B, S.mc, i, j, m)
        return x, y, S.mr[m]
    return S.ac[i, 0], S.ac[i, 1], S.ar[i]


@njit(cache=True)
def hit_disk(ox, oy, dx, dy, cx, cy, rad):
    """Return (t, margin); t = inf on a miss."""
    wx = ox - cx
    wy = oy - cy
    b = wx * dx + wy * dy
    if b >= 0.0:
        return np.inf, np.nan
    cross = abs(wx * dy - wy * dx)
    dist = math.sqrt(wx * wx + wy * wy)
    clearance = rad - cross
    snap = SNAP * (dist + rad)
    if clearance < -snap:
        return np.inf, np.nan
    if clearance <= snap:
        clearance = 0.0
    sq = math.sqrt(clearance * (rad + cross))
    t = (dist - rad) * (dist + rad) / (-b + sq)
    if t <= 0.0:
        return np.inf, np.nan
    return t, sq / rad


@njit(cache=True)
def _scan_cell(S, ix, iy, ox, oy, dx, dy, xi, xj, xm, best):
    # best: float64[5] = t, margin, i, j, m
    bx0, by0, bnx, bny = S.box[0], S.box[1], S.box[2], S.box[3]
    kx = ix - bx0
    ky = iy - by0
    if 0 <= kx < bnx and 0 <= ky < bny:
        k = ky * bnx + kx
        for q in range(S.cstart[k], S.cstart[k + 1]):
            e = S.citem[q]
            i, j, m = S.eid[e, 0], S.eid[e, 1], S.eid[e, 2]
            if i == xi and j == xj and m == xm:
                continue
            t, mg = hit_disk(ox, oy, dx, dy, S.ec[e, 0], S.ec[e, 1], S.er[e])
            if t < best[0]:
                best[0] = t
                best[1] = mg
                best[2] = i
                best[3] = j
                best[4] = m
        return
    if S.has_lattice == 0:
        return
    h = S.h
    cx = (ix + 0.5) * h
    cy = (iy + 0.5) * h
    for m in range(S.mr.shape[0]):
        px = cx - S.mc[m, 0]
        py = cy - S.mc[m, 1]
        u0 = S.Binv[0, 0] * px + S.Binv[0, 1] * py
        u1 = S.Binv[1, 0] * px + S.Binv[1, 1] * py
        i0 = int(math.floor(u0 - S.reach[m, 0]))
        i1 = int(math.ceil(u0 + S.reach[m, 0]))
        j0 = int(math.floor(u1 - S.reach[m, 1]))
        j1 = int(math.ceil(u1 + S.reach[m, 1]))
        for i in range(i0, i1 + 1):
            for j in range(j0, j1 + 1):
                if i == xi and j == xj and m == xm:
                    continue
                x, y = lattice_center(S.B, S.mc, i, j, m)
                t, mg = hit_disk(ox, oy, dx, dy, x, y, S.mr[m])
                if t < best[0]:
                    best[0] = t
                    best[1] = mg
                    best[2] = i
                    best[3] = j
                    best[4] = m


@njit(cache=True)
def flight(S, ox, oy, dx, dy, xi, xj, xm, tmax):
    """First scatterer hit along a ray, excluding id (xi, xj, xm).

    Returns (status, i, j, m, t, margin) with status OK, NOHIT or ESCAPED.
    """
    h = S.h
    ix = int(math.floor(ox / h))
    iy = int(math.floor(oy / h))
    if dx > 0.0:
        sx = 1
        tmx = ((ix + 1) * h - ox) / dx
        tdx = h / dx
    elif dx < 0.0:
        sx = -1
        tmx = (ix * h - ox) / dx
        tdx = -h / dx
    else:
        sx = 0
        tmx = np.inf
        tdx = np.inf
    if dy > 0.0:
        sy = 1
        tmy = ((iy + 1) * h - oy) / dy
        tdy = h / dy
    elif dy < 0.0:
        sy = -1
        tmy = (iy * h - oy) / dy
        tdy = -h / dy
    else:
        sy = 0
        tmy = np.inf
        tdy = np.inf

    limit = tmax
    escape_status = NOHIT
    if S.has_lattice == 0:
        # slab exit of the bounding box; nothing lies beyond it
        tl = np.inf
        if dx > 0.0:
            tl = min(tl, (S.bbox[2] - ox) / dx)
        elif dx < 0.0:
            tl = min(tl, (S.bbox[0] - ox) / dx)
        if dy > 0.0:
            tl = min(tl, (S.bbox[3] - oy) / dy)
        elif dy < 0.0:
            tl = min(tl, (S.bbox[1] - oy) / dy)
        tl = max(tl, 0.0)
        if tl <= limit:
            limit = tl
            escape_status = ESCAPED

    best = np.empty(5)
    best[0] = np.inf
    best[1] = np.nan
    best[2] = 0.0
    best[3] = 0.0
    best[4] = 0.0
    while True:
        t_exit = min(tmx, tmy)
        _scan_cell(S, ix, iy, ox, oy, dx, dy, xi, xj, xm, best)
        if best[0] <= t_exit:
            break
        if t_exit >= limit:
            break
        if tmx < tmy:
            ix += sx
            tmx += tdx
        else:
            iy += sy
            tmy += tdy
    if best[0] == np.inf or (S.has_lattice == 1 and best[0] > min(tmx, tmy)):
        return escape_status, 0, 0, 0, np.inf, np.nan
    return OK, int(best[2]), int(best[3]), int(best[4]), best[0], best[1]


@njit(cache=True)
def line_element(S, i, j, m, r, phi):
    """Base point and direction of the line element (r, phi) on scatterer (i, j, m)."""
    cx, cy, rad = disk_of(S, i, j, m)
    th = r / rad
    c = math.cos(th)
    s = math.sin(th)
    px = cx + rad * c
    py = cy - rad * s
    cp = math.cos(phi)
    sp = math.sin(phi)
    dx = cp * (-s) + sp * c
    dy = cp * (-c) + sp * (-s)
    return px, py, dx, dy


@njit(cache=True)
def step(S, i, j, m, r, phi):
    """One application of the billiard map.

    Returns (status, i1, j1, m1, r1, phi1, tau, margin, qx, qy) where (qx, qy)
    is the new collision point.
    """
    px, py, dx, dy = line_element(S, i, j, m, r, phi)
    st, i1, j1, m1, t, mg = flight(S, px, py, dx, dy, i, j, m, S.cap)
    if st != OK:
        return st, i, j, m, r, phi, np.inf, np.nan, px, py
    qx = px + t * dx
    qy = py + t * dy
    cx, cy, rad = disk_of(S, i1, j1, m1)
    th = math.atan2(-(qy - cy), qx - cx)
    if th < 0.0:
        th += 2.0 * math.pi
    r1 = rad * th
    if r1 >= 2.0 * math.pi * rad:
        r1 = 0.0
    c = math.cos(th)
    s = math.sin(th)
    nx = c
    ny = -s
    tx = -s
    ty = -c
    dn = dx * nx + dy * ny
    vx = dx - 2.0 * dn * nx
    vy = dy - 2.0 * dn * ny
    phi1 = math.atan2(vx * nx + vy * ny, vx * tx + vy * ty)
    if mg < TANGENCY_TOL or not (0.0 < phi1 < math.pi):
        return SINGULAR, i1, j1, m1, r1, phi1, t, mg, qx, qy
    return OK, i1, j1, m1, r1, phi1, t, mg, qx, qy


@njit(cache=True)
def orbit(S, i, j, m, r, phi, n):
    """Iterate n steps; arrays hold the n+1 visited line elements.

    Returns (count, status, ids, rs, phis, taus, margins, xs, ys); only the
    first ``count + 1`` points (``count`` steps) are valid.
    """
    ids = np.zeros((n + 1, 3), np.int64)
    rs = np.zeros(n + 1)
    phis = np.zeros(n + 1)
    taus = np.zeros(n)
    margins = np.zeros(n)
    xs = np.zeros(n + 1)
    ys = np.zeros(n + 1)
    ids[0, 0] = i
    ids[0, 1] = j
    ids[0, 2] = m
    rs[0] = r
    phis[0] = phi
    px, py, _, _ = line_element(S, i, j, m, r, phi)
    xs[0] = px
    ys[0] = py
    status = OK
    count = 0
    for k in range(n):
        st, i, j, m, r, phi, t, mg, qx, qy = step(S, i, j, m, r, phi)
        if st != OK:
            status = st
            if st == SINGULAR:
                taus[k] = t
                margins[k] = mg
            break
        ids[k + 1, 0] = i
        ids[k + 1, 1] = j
        ids[k + 1, 2] = m
        rs[k + 1] = r
        phis[k + 1] = phi
        taus[k] = t
        margins[k] = mg
        xs[k + 1] = qx
        ys[k + 1] = qy
        count += 1
    return count, status, ids, rs, phis, taus, margins, xs, ys


@njit(cache=True)
def _in_targets(targets, i, j, m):
    for q in range(targets.shape[0]):
        if targets[q, 0] == i and targets[q, 1] == j and targets[q, 2] == m:
            return True
    return False


@njit(cache=True, nogil=True)
def first_return_batch(S, ids, rs, phis, targets, ox, oy, cap, any_target):
    """First return of each start to the target set.

    ``any_target`` short-circuits membership: every scatterer is a target.
    Returns (n1, status, excursion, ret_ids, ret_r, ret_phi); n1 = 0 unless
    status == OK.  Excursion is the sup of |q - O| over collision points
    strictly between start and return (0 when there are none).
    """
    n = ids.shape[0]
    n1 = np.zeros(n, np.int64)
    status = np.zeros(n, np.int64)
    exc = np.zeros(n)
    rid = np.zeros((n, 3), np.int64)
    rr = np.full(n, np.nan)
    rphi = np.full(n, np.nan)
    for s in range(n):
        i, j, m, r, phi = ids[s, 0], ids[s, 1], ids[s, 2], rs[s], phis[s]
        sup = 0.0
        st_final = EXCEEDED
        for k in range(1, cap + 1):
            st, i, j, m, r, phi, t, mg, qx, qy = step(S, i, j, m, r, phi)
            if st != OK:
                st_final = st
                break
            if any_target or _in_targets(targets, i, j, m):
                n1[s] = k
                st_final = OK
                rid[s, 0] = i
                rid[s, 1] = j
                rid[s, 2] = m
                rr[s] = r
                rphi[s] = phi
                break
            d = math.sqrt((qx - ox) ** 2 + (qy - oy) ** 2)
            if d > sup:
                sup = d
        status[s] = st_final
        exc[s] = sup
    return n1, status, exc, rid, rr, rphi


@njit(cache=True, nogil=True)
def flight_batch(S, ox, oy, dx, dy, xids, tmax):
    n = ox.shape[0]
    status = np.zeros(n, np.int64)
    hid = np.zeros((n, 3), np.int64)
    t = np.full(n, np.inf)
    mg = np.full(n, np.nan)
    for s in range(n):
        st, i, j, m, tt, g = flight(S, ox[s], oy[s], dx[s], dy[s], xids[s, 0], xids[s, 1], xids[s, 2], tmax)
        status[s] = st
        hid[s, 0] = i
        hid[s, 1] = j
        hid[s, 2] = m
        t[s] = tt
        mg[s] = g
    return status, hid, t, mg


@njit(cache=True, nogil=True)
def step_batch(S, ids, rs, phis):
    n = ids.shape[0]
    status = np.zeros(n, np.int64)
    nid = np.zeros((n, 3), np.int64)
    nr = np.zeros(n)
    nphi = np.zeros(n)
    tau = np.zeros(n)
    mg = np.zeros(n)
    for s in range(n):
        st, i, j, m, r, phi, t, g, qx, qy = step(S, ids[s, 0], ids[s, 1], ids[s, 2], rs[s], phis[s])
        status[s] = st
        nid[s, 0] = i
        nid[s, 1] = j
        nid[s, 2] = m
        nr[s] = r
        nphi[s] = phi
        tau[s] = t
        mg[s] = g
    return status, nid, nr, nphi, tau, mg


@njit(cache=True, nogil=True)
def collect_returns(S, i, j, m, r, phi, ti, tj, tm, n_returns, budget):
    """Visits of the orbit to scatterer (ti, tj, tm), starting with the start point.

    Returns (count, steps, status, rs, phis, tau_out, tau_in): tau_out[q] is
    the free path leaving visit q and tau_in[q] the one arriving at it (NaN
    when unknown).
    """
    rs = np.zeros(n_returns)
    phis = np.zeros(n_returns)
    tau_out = np.full(n_returns, np.nan)
    tau_in = np.full(n_returns, np.nan)
    rs[0] = r
    phis[0] = phi
    count = 1
    status = OK
    steps = 0
    pending = 0  # index whose outgoing tau is still unknown
    while steps < budget:
        st, i, j, m, r, phi, t, g, qx, qy = step(S, i, j, m, r, phi)
        steps += 1
        if st != OK:
            status = st
            break
        if pending >= 0:
            tau_out[pending] = t
            pending = -1
        if i == ti and j == tj and m == tm:
            if count == n_returns:
                break
            rs[count] = r
            phis[count] = phi
            tau_in[count] = t
            pending = count
            count += 1
    if status == OK and count < n_returns:
        status = EXCEEDED
    return count, steps, status, rs, phis, tau_out, tau_in


@njit(cache=True)
def tangent_orbit(S, i, j, m, r, phi, dr, dphi, n):
    """Propagate (dr, dphi) through n steps with the exact differential.

    The vector is renormalized to unit increasing norm after each step.
    Returns (count, status, log_sum, final state, final vector, log factors,
    cone flags, taus).
    """
    logs = np.zeros(n)
    cone = np.zeros(n, np.bool_)
    taus = np.zeros(n)
    s0 = math.sin(phi)
    nrm = math.sqrt(s0 * s0 * dr * dr + dphi * dphi)
    dr /= nrm
    dphi /= nrm
    total = 0.0
    count = 0
    status = OK
    for k in range(n):
        _, _, rad = disk_of(S, i, j, m)
        st, i1, j1, m1, r1, phi1, t, g, qx, qy = step(S, i, j, m, r, phi)
        if st != OK:
            status = st
            break
        _, _, rad1 = disk_of(S, i1, j1, m1)
        kk = 1.0 / rad
        k1 = 1.0 / rad1
        s = math.sin(phi)
        s1 = math.sin(phi1)
        a = -(s + kk * t) / s1
        b = t / s1
        c = kk + k1 * s / s1 + kk * k1 * t / s1
        d = -1.0 - k1 * t / s1
        ndr = a * dr + b * dphi
        ndphi = c * dr + d * dphi
        cone[k] = ndr * ndphi <= 0.0
        nrm = math.sqrt(s1 * s1 * ndr * ndr + ndphi * ndphi)
        logs[k] = math.log(nrm)
        total += logs[k]
        taus[k] = t
        dr = ndr / nrm
        dphi = ndphi / nrm
        i, j, m, r, phi = i1, j1, m1, r1, phi1
        count += 1
    return count, status, total, i, j, m, r, phi, dr, dphi, logs, cone, taus
