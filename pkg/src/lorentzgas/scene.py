"""Whole Lorentz gases: a periodic lattice generator plus a finite override list.

Scatterer ids are integer triples ``(i, j, m)``.  Lattice scatterers are the
translate ``i*b1 + j*b2`` of motif disk ``m`` (``m >= 0``); added disks are
``(serial, 0, -1)``.  A :class:`GasConfig` is immutable; every modification
returns a new one.
"""

from __future__ import annotations

import functools
import logging
import math
import threading
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy import optimize

from . import _kernels as K
from .errors import GeometryError, SceneError
from .geometry import Disk, RayHit, MISSED, NEAR_TANGENT, TANGENCY_TOL, TRANSVERSAL, arclength_of

log = logging.getLogger(__name__)

ScattererId = tuple  # (i, j, m)

DECLARED = "declared"
ESTIMATED = "estimated"
FLIGHT_CAP_FACTOR = 4.0
VALIDATION_PATCH = 5  # cells per side checked for lattice disjointness
DEFAULT_HORIZON_SAMPLES = 20000


def added_id(serial: int) -> ScattererId:
    return (int(serial), 0, -1)


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class LatticeSpec:
    basis: tuple  # ((b1x, b1y), (b2x, b2y))
    motif: tuple  # tuple[Disk, ...], centers relative to the fundamental cell

    def __post_init__(self):
        b = tuple(tuple(float(c) for c in v) for v in self.basis)
        if len(b) != 2 or any(len(v) != 2 for v in b):
            raise SceneError("basis must be two 2D vectors")
        object.__setattr__(self, "basis", b)
        object.__setattr__(self, "motif", tuple(self.motif))
        if not self.motif:
            raise SceneError("motif must contain at least one disk")
        det = b[0][0] * b[1][1] - b[0][1] * b[1][0]
        scale = math.hypot(*b[0]) * math.hypot(*b[1])
        if not math.isfinite(det) or abs(det) <= 1e-12 * max(scale, 1e-300):
            raise SceneError(f"degenerate lattice basis (det = {det!r})")

    @property
    def matrix(self) -> np.ndarray:
        """Basis vectors as columns."""
        return np.array([[self.basis[0][0], self.basis[1][0]], [self.basis[0][1], self.basis[1][1]]])

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.matrix))

    @property
    def cell_diameter(self) -> float:
        b1 = np.array(self.basis[0])
        b2 = np.array(self.basis[1])
        return float(max(np.hypot(*(b1 + b2)), np.hypot(*(b1 - b2))))


@dataclass(frozen=True)
class Bounds:
    k_m: float
    k_M: float
    tau_m: float
    tau_M: float
    provenance: str = ESTIMATED

    def as_dict(self) -> dict:
        return {"k_m": self.k_m, "k_M": self.k_M, "tau_m": self.tau_m, "tau_M": self.tau_M,
                "provenance": self.provenance}


@dataclass(frozen=True)
class HorizonReport:
    tau_min_observed: float
    tau_max_observed: float
    corridor_found: bool
    samples: int
    nohit: int = 0
    corridor_directions: tuple = ()

    def as_dict(self) -> dict:
        return {
            "tau_min_observed": self.tau_min_observed,
            "tau_max_observed": self.tau_max_observed,
            "corridor_found": self.corridor_found,
            "samples": self.samples,
            "nohit": self.nohit,
            "corridor_directions": [list(d) for d in self.corridor_directions],
        }


@dataclass(frozen=True)
class FlightHit:
    scatterer: ScattererId
    hit: RayHit


@dataclass(frozen=True)
class NoHit:
    range_exhausted: float
    escaped: bool = False


@dataclass(frozen=True)
class GasConfig:
    """A possibly infinite scatterer family.

    ``added`` is append-only; serials listed in ``dropped`` are no longer
    part of the gas.  ``shells`` records the closed annuli already rewritten
    by :func:`modify_annulus`.
    """

    lattice: LatticeSpec | None
    removed: frozenset = frozenset()
    added: tuple = ()
    dropped: frozenset = frozenset()
    origin: tuple = (0.0, 0.0)
    bounds: Bounds | None = None
    shells: tuple = ()
    flight_cap_factor: float = FLIGHT_CAP_FACTOR

    # -- identity ---------------------------------------------------------

    @property
    def is_periodic(self) -> bool:
        return self.lattice is not None and not self.removed and not self.alive_added

    @property
    def alive_added(self) -> tuple:
        return tuple(s for s in range(len(self.added)) if s not in self.dropped)

    def scatterer_key(self):
        """Hashable description of the scatterer set (ignores bounds and bookkeeping)."""
        added = tuple((s, self.added[s].center, self.added[s].radius) for s in self.alive_added)
        return (self.lattice and (self.lattice.basis, tuple((d.center, d.radius) for d in self.lattice.motif)),
                tuple(sorted(self.removed)), added)

    def same_scatterers(self, other: "GasConfig") -> bool:
        return self.scatterer_key() == other.scatterer_key()

    # -- lookup -------------------------------------------------------------

    def has(self, sid) -> bool:
        i, j, m = (int(v) for v in sid)
        if m >= 0:
            return self.lattice is not None and m < len(self.lattice.motif) and (i, j, m) not in self.removed
        return m == -1 and j == 0 and 0 <= i < len(self.added) and i not in self.dropped

    def disk(self, sid) -> Disk:
        i, j, m = (int(v) for v in sid)
        if not self.has((i, j, m)):
            raise SceneError(f"scatterer {(i, j, m)} is not part of this gas")
        if m >= 0:
            c = K.lattice_centers(self._B, self._mc, np.array([i]), np.array([j]), np.array([m]))[0]
            return Disk((c[0], c[1]), self.lattice.motif[m].radius, (i, j, m))
        d = self.added[i]
        return Disk(d.center, d.radius, (i, j, m))

    @functools.cached_property
    def _B(self):
        return self.lattice.matrix if self.lattice is not None else np.eye(2)

    @functools.cached_property
    def _mc(self):
        if self.lattice is None:
            return np.zeros((1, 2))
        return np.array([d.center for d in self.lattice.motif], dtype=float)

    @property
    def radii(self) -> np.ndarray:
        r = [d.radius for d in self.lattice.motif] if self.lattice is not None else []
        r += [self.added[s].radius for s in self.alive_added]
        return np.array(r, dtype=float)

    @property
    def max_diameter(self) -> float:
        return float(2.0 * self.radii.max())

    @property
    def flight_cap(self) -> float:
        if self.bounds is None or not math.isfinite(self.bounds.tau_M):
            return math.inf if self.lattice is None else 50.0 * self.lattice.cell_diameter
        return self.flight_cap_factor * self.bounds.tau_M

    def materialize(self, center=None, radius: float = 10.0):
        """All scatterers intersecting the closed disk of ``radius`` around ``center``.

        Returns ``(ids, centers, radii)`` sorted by id; deterministic.
        """
        if center is None:
            center = self.origin
        cx, cy = float(center[0]), float(center[1])
        ids, cs, rs = [], [], []
        if self.lattice is not None:
            mr = np.array([d.radius for d in self.lattice.motif])
            Binv = np.linalg.inv(self._B)
            rowsn = np.hypot(Binv[:, 0], Binv[:, 1])
            reach = radius + mr.max()
            for m in range(len(self.lattice.motif)):
                u = Binv @ (np.array([cx, cy]) - self._mc[m])
                i0, i1 = int(math.floor(u[0] - reach * rowsn[0])), int(math.ceil(u[0] + reach * rowsn[0]))
                j0, j1 = int(math.floor(u[1] - reach * rowsn[1])), int(math.ceil(u[1] + reach * rowsn[1]))
                ii, jj = np.meshgrid(np.arange(i0, i1 + 1), np.arange(j0, j1 + 1), indexing="ij")
                ii = ii.ravel().astype(np.int64)
                jj = jj.ravel().astype(np.int64)
                mm = np.full(ii.shape, m, np.int64)
                c = K.lattice_centers(self._B, self._mc, ii, jj, mm)
                keep = np.hypot(c[:, 0] - cx, c[:, 1] - cy) <= radius + mr[m]
                for a, b, cc in zip(ii[keep], jj[keep], c[keep]):
                    if (int(a), int(b), m) in self.removed:
                        continue
                    ids.append((int(a), int(b), m))
                    cs.append(cc)
                    rs.append(mr[m])
        for s in self.alive_added:
            d = self.added[s]
            if math.hypot(d.center[0] - cx, d.center[1] - cy) <= radius + d.radius:
                ids.append(added_id(s))
                cs.append(np.array(d.center))
                rs.append(d.radius)
        if not ids:
            return [], np.zeros((0, 2)), np.zeros(0)
        order = sorted(range(len(ids)), key=lambda q: ids[q])
        return ([ids[q] for q in order], np.array([cs[q] for q in order], dtype=float),
                np.array([rs[q] for q in order], dtype=float))

    def disks_near(self, center=None, radius: float = 10.0) -> list[Disk]:
        ids, cs, rs = self.materialize(center, radius)
        return [Disk((c[0], c[1]), r, sid) for sid, c, r in zip(ids, cs, rs)]

    # -- compiled representation ----------------------------------------------

    @functools.cached_property
    def index(self) -> "SpatialIndex":
        return SpatialIndex(self)

    @functools.cached_property
    def arrays(self) -> K.SceneArrays:
        return _build_arrays(self)


class SpatialIndex:
    """Uniform grid (cell size = max scatterer diameter) with lazily filled cells.

    Each queried cell is materialized on first use and cached; concurrent
    queries of the same cell see a single canonical tuple of ids.
    """

    def __init__(self, config: GasConfig):
        self.config = config
        self.cell_size = config.max_diameter
        self._cells: dict = {}
        self._lock = threading.Lock()

    def cell_of(self, point) -> tuple[int, int]:
        h = self.cell_size
        return int(math.floor(point[0] / h)), int(math.floor(point[1] / h))

    def cell(self, key) -> tuple:
        got = self._cells.get(key)
        if got is not None:
            return got
        h = self.cell_size
        center = ((key[0] + 0.5) * h, (key[1] + 0.5) * h)
        ids, cs, rs = self.config.materialize(center, h * math.sqrt(0.5))
        lo = np.array([key[0] * h, key[1] * h])
        hi = lo + h
        items = []
        for sid, c, r in zip(ids, cs, rs):
            nearest = np.clip(c, lo, hi)
            if math.hypot(*(c - nearest)) <= r:
                items.append(sid)
        items = tuple(items)
        with self._lock:
            return self._cells.setdefault(key, items)

    def query(self, center, radius: float) -> list:
        h = self.cell_size
        x0, y0 = self.cell_of((center[0] - radius, center[1] - radius))
        x1, y1 = self.cell_of((center[0] + radius, center[1] + radius))
        out = set()
        for ix in range(x0, x1 + 1):
            for iy in range(y0, y1 + 1):
                out.update(self.cell((ix, iy)))
        return sorted(out)

    @property
    def materialized_cells(self) -> int:
        return len(self._cells)


def _build_arrays(config: GasConfig) -> K.SceneArrays:
    h = config.max_diameter
    lat = config.lattice
    B = config._B.copy()
    Binv = np.linalg.inv(B)
    mc = config._mc.copy()
    if lat is not None:
        mr = np.array([d.radius for d in lat.motif], dtype=float)
    else:
        mr = np.ones(1)
    rowsn = np.hypot(Binv[:, 0], Binv[:, 1])
    reach = np.stack([(h * math.sqrt(0.5) + mr) * rowsn[0], (h * math.sqrt(0.5) + mr) * rowsn[1]], axis=1)

    # disks whose neighborhood differs from the pure lattice
    touched_c, touched_r = [], []
    for sid in sorted(config.removed):
        c = K.lattice_centers(B, mc, np.array([sid[0]]), np.array([sid[1]]), np.array([sid[2]]))[0]
        touched_c.append(c)
        touched_r.append(lat.motif[sid[2]].radius)
    for s in config.alive_added:
        touched_c.append(np.array(config.added[s].center))
        touched_r.append(config.added[s].radius)

    if not touched_c:
        box = np.zeros(4, np.int64)
        cstart = np.zeros(1, np.int64)
        citem = np.zeros(0, np.int64)
        ec = np.zeros((0, 2))
        er = np.zeros(0)
        eid = np.zeros((0, 3), np.int64)
        bbox = np.zeros(4)
    else:
        tc = np.array(touched_c)
        tr = np.array(touched_r)
        lo = np.floor((tc - tr[:, None]).min(axis=0) / h).astype(np.int64) - 1
        hi = np.floor((tc + tr[:, None]).max(axis=0) / h).astype(np.int64) + 1
        nx, ny = int(hi[0] - lo[0] + 1), int(hi[1] - lo[1] + 1)
        box = np.array([lo[0], lo[1], nx, ny], np.int64)
        xmin, ymin = lo[0] * h, lo[1] * h
        xmax, ymax = (hi[0] + 1) * h, (hi[1] + 1) * h
        mid = ((xmin + xmax) / 2, (ymin + ymax) / 2)
        half = math.hypot(xmax - xmin, ymax - ymin) / 2
        ids, ec, er = config.materialize(mid, half)
        eid = np.array(ids, dtype=np.int64).reshape(-1, 3)
        # register each disk in every cell its bounding square touches
        cells_lo = np.floor((ec - er[:, None]) / h).astype(np.int64)
        cells_hi = np.floor((ec + er[:, None]) / h).astype(np.int64)
        pairs_cell, pairs_item = [], []
        for e in range(len(ids)):
            for ix in range(cells_lo[e, 0], cells_hi[e, 0] + 1):
                kx = ix - lo[0]
                if not 0 <= kx < nx:
                    continue
                for iy in range(cells_lo[e, 1], cells_hi[e, 1] + 1):
                    ky = iy - lo[1]
                    if 0 <= ky < ny:
                        pairs_cell.append(ky * nx + kx)
                        pairs_item.append(e)
        pairs_cell = np.array(pairs_cell, np.int64)
        pairs_item = np.array(pairs_item, np.int64)
        order = np.lexsort((pairs_item, pairs_cell))
        pairs_cell = pairs_cell[order]
        citem = pairs_item[order]
        cstart = np.searchsorted(pairs_cell, np.arange(nx * ny + 1)).astype(np.int64)
        if len(ec):
            bbox = np.array([(ec[:, 0] - er).min(), (ec[:, 1] - er).min(),
                             (ec[:, 0] + er).max(), (ec[:, 1] + er).max()])
        else:
            bbox = np.zeros(4)

    if config.added:
        ac = np.array([d.center for d in config.added], dtype=float)
        ar = np.array([d.radius for d in config.added], dtype=float)
    else:
        ac = np.zeros((1, 2))
        ar = np.ones(1)
    return K.SceneArrays(
        np.int64(lat is not None), B, Binv, mc, mr, reach, float(h), box, cstart, citem,
        np.ascontiguousarray(ec, dtype=float), np.ascontiguousarray(er, dtype=float),
        np.ascontiguousarray(eid), ac, ar, bbox, float(config.flight_cap),
    )


# ---------------------------------------------------------------------------
# validation


def _pairwise_min_gap(centers: np.ndarray, radii: np.ndarray, ids) -> tuple[float, tuple | None]:
    """Smallest boundary gap over all pairs and the offending pair."""
    if len(radii) < 2:
        return math.inf, None
    from scipy.spatial import cKDTree

    tree = cKDTree(centers)
    pairs = tree.query_pairs(2.0 * radii.max() + 1e-9 + _gap_window(radii), output_type="ndarray")
    if len(pairs) == 0:
        return math.inf, None
    a, b = pairs[:, 0], pairs[:, 1]
    gaps = np.hypot(*(centers[a] - centers[b]).T) - radii[a] - radii[b]
    k = int(np.argmin(gaps))
    return float(gaps[k]), (ids[a[k]], ids[b[k]])


def _gap_window(radii) -> float:
    return float(2.0 * radii.max())


def check_disjoint(ids, centers, radii, what: str = "scatterers") -> float:
    gap, pair = _pairwise_min_gap(centers, radii, ids)
    if pair is not None and not gap > 0.0:
        raise SceneError(f"{what} {pair[0]} and {pair[1]} overlap or touch (gap {gap:.3g})")
    return gap


def validate_lattice(spec: LatticeSpec) -> float:
    """Check motif disjointness against all translates on a 5x5 cell patch; returns min gap."""
    tmp = GasConfig(spec)
    half = VALIDATION_PATCH // 2
    ii, jj, mm = [], [], []
    for i in range(-half, half + 1):
        for j in range(-half, half + 1):
            for m in range(len(spec.motif)):
                ii.append(i)
                jj.append(j)
                mm.append(m)
    c = K.lattice_centers(tmp._B, tmp._mc, np.array(ii, np.int64), np.array(jj, np.int64), np.array(mm, np.int64))
    r = np.array([spec.motif[m].radius for m in mm])
    ids = list(zip(ii, jj, mm))
    gap, _ = _pairwise_min_gap(c, r, ids)
    if not gap > 0.0:
        # name the offending pair with the first disk in the base cell
        from scipy.spatial import cKDTree

        pairs = cKDTree(c).query_pairs(2.0 * r.max() + 1e-9, output_type="ndarray")
        g = np.hypot(*(c[pairs[:, 0]] - c[pairs[:, 1]]).T) - r[pairs[:, 0]] - r[pairs[:, 1]]
        best = None
        for (a, b), gg in zip(pairs, g):
            if gg > 0.0:
                continue
            for p, q in ((a, b), (b, a)):
                if ids[p][:2] == (0, 0):
                    key = (ids[p], ids[q])
                    best = key if best is None or key < best else best
        pa, pb = best
        raise SceneError(f"motif disks {pa} and {pb} overlap or touch (gap {gap:.3g})")
    return gap


def check_bounds(config: GasConfig, bounds: Bounds, *, region=None) -> dict:
    """Verify curvature (exact) and size bounds for every scatterer class."""
    k = 1.0 / config.radii
    report = {
        "k_min": float(k.min()),
        "k_max": float(k.max()),
        "curvature_ok": bool(k.min() >= bounds.k_m * (1 - 1e-12) and k.max() <= bounds.k_M * (1 + 1e-12)),
    }
    diam = 2.0 * config.radii
    length = 2.0 * math.pi * config.radii
    report["diameter_ok"] = bool(np.all(diam >= 2.0 / bounds.k_M * (1 - 1e-12))
                                 and np.all(diam <= 2.0 / bounds.k_m * (1 + 1e-12)))
    report["length_ok"] = bool(np.all(length >= 2 * math.pi / bounds.k_M * (1 - 1e-12))
                               and np.all(length <= 2 * math.pi / bounds.k_m * (1 + 1e-12)))
    return report


# ---------------------------------------------------------------------------
# horizon estimation


def _sample_on(config: GasConfig, ids, n: int, rng: np.random.Generator):
    """mu-uniform line elements on the listed scatterers (weighted by length)."""
    radii = np.array([config.disk(s).radius for s in ids])
    w = radii / radii.sum()
    pick = rng.choice(len(ids), size=n, p=w)
    r = rng.random(n) * 2.0 * math.pi * radii[pick]
    phi = np.arccos(1.0 - 2.0 * rng.random(n))
    sid = np.array(ids, dtype=np.int64).reshape(-1, 3)[pick]
    return sid, r, phi


def _free_paths(S, sid, r, phi, tmax):
    n = len(r)
    ox = np.empty(n)
    oy = np.empty(n)
    dx = np.empty(n)
    dy = np.empty(n)
    for q in range(n):
        ox[q], oy[q], dx[q], dy[q] = K.line_element(S, sid[q, 0], sid[q, 1], sid[q, 2], r[q], phi[q])
    return K.flight_batch(S, ox, oy, dx, dy, sid, tmax)


def _refine(config: GasConfig, S, sid, r0, phi0, sign: float, tmax: float) -> float:
    """Local search for an extreme free path near (r0, phi0) on one scatterer."""
    rad = config.disk(sid).radius

    def f(v):
        r, phi = v
        if not 1e-6 < phi < math.pi - 1e-6:
            return math.inf
        ox, oy, dx, dy = K.line_element(S, sid[0], sid[1], sid[2], r % (2 * math.pi * rad), phi)
        st, _, _, _, t, _ = K.flight(S, ox, oy, dx, dy, sid[0], sid[1], sid[2], tmax)
        if st != K.OK:
            return math.inf
        return -sign * t

    res = optimize.minimize(f, np.array([r0, phi0]), method="Nelder-Mead",
                            options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 400,
                                     "initial_simplex": np.array([[r0, phi0], [r0 + 1e-2, phi0], [r0, phi0 + 1e-2]])})
    return -sign * float(res.fun) if math.isfinite(res.fun) else math.nan


def _corridor_scan(lat: LatticeSpec) -> list[tuple[int, int]]:
    """Rational directions p*b1 + q*b2 along which an open corridor exists.

    The lattice projected on the normal of such a direction is a 1D lattice of
    spacing |det|/|v|; a corridor exists iff the projected motif intervals fail
    to cover it.  Irrational directions are dense modulo the lattice and never
    carry corridors, and directions with spacing below the largest diameter
    are covered by a single disk, so the scan is finite.
    """
    B = lat.matrix
    det = abs(lat.det)
    rmax = max(d.radius for d in lat.motif)
    vmax = det / (2.0 * rmax)
    Binv = np.linalg.inv(B)
    pmax = int(math.ceil(np.hypot(*Binv[0]) * vmax)) + 1
    qmax = int(math.ceil(np.hypot(*Binv[1]) * vmax)) + 1
    found = []
    for p in range(-pmax, pmax + 1):
        for q in range(0, qmax + 1):
            if q == 0 and p <= 0:
                continue
            if math.gcd(p, q) != 1:
                continue
            v = B @ np.array([p, q], dtype=float)
            norm = float(np.hypot(*v))
            if norm >= vmax:
                continue
            nrm = np.array([-v[1], v[0]]) / norm
            spacing = det / norm
            iv = []
            for d in lat.motif:
                s = float(nrm @ np.array(d.center)) % spacing
                iv.append((s - d.radius, s + d.radius))
            if not _covers_circle(iv, spacing):
                found.append((p, q))
    return found


def _covers_circle(intervals, period: float) -> bool:
    segs = []
    for a, b in intervals:
        if b - a >= period:
            return True
        a0 = a % period
        b0 = a0 + (b - a)
        if b0 > period:
            segs.append((a0, period))
            segs.append((0.0, b0 - period))
        else:
            segs.append((a0, b0))
    segs.sort()
    reach = 0.0
    for a, b in segs:
        if a > reach:
            return False
        reach = max(reach, b)
    return reach >= period


def estimate_horizon(config: GasConfig, region_radius: float, n_samples: int, rng: np.random.Generator,
                     *, n_angles: int = 10_000, refine: int = 8) -> HorizonReport:
    """Empirical free-path range plus a corridor search.

    Samples are mu-uniform on scatterers within ``region_radius`` of the
    origin.  The extreme samples are polished by a local search so the
    observed range approaches the true one.  Periodic lattices also get the
    exact rational-direction corridor scan and a probe fan of ``n_angles``
    rays of length 50 cell diameters.
    """
    if n_samples <= 0:
        raise ValueError("n_samples must be positive")
    S = config.arrays
    ids, _, _ = config.materialize(config.origin, region_radius)
    if not ids:
        raise SceneError("no scatterers within the sampling region")
    lat = config.lattice
    probe = 50.0 * lat.cell_diameter if lat is not None else math.inf
    sid, r, phi = _sample_on(config, ids, n_samples, rng)
    status, _, t, _ = _free_paths(S, sid, r, phi, probe)
    ok = status == K.OK
    nohit = int((~ok).sum())
    tmin = tmax = math.nan
    if ok.any():
        tt = t[ok]
        tmin, tmax = float(tt.min()), float(tt.max())
        for sign, order in ((1.0, np.argsort(-tt)), (-1.0, np.argsort(tt))):
            idx = np.flatnonzero(ok)[order[:refine]]
            for q in idx:
                v = _refine(config, S, tuple(sid[q]), r[q], phi[q], sign, probe)
                if math.isfinite(v):
                    if sign > 0:
                        tmax = max(tmax, v)
                    else:
                        tmin = min(tmin, v)

    directions: list = []
    corridor = nohit > 0
    if lat is None:
        corridor = True
    else:
        directions = _corridor_scan(lat)
        corridor = corridor or bool(directions)
        # probe fan from the origin scatterer
        a = np.arange(n_angles) * (2.0 * math.pi / n_angles)
        sid0 = ids[int(np.argmin([math.hypot(*(np.array(config.disk(s).center) - config.origin)) for s in ids]))]
        d0 = config.disk(sid0)
        start_r = rng.random(n_angles) * d0.length
        th = start_r / d0.radius
        px = d0.center[0] + d0.radius * np.cos(th)
        py = d0.center[1] - d0.radius * np.sin(th)
        dx, dy = np.cos(a), np.sin(a)
        outward = dx * np.cos(th) - dy * np.sin(th) > 0
        xid = np.tile(np.array(sid0, np.int64), (n_angles, 1))
        st2, _, _, _ = K.flight_batch(S, px[outward], py[outward], dx[outward], dy[outward], xid[outward], probe)
        corridor = corridor or bool((st2 != K.OK).any())
    return HorizonReport(tmin, tmax, bool(corridor), int(n_samples), nohit, tuple(directions))


def _estimate_bounds(config: GasConfig, ids_region, rng, n_samples=DEFAULT_HORIZON_SAMPLES,
                     base: Bounds | None = None) -> Bounds:
    """k bounds exactly, tau_m as the smallest gap, tau_M by polished sampling."""
    radii = config.radii
    k_m, k_M = float(1.0 / radii.max()), float(1.0 / radii.min())
    center, radius = ids_region
    ids, cs, rs = config.materialize(center, radius)
    gap, _ = _pairwise_min_gap(cs, rs, ids)
    tau_m = gap
    # a bare cap for the estimation run: long enough to see any finite horizon
    probe_cfg = replace(config, bounds=None)
    rep = estimate_horizon(probe_cfg, radius, n_samples, rng, n_angles=1000)
    tau_M = rep.tau_max_observed
    if config.lattice is None:
        tau_M = math.inf
    elif rep.corridor_found:
        log.warning("gas has an open corridor; tau_M estimate %.4g is not a true bound", tau_M)
    if base is not None:
        tau_m = min(tau_m, base.tau_m)
        tau_M = max(tau_M, base.tau_M)
    return Bounds(k_m, k_M, float(tau_m), float(tau_M), ESTIMATED)


def _apply_declared(config: GasConfig, declared: Bounds | None, estimated: Bounds) -> Bounds:
    if declared is None:
        return estimated
    rep = check_bounds(config, declared)
    if not rep["curvature_ok"]:
        raise SceneError(f"declared curvature bounds [{declared.k_m}, {declared.k_M}] violated: "
                         f"k ranges over [{rep['k_min']}, {rep['k_max']}]")
    if estimated.tau_m < declared.tau_m - 1e-9 or estimated.tau_M > declared.tau_M + 1e-9:
        raise SceneError(f"declared free-path bounds [{declared.tau_m}, {declared.tau_M}] violated: "
                         f"observed [{estimated.tau_m}, {estimated.tau_M}]")
    return replace(declared, provenance=DECLARED)


# ---------------------------------------------------------------------------
# constructors


def build_periodic(spec: LatticeSpec, *, origin=None, declared: Bounds | None = None,
                   rng: np.random.Generator | None = None, horizon_samples: int = DEFAULT_HORIZON_SAMPLES) -> GasConfig:
    validate_lattice(spec)
    if origin is None:
        origin = spec.motif[0].center
    cfg = GasConfig(spec, origin=(float(origin[0]), float(origin[1])))
    rng = np.random.default_rng(0) if rng is None else rng
    region = (cfg._mc[0], 1.5 * spec.cell_diameter + 2 * max(d.radius for d in spec.motif))
    est = _estimate_bounds(cfg, region, rng, horizon_samples)
    return replace(cfg, bounds=_apply_declared(cfg, declared, est))


def build_finite(disks: Sequence[Disk], *, origin=None, declared: Bounds | None = None) -> GasConfig:
    """A gas with finitely many scatterers (no lattice); ids are ``(k, 0, -1)``."""
    disks = tuple(Disk(d.center, d.radius, added_id(k)) for k, d in enumerate(disks))
    if not disks:
        raise SceneError("a finite gas needs at least one scatterer")
    ids = [added_id(k) for k in range(len(disks))]
    gap = check_disjoint(ids, np.array([d.center for d in disks]), np.array([d.radius for d in disks]))
    if origin is None:
        origin = disks[0].center
    radii = np.array([d.radius for d in disks])
    est = Bounds(float(1 / radii.max()), float(1 / radii.min()), float(gap), math.inf, ESTIMATED)
    cfg = GasConfig(None, added=disks, origin=(float(origin[0]), float(origin[1])), bounds=est)
    if declared is not None:
        rep = check_bounds(cfg, declared)
        if not rep["curvature_ok"]:
            raise SceneError("declared curvature bounds violated")
        cfg = replace(cfg, bounds=replace(declared, provenance=DECLARED))
    return cfg


def _local_disjointness(config: GasConfig, new_disks: Iterable[Disk]) -> None:
    new_disks = list(new_disks)
    if not new_disks:
        return
    reach = config.max_diameter * 2
    for d in new_disks:
        ids, cs, rs = config.materialize(d.center, d.radius + reach)
        for sid, c, r in zip(ids, cs, rs):
            if sid == d.label:
                continue
            g = math.hypot(c[0] - d.center[0], c[1] - d.center[1]) - r - d.radius
            if not g > 0.0:
                raise SceneError(f"scatterers {d.label} and {sid} overlap or touch (gap {g:.3g})")


def finite_modification(base: GasConfig, removed: Iterable = (), added: Sequence[Disk] = (), *,
                        declared: Bounds | None = None, rng: np.random.Generator | None = None) -> GasConfig:
    """Remove finitely many lattice scatterers and add finitely many disks."""
    if base.lattice is None:
        raise SceneError("finite modifications apply to periodic gases")
    removed = frozenset(tuple(int(v) for v in sid) for sid in removed)
    for sid in removed:
        if sid[2] < 0 or sid[2] >= len(base.lattice.motif):
            raise SceneError(f"removed entry {sid} is not a lattice scatterer")
    added = tuple(added)
    if not removed and not added:
        return base
    serial0 = len(base.added)
    new = tuple(Disk(d.center, d.radius, added_id(serial0 + k)) for k, d in enumerate(added))
    cfg = replace(base, removed=base.removed | removed, added=base.added + new, bounds=None)
    _drop_cached(cfg)
    _local_disjointness(cfg, new)
    # region that changed: removed and added disks plus a collar
    centers = [K.lattice_centers(base._B, base._mc, np.array([s[0]]), np.array([s[1]]), np.array([s[2]]))[0]
               for s in removed] + [np.array(d.center) for d in new]
    centers = np.array(centers)
    mid = centers.mean(axis=0)
    tau_guess = base.bounds.tau_M if base.bounds and math.isfinite(base.bounds.tau_M) else base.lattice.cell_diameter
    radius = float(np.hypot(*(centers - mid).T).max() + 2 * tau_guess + cfg.max_diameter)
    rng = np.random.default_rng(1) if rng is None else rng
    est = _estimate_bounds(cfg, (mid, radius), rng, base=base.bounds)
    return replace(cfg, bounds=_apply_declared(cfg, declared, est))


def _drop_cached(cfg: GasConfig) -> None:
    for name in ("arrays", "index", "_B", "_mc"):
        cfg.__dict__.pop(name, None)


def modify_annulus(config: GasConfig, R: float, width: float, replacement: Sequence[Disk],
                   rng: np.random.Generator | None = None, *, horizon_samples: int = 4000) -> tuple[GasConfig, dict]:
    """Rewrite the scatterers meeting the open annulus R < |x - O| < R + width.

    Every scatterer intersecting the open annulus is removed.  A replacement
    disk either lies inside the closed annulus or coincides exactly with a
    removed scatterer, in which case that scatterer is restored unchanged.
    Returns the new config and a validation report.
    """
    if not (R > 0 and width > 0):
        raise SceneError("annulus radius and width must be positive")
    if config.lattice is None:
        raise SceneError("annulus modification needs a lattice-based gas")
    O = np.array(config.origin)
    for a, b in config.shells:
        if R <= b:
            raise SceneError(f"annulus [{R}, {R + width}] overlaps or precedes modified region [{a}, {b}]")
    ids, cs, rs = config.materialize(O, R + width + config.max_diameter)
    dist = np.hypot(*(cs - O).T)
    meets = (dist + rs > R) & (dist - rs < R + width)
    hit_ids = [s for s, k in zip(ids, meets) if k]
    hit_disks = {s: (tuple(c), r) for s, c, r, k in zip(ids, cs, rs, meets) if k}

    restore, fresh = set(), []
    for d in replacement:
        match = [s for s, (c, r) in hit_disks.items() if c == d.center and r == d.radius]
        if match:
            restore.add(match[0])
            continue
        dd = math.hypot(d.center[0] - O[0], d.center[1] - O[1])
        if dd - d.radius < R - 1e-12 or dd + d.radius > R + width + 1e-12:
            raise SceneError(f"replacement disk at {d.center} (radius {d.radius}) lies outside the annulus")
        fresh.append(d)

    gone = [s for s in hit_ids if s not in restore]
    removed = set(config.removed)
    dropped = set(config.dropped)
    for s in gone:
        if s[2] >= 0:
            removed.add(s)
        else:
            dropped.add(s[0])
    serial0 = len(config.added)
    new = tuple(Disk(d.center, d.radius, added_id(serial0 + k)) for k, d in enumerate(fresh))
    cfg = replace(config, removed=frozenset(removed), dropped=frozenset(dropped), added=config.added + new,
                  shells=config.shells + ((float(R), float(R + width)),))
    _drop_cached(cfg)
    if not gone and not new:
        return cfg, {"removed": 0, "added": 0, "restored": len(restore), "min_gap": None, "tau_range": None}

    # validate the annulus plus a collar
    collar = (config.bounds.tau_M if config.bounds and math.isfinite(config.bounds.tau_M) else 0.0) + cfg.max_diameter
    ids2, cs2, rs2 = cfg.materialize(O, R + width + collar)
    d2 = np.hypot(*(cs2 - O).T)
    near = (d2 + rs2 >= R - collar) & (d2 - rs2 <= R + width + collar)
    sel = np.flatnonzero(near)
    gap = check_disjoint([ids2[k] for k in sel], cs2[sel], rs2[sel], "scatterers")
    report = {"removed": len(gone), "added": len(new), "restored": len(restore), "min_gap": gap}

    radii = cfg.radii
    bounds = config.bounds
    k_m, k_M = float(1 / radii.max()), float(1 / radii.min())
    tau_range = None
    if gone or new:
        rng = np.random.default_rng(2) if rng is None else rng
        S = cfg.arrays
        ring = [ids2[k] for k in sel]
        sid, r, phi = _sample_on(cfg, ring, horizon_samples, rng)
        cap = 50.0 * config.lattice.cell_diameter
        st, _, t, _ = _free_paths(S, sid, r, phi, cap)
        okk = st == K.OK
        tau_range = (float(t[okk].min()) if okk.any() else math.nan, float(t[okk].max()) if okk.any() else math.nan)
        report["nohit"] = int((~okk).sum())
        if report["nohit"]:
            raise SceneError(f"annulus rewrite opened a corridor ({report['nohit']} probe flights without a hit)")
    report["tau_range"] = tau_range
    if bounds is not None:
        if bounds.provenance == DECLARED:
            if k_m < bounds.k_m * (1 - 1e-12) or k_M > bounds.k_M * (1 + 1e-12):
                raise SceneError(f"curvature bound violated: k in [{k_m}, {k_M}], declared [{bounds.k_m}, {bounds.k_M}]")
            if gap is not None and gap < bounds.tau_m - 1e-9:
                raise SceneError(f"minimum gap {gap} is below the declared tau_m {bounds.tau_m}")
            if tau_range and (tau_range[0] < bounds.tau_m - 1e-9 or tau_range[1] > bounds.tau_M + 1e-9):
                raise SceneError(f"free-path bound violated: observed {tau_range}, declared [{bounds.tau_m}, {bounds.tau_M}]")
            new_bounds = bounds
        else:
            tm = min(bounds.tau_m, gap) if gap is not None and math.isfinite(gap) else bounds.tau_m
            tM = max(bounds.tau_M, tau_range[1]) if tau_range else bounds.tau_M
            new_bounds = Bounds(k_m, k_M, float(tm), float(tM), ESTIMATED)
        cfg = replace(cfg, bounds=new_bounds)
        _drop_cached(cfg)
    return cfg, report


# ---------------------------------------------------------------------------
# free flight


def free_flight(config: GasConfig, origin, direction, *, exclude=None, tmax: float | None = None):
    """First scatterer hit along a ray: :class:`FlightHit` or :class:`NoHit`."""
    S = config.arrays
    cap = config.flight_cap if tmax is None else tmax
    xi, xj, xm = exclude if exclude is not None else (0, 0, -2)
    dx, dy = float(direction[0]), float(direction[1])
    nrm = math.hypot(dx, dy)
    if abs(nrm - 1.0) > 1e-9:
        raise GeometryError("direction must be a unit vector")
    st, i, j, m, t, mg = K.flight(S, float(origin[0]), float(origin[1]), dx, dy, xi, xj, xm, cap)
    if st != K.OK:
        return NoHit(cap, escaped=(st == K.ESCAPED))
    sid = (int(i), int(j), int(m))
    disk = config.disk(sid)
    point = (origin[0] + t * dx, origin[1] + t * dy)
    kind = TRANSVERSAL if mg >= TANGENCY_TOL else NEAR_TANGENT
    return FlightHit(sid, RayHit(float(t), arclength_of(disk, point), kind, float(mg), point))
