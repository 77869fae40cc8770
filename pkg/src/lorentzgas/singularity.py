"""Singularity curves, their epsilon-tubes, neighbor sets and orbit-to-singularity distances.

sigma+ on a scatterer alpha is the set of line elements whose forward ray is
tangent to the first scatterer it meets.  For disks the tangent direction
from each boundary point is explicit, so a curve is traced by marching r on
a grid, keeping the points where the tangent target is actually the first
obstacle, and splitting at visibility changes.  sigma- is the mirror image
under phi -> pi - phi.

Distances use the increasing metric sin(phi)^2 dr^2 + dphi^2 frozen at the
query point; points on different scatterers are infinitely far apart.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import _kernels as K
from .errors import HorizonExceeded, SingularStep
from .scene import GasConfig, ScattererId
from .stats import Proportion, wilson

FORWARD = "+"
BACKWARD = "-"
LEFT = "left"
RIGHT = "right"
DEFAULT_GRID = 2048
VISIBILITY_SHORTEN = 1e-7
GEOMETRIC = "geometric"
DYNAMICAL = "dynamical"


@dataclass(frozen=True)
class SingularityCurve:
    kind: str
    base: ScattererId
    neighbor: ScattererId
    branch: str
    r: np.ndarray = field(repr=False)
    phi: np.ndarray = field(repr=False)
    length: float = 2 * math.pi  # boundary length of the base scatterer

    @property
    def samples(self) -> np.ndarray:
        return np.stack([self.r, self.phi], axis=1)

    def unwrapped_r(self) -> np.ndarray:
        """r along the curve with the jump at L removed."""
        steps = np.diff(self.r)
        steps = (steps + self.length / 2) % self.length - self.length / 2
        return np.concatenate([[self.r[0]], self.r[0] + np.cumsum(steps)])

    def is_monotone(self) -> bool:
        """Strict monotonicity in the direction required by the kind."""
        ru = self.unwrapped_r()
        dr = np.diff(ru)
        dphi = np.diff(self.phi)
        if len(dr) == 0:
            return True
        sign = 1.0 if self.kind == FORWARD else -1.0
        return bool(np.all(dr > 0) and np.all(sign * dphi > 0))

    def metric_length(self) -> float:
        """Length in the increasing metric sin(phi)^2 dr^2 + dphi^2."""
        dr = np.diff(self.unwrapped_r())
        dphi = np.diff(self.phi)
        s = np.sin(0.5 * (self.phi[1:] + self.phi[:-1]))
        return float(np.sum(np.sqrt((s * dr) ** 2 + dphi ** 2)))

    def mirrored(self) -> "SingularityCurve":
        kind = BACKWARD if self.kind == FORWARD else FORWARD
        return SingularityCurve(kind, self.base, self.neighbor, self.branch, self.r.copy(), math.pi - self.phi,
                                self.length)


@dataclass(frozen=True)
class NeighborSet:
    alpha: ScattererId
    n: int
    ids: frozenset
    method: str
    horizon_events: int = 0

    def __len__(self):
        return len(self.ids)


# ---------------------------------------------------------------------------
# curve tracing


def _frame(cx, cy, rad, r):
    th = r / rad
    c, s = np.cos(th), np.sin(th)
    px = cx + rad * c
    py = cy - rad * s
    return px, py, (-s, -c), (c, -s)


def _tangent_phi(cx, cy, rad, r, bx, by, brad, branch):
    """phi of the ray from boundary point r tangent to disk (bx, by, brad), plus tangency distance."""
    px, py, t, n = _frame(cx, cy, rad, r)
    vx, vy = bx - px, by - py
    d = np.hypot(vx, vy)
    half = np.arcsin(np.clip(brad / d, -1.0, 1.0))
    base = np.arctan2(vy, vx)
    a = base + half if branch == LEFT else base - half
    dx, dy = np.cos(a), np.sin(a)
    phi = np.arctan2(dx * n[0] + dy * n[1], dx * t[0] + dy * t[1])
    dist = np.sqrt(np.maximum(d * d - brad * brad, 0.0))
    return phi, dist, px, py, dx, dy


def _valid(S, sid, cx, cy, rad, r, bsid, bx, by, brad, branch):
    phi, dist, px, py, dx, dy = _tangent_phi(cx, cy, rad, r, bx, by, brad, branch)
    ok = (phi > 0.0) & (phi < math.pi)
    if not np.any(ok):
        return ok, phi
    idx = np.flatnonzero(ok)
    n = len(idx)
    xid = np.tile(np.array(sid, np.int64), (n, 1))
    tmax = dist[idx] - VISIBILITY_SHORTEN
    st, hid, t, _ = K.flight_batch(S, px[idx], py[idx], dx[idx], dy[idx], xid, float(tmax.max()))
    blocked = (st == K.OK) & (t < tmax)
    ok[idx[blocked]] = False
    return ok, phi


def _runs(mask: np.ndarray):
    """Maximal cyclic runs of True as lists of indices."""
    n = len(mask)
    if mask.all():
        return [np.arange(n)]
    if not mask.any():
        return []
    start = int(np.flatnonzero(~mask)[0]) + 1  # begin right after a False
    order = (np.arange(n) + start) % n
    runs, cur = [], []
    for q in order:
        if mask[q]:
            cur.append(q)
        elif cur:
            runs.append(np.array(cur))
            cur = []
    if cur:
        runs.append(np.array(cur))
    return runs


def _refine_edge(S, sid, cx, cy, rad, bsid, bx, by, brad, branch, r_in, r_out, iters=40):
    """Bisect between a valid r_in and an invalid r_out (unwrapped); returns the last valid r."""
    L = 2 * math.pi * rad
    for _ in range(iters):
        mid = 0.5 * (r_in + r_out)
        ok, _ = _valid(S, sid, cx, cy, rad, np.array([mid % L]), bsid, bx, by, brad, branch)
        if ok[0]:
            r_in = mid
        else:
            r_out = mid
    return r_in


def _candidate_neighbors(config: GasConfig, alpha, reach: float | None):
    cx, cy, rad = K.disk_of(config.arrays, *alpha)
    if reach is None:
        if config.lattice is None:
            reach = math.inf
        else:
            cap = config.bounds.tau_M if config.bounds is not None else math.inf
            cd = config.lattice.cell_diameter
            reach = cap if math.isfinite(cap) and cap <= 20 * cd else 20 * cd
    if math.isinf(reach):
        ids = [(s, 0, -1) for s in config.alive_added]
        ids = [s for s in ids if s != tuple(alpha)]
        return ids
    radius = rad + reach + config.max_diameter
    ids, _, _ = config.materialize((cx, cy), radius)
    return [s for s in ids if s != tuple(alpha)]


def singularity_curves(config: GasConfig, alpha, kind: str = FORWARD, *, grid: int = DEFAULT_GRID,
                       reach: float | None = None, refine: bool = True) -> list[SingularityCurve]:
    """Polylines of sigma+ (or sigma-) on scatterer ``alpha``."""
    if kind == BACKWARD:
        return [c.mirrored() for c in singularity_curves(config, alpha, FORWARD, grid=grid, reach=reach,
                                                         refine=refine)]
    if kind != FORWARD:
        raise ValueError(f"kind must be '+' or '-', got {kind!r}")
    alpha = tuple(int(v) for v in alpha)
    S = config.arrays
    cx, cy, rad = K.disk_of(S, *alpha)
    L = 2 * math.pi * rad
    rg = np.arange(grid) * (L / grid)
    out = []
    for beta in _candidate_neighbors(config, alpha, reach):
        bx, by, brad = K.disk_of(S, *beta)
        for branch in (LEFT, RIGHT):
            ok, phi = _valid(S, alpha, cx, cy, rad, rg, beta, bx, by, brad, branch)
            for run in _runs(ok):
                r_run = rg[run]
                closed = len(run) == grid
                if refine and not closed:
                    h = L / grid
                    r0 = float(rg[run[0]])
                    r1 = float(rg[run[-1]])
                    lo = _refine_edge(S, alpha, cx, cy, rad, beta, bx, by, brad, branch, r0, r0 - h)
                    hi = _refine_edge(S, alpha, cx, cy, rad, beta, bx, by, brad, branch, r1, r1 + h)
                    r_run = np.concatenate([[lo % L], r_run, [hi % L]])
                    phi_run, _, *_ = _tangent_phi(cx, cy, rad, r_run, bx, by, brad, branch)
                    # drop edge points that collapsed onto the grid points
                    keep = np.ones(len(r_run), bool)
                    if abs(lo - r0) < 1e-14 * L:
                        keep[0] = False
                    if abs(hi - r1) < 1e-14 * L:
                        keep[-1] = False
                    r_run, phi_run = r_run[keep], phi_run[keep]
                else:
                    phi_run = phi[run]
                out.append(SingularityCurve(FORWARD, alpha, beta, branch, np.asarray(r_run, float),
                                            np.asarray(phi_run, float), L))
    return out


def visible_neighbors(curves) -> set:
    return {c.neighbor for c in curves}


# ---------------------------------------------------------------------------
# distances in the increasing metric


@njit(cache=True)
def _dist_one(r0, phi0, L, cr, cphi, off, sign):
    s0 = math.sin(phi0)
    best = min(phi0, math.pi - phi0)
    for c in range(off.shape[0] - 1):
        a, b = off[c], off[c + 1]
        if b - a == 0:
            continue
        sg = sign[c]
        # candidate index window from monotonicity in phi
        lo_v = sg * (phi0 - best) if sg > 0 else sg * (phi0 + best)
        hi_v = sg * (phi0 + best) if sg > 0 else sg * (phi0 - best)
        # first index with sg*phi >= lo_v
        lo, hi = a, b
        while lo < hi:
            md = (lo + hi) // 2
            if sg * cphi[md] < lo_v:
                lo = md + 1
            else:
                hi = md
        i0 = max(a, lo - 1)
        lo, hi = a, b
        while lo < hi:
            md = (lo + hi) // 2
            if sg * cphi[md] <= hi_v:
                lo = md + 1
            else:
                hi = md
        i1 = min(b - 1, lo)
        for q in range(i0, i1 + 1):
            dr1 = cr[q] - r0
            dr1 = dr1 - L * math.floor(dr1 / L + 0.5)
            x1 = s0 * dr1
            y1 = cphi[q] - phi0
            d = math.sqrt(x1 * x1 + y1 * y1)
            if d < best:
                best = d
            if q + 1 < b:
                st = cr[q + 1] - cr[q]
                st = st - L * math.floor(st / L + 0.5)
                ex = s0 * st
                ey = cphi[q + 1] - cphi[q]
                ll = ex * ex + ey * ey
                if ll > 0.0:
                    u = -(x1 * ex + y1 * ey) / ll
                    if 0.0 < u < 1.0:
                        px = x1 + u * ex
                        py = y1 + u * ey
                        d = math.sqrt(px * px + py * py)
                        if d < best:
                            best = d
    return best


@njit(cache=True, nogil=True)
def _dist_many(r, phi, L, cr, cphi, off, sign):
    out = np.empty(r.shape[0])
    for k in range(r.shape[0]):
        out[k] = _dist_one(r[k], phi[k], L, cr, cphi, off, sign)
    return out


class CurveSet:
    """All sigma+ and sigma- curves of one scatterer, packed for distance queries."""

    def __init__(self, curves, length: float):
        self.curves = list(curves)
        self.length = float(length)
        parts_r = [c.r for c in self.curves]
        parts_p = [c.phi for c in self.curves]
        self.cr = np.concatenate(parts_r) if parts_r else np.zeros(0)
        self.cphi = np.concatenate(parts_p) if parts_p else np.zeros(0)
        self.off = np.concatenate([[0], np.cumsum([len(c.r) for c in self.curves])]).astype(np.int64)
        sg = []
        for c in self.curves:
            sg.append(1.0 if (len(c.phi) < 2 or c.phi[-1] >= c.phi[0]) else -1.0)
        self.sign = np.array(sg, dtype=float)

    @classmethod
    def of(cls, config: GasConfig, alpha, grid: int = DEFAULT_GRID) -> "CurveSet":
        plus = singularity_curves(config, alpha, FORWARD, grid=grid)
        minus = [c.mirrored() for c in plus]
        rad = K.disk_of(config.arrays, *alpha)[2]
        return cls(plus + minus, 2 * math.pi * rad)

    def distance(self, r, phi) -> np.ndarray:
        r = np.atleast_1d(np.asarray(r, dtype=float))
        phi = np.atleast_1d(np.asarray(phi, dtype=float))
        return _dist_many(r, phi, self.length, self.cr, self.cphi, self.off, self.sign)


def tube_union_bound(curves: CurveSet, eps: float) -> float:
    """Upper bound on the normalized eps-tube measure, divided by eps.

    mu is the area form of the increasing metric, a metric of constant
    positive curvature, so a tube of half-width eps around a curve of length
    l has area at most 2 eps l plus two end caps of total area pi eps^2.
    The strips next to phi = 0 and phi = pi add 2 L (1 - cos eps).
    """
    L = curves.length
    area = sum(2 * eps * c.metric_length() + math.pi * eps * eps for c in curves.curves)
    area += 2 * L * (1 - math.cos(eps))
    return area / (2 * L) / eps


def d_parallel(curves: CurveSet, r: float, phi: float) -> float:
    """Increasing-metric distance from (r, phi) to sigma+ U sigma- U boundary of the phase space."""
    return float(curves.distance([r], [phi])[0])


@dataclass(frozen=True)
class TubeEstimate:
    alpha: ScattererId
    epsilon: float
    proportion: Proportion

    @property
    def estimate(self) -> float:
        return self.proportion.p

    @property
    def ci(self) -> tuple[float, float]:
        return self.proportion.lo, self.proportion.hi

    def as_dict(self) -> dict:
        d = {"alpha": list(self.alpha), "epsilon": self.epsilon}
        d.update(self.proportion.as_dict())
        return d


def _mu_sample_one(rad: float, n: int, rng: np.random.Generator):
    r = rng.random(n) * 2 * math.pi * rad
    phi = np.arccos(1.0 - 2.0 * rng.random(n))
    return r, phi


def eps_tube_measure(config: GasConfig, alpha, eps, n_samples: int, rng: np.random.Generator, *,
                     curves: CurveSet | None = None):
    """Normalized mu-measure of the eps-tube of sigma+ U sigma- U boundary on Pi_alpha.

    ``eps`` may be a float or a sequence; the same sample is used for every
    value so estimates are nested.  Returns one :class:`TubeEstimate` per eps.
    """
    scalar = np.isscalar(eps)
    eps_list = [float(eps)] if scalar else [float(e) for e in eps]
    for e in eps_list:
        if not (0.0 <= e <= 0.1):
            raise ValueError(f"epsilon must lie in [0, 0.1], got {e!r}")
    alpha = tuple(int(v) for v in alpha)
    if curves is None:
        curves = CurveSet.of(config, alpha)
    rad = K.disk_of(config.arrays, *alpha)[2]
    r, phi = _mu_sample_one(rad, n_samples, rng)
    d = curves.distance(r, phi)
    out = []
    for e in eps_list:
        k = 0 if e == 0.0 else int(np.count_nonzero(d <= e))
        out.append(TubeEstimate(alpha, e, wilson(k, n_samples)))
    return out[0] if scalar else out


# ---------------------------------------------------------------------------
# neighbor sets


def neighbor_set(config: GasConfig, alpha, n: int, method: str = GEOMETRIC, *, rng=None,
                 n_samples: int = 10_000) -> NeighborSet:
    """Scatterers reachable from alpha within n collisions.

    ``geometric``: every scatterer whose boundary lies within n * tau_M of
    the boundary of alpha (a superset).  ``dynamical``: scatterers visited by
    n-step orbits from mu-random starts on alpha (a subset).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    alpha = tuple(int(v) for v in alpha)
    S = config.arrays
    cx, cy, rad = K.disk_of(S, *alpha)
    if method == GEOMETRIC:
        tM = config.bounds.tau_M if config.bounds is not None else math.inf
        if math.isinf(tM):
            if config.lattice is not None:
                raise ValueError("geometric neighbor sets need a finite tau_M")
            ids = [(s, 0, -1) for s in config.alive_added]
            return NeighborSet(alpha, n, frozenset(s for s in ids if s != alpha), GEOMETRIC)
        reach = n * tM
        ids, cs, rs = config.materialize((cx, cy), rad + reach)
        gaps = np.hypot(cs[:, 0] - cx, cs[:, 1] - cy) - rs - rad
        keep = frozenset(s for s, g in zip(ids, gaps) if g <= reach and s != alpha)
        return NeighborSet(alpha, n, keep, GEOMETRIC)
    if method != DYNAMICAL:
        raise ValueError(f"unknown method {method!r}")
    rng = np.random.default_rng(0) if rng is None else rng
    r, phi = _mu_sample_one(rad, n_samples, rng)
    ids = np.tile(np.array(alpha, np.int64), (n_samples, 1))
    seen = set()
    events = 0
    for _ in range(n):
        st, nid, nr, nphi, _, _ = K.step_batch(S, ids, r, phi)
        ok = st == K.OK
        events += int((~ok).sum())
        # singular steps still identify the scatterer that was reached
        reached = (st == K.OK) | (st == K.SINGULAR)
        seen.update(map(tuple, np.unique(nid[reached], axis=0).tolist()))
        ids, r, phi = nid[ok], nr[ok], nphi[ok]
        if len(r) == 0:
            break
    seen.discard(alpha)
    return NeighborSet(alpha, n, frozenset(seen), DYNAMICAL, events)


# ---------------------------------------------------------------------------
# orbit diagnostics


@dataclass
class SingularityProfile:
    n: np.ndarray
    distance: np.ndarray
    status: str
    c0_candidate: float

    def as_dict(self) -> dict:
        return {"steps": int(len(self.n)), "status": self.status, "min_distance": float(self.distance.min()),
                "c0_candidate": self.c0_candidate}


class CurveCache:
    """Curve sets keyed by the local environment of a scatterer.

    Lattice scatterers far from every modification share their curves with
    all translates of the same motif disk (stored in (r, phi) coordinates,
    which are translation invariant).
    """

    def __init__(self, config: GasConfig, grid: int = DEFAULT_GRID):
        self.config = config
        self.grid = grid
        self._cache: dict = {}
        S = config.arrays
        self._box = S.box
        self._h = S.h
        self._margin = None

    def _key(self, sid):
        i, j, m = sid
        cfg = self.config
        if m < 0 or cfg.lattice is None:
            return sid
        if not cfg.removed and not cfg.alive_added:
            return ("lattice", m)
        cx, cy, rad = K.disk_of(cfg.arrays, *sid)
        reach = (cfg.bounds.tau_M if cfg.bounds and math.isfinite(cfg.bounds.tau_M) else 20 * cfg.lattice.cell_diameter)
        reach += rad + 2 * cfg.max_diameter
        x0, y0, nx, ny = (int(v) for v in self._box)
        h = self._h
        bx0, by0, bx1, by1 = x0 * h, y0 * h, (x0 + nx) * h, (y0 + ny) * h
        far = cx + reach < bx0 or cx - reach > bx1 or cy + reach < by0 or cy - reach > by1
        return ("lattice", m) if far else sid

    def get(self, sid) -> CurveSet:
        key = self._key(tuple(int(v) for v in sid))
        cs = self._cache.get(key)
        if cs is None:
            if isinstance(key[0], str):
                rep = self._representative(key[1])
            else:
                rep = key
            cs = CurveSet.of(self.config, rep, self.grid)
            self._cache[key] = cs
        return cs

    def _representative(self, m):
        cfg = self.config
        if not cfg.removed and not cfg.alive_added:
            return (0, 0, m)
        x0, y0, nx, ny = (int(v) for v in self._box)
        h = self._h
        reach = (cfg.bounds.tau_M if cfg.bounds and math.isfinite(cfg.bounds.tau_M) else 20 * cfg.lattice.cell_diameter)
        reach += 2 * cfg.max_diameter
        target = np.array([(x0 + nx) * h + 2 * reach, (y0 + ny) * h + 2 * reach])
        u = np.linalg.solve(cfg._B, target - cfg._mc[m])
        return (int(round(u[0])), int(round(u[1])), m)


def orbit_singularity_profile(config: GasConfig, x, N: int, *, cache: CurveCache | None = None) -> SingularityProfile:
    """Distance from T^n x to the singularity set of its current scatterer, n = 0..N."""
    cache = CurveCache(config) if cache is None else cache
    S = config.arrays
    count, st, ids, rs, phis, *_ = K.orbit(S, *x.alpha, x.r, x.phi, int(N))
    count = int(count)
    d = np.empty(count + 1)
    groups: dict = {}
    for k in range(count + 1):
        groups.setdefault(tuple(ids[k]), []).append(k)
    for sid, ks in groups.items():
        ks = np.array(ks)
        d[ks] = cache.get(sid).distance(rs[ks], phis[ks])
    n = np.arange(count + 1)
    with np.errstate(divide="ignore"):
        c0 = float(np.min(n[1:] ** 4.0 * d[1:])) if count >= 1 else math.nan
    status = "ok" if count == N else {K.SINGULAR: "singular", K.NOHIT: "horizon", K.ESCAPED: "escaped"}.get(int(st), "stopped")
    return SingularityProfile(n, d, status, c0)
