"""Billiard map, its time reversal, the exact differential and tangent dynamics.

Phase points are post-collision line elements ``(alpha, r, phi)``.  Tangent
vectors ``(dr, dphi)`` live in the same coordinates; the unstable cone is
``dr * dphi <= 0`` and the increasing norm is ``sqrt(sin(phi)^2 dr^2 + dphi^2)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .errors import GeometryError, HorizonExceeded, SingularStep
from .scene import GasConfig, ScattererId


@dataclass(frozen=True)
class PhasePoint:
    """Line element ``(alpha, r, phi)``.

    ``phi_mirror`` holds pi - phi.  Carrying both lets the time reversal swap
    them, so applying it twice gives back the identical point (a rounded
    ``pi - (pi - phi)`` would not).
    """

    alpha: ScattererId
    r: float
    phi: float
    phi_mirror: float | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "alpha", tuple(int(v) for v in self.alpha))
        object.__setattr__(self, "r", float(self.r))
        object.__setattr__(self, "phi", float(self.phi))
        if not (0.0 < self.phi < math.pi):
            raise GeometryError(f"phi must lie strictly inside (0, pi), got {self.phi!r}")
        if self.phi_mirror is None:
            object.__setattr__(self, "phi_mirror", math.pi - self.phi)


@dataclass(frozen=True)
class TangentVec:
    dr: float
    dphi: float

    @property
    def in_cone(self) -> bool:
        return self.dr * self.dphi <= 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.dr, self.dphi])


@dataclass(frozen=True)
class CollisionStep:
    start: PhasePoint
    next: PhasePoint
    tau: float
    grazing_margin: float
    k: float = 1.0
    k1: float = 1.0
    point: tuple = (math.nan, math.nan)

    @property
    def jacobian(self) -> np.ndarray:
        return jacobian_matrix(self.k, self.k1, self.tau, math.sin(self.start.phi), math.sin(self.next.phi))


class NonHyperbolicWarning(UserWarning):
    """Bounds give no uniform expansion (tau_m = 0 or k_m = 0)."""


def involution(x: PhasePoint) -> PhasePoint:
    """Time reversal (r, phi) -> (r, pi - phi); an exact involution."""
    return PhasePoint(x.alpha, x.r, x.phi_mirror, x.phi)


def _radius(config: GasConfig, sid) -> float:
    return float(K.disk_of(config.arrays, *sid)[2])


def billiard_map(config: GasConfig, x: PhasePoint) -> CollisionStep:
    S = config.arrays
    i, j, m = x.alpha
    st, i1, j1, m1, r1, phi1, tau, mg, qx, qy = K.step(S, i, j, m, x.r, x.phi)
    if st == K.SINGULAR:
        raise SingularStep(f"near-tangent collision (margin {mg:.3g}) on {(i1, j1, m1)}")
    if st != K.OK:
        raise HorizonExceeded(f"no scatterer within {S.cap:.6g} from {x}", escaped=(st == K.ESCAPED))
    nxt = PhasePoint((i1, j1, m1), r1, phi1)
    return CollisionStep(x, nxt, float(tau), float(mg), 1.0 / _radius(config, x.alpha),
                         1.0 / _radius(config, nxt.alpha), (float(qx), float(qy)))


def inverse_map(config: GasConfig, x: PhasePoint) -> CollisionStep:
    """T^{-1} computed as I o T o I; the step runs backwards in time."""
    fwd = billiard_map(config, involution(x))
    return CollisionStep(x, involution(fwd.next), fwd.tau, fwd.grazing_margin, fwd.k, fwd.k1, fwd.point)


def jacobian_matrix(k: float, k1: float, tau: float, s: float, s1: float) -> np.ndarray:
    """Differential of T in (r, phi) for curvatures k, k1, free path tau, s = sin(phi), s1 = sin(phi1)."""
    return np.array([
        [-(s + k * tau) / s1, tau / s1],
        [k + k1 * s / s1 + k * k1 * tau / s1, -1.0 - k1 * tau / s1],
    ])


def jacobian(config: GasConfig, x: PhasePoint) -> np.ndarray:
    return billiard_map(config, x).jacobian


def increasing_norm(x, u) -> float:
    """Increasing norm of ``u`` at phase point ``x`` (a PhasePoint or an angle phi)."""
    phi = x.phi if isinstance(x, PhasePoint) else float(x)
    dr, dphi = (u.dr, u.dphi) if isinstance(u, TangentVec) else (float(u[0]), float(u[1]))
    s = math.sin(phi)
    return math.sqrt(s * s * dr * dr + dphi * dphi)


def expansion_constant(bounds_or_config) -> float:
    """lambda = 1 + k_m * tau_m; warns when it is not > 1."""
    b = bounds_or_config.bounds if isinstance(bounds_or_config, GasConfig) else bounds_or_config
    lam = 1.0 + b.k_m * b.tau_m
    if not lam > 1.0:
        warnings.warn("expansion constant is 1: bounds are not hyperbolic", NonHyperbolicWarning, stacklevel=2)
    return lam


def propagate_tangent(config: GasConfig, x: PhasePoint, u, n: int):
    """Push ``u`` along n steps of the orbit of ``x``.

    Returns ``(x_n, u_n, log_sum)`` where u_n has unit increasing norm (or is
    ``u`` itself for n = 0) and log_sum accumulates the log expansion in the
    increasing norm.
    """
    u = u if isinstance(u, TangentVec) else TangentVec(float(u[0]), float(u[1]))
    if u.dr == 0.0 and u.dphi == 0.0:
        raise ValueError("tangent vector must be non-zero")
    if n == 0:
        return x, u, 0.0
    count, st, total, i, j, m, r, phi, dr, dphi, logs, cone, taus = K.tangent_orbit(
        config.arrays, *x.alpha, x.r, x.phi, u.dr, u.dphi, int(n))
    total = float(total)
    if count < n:
        partial = (PhasePoint((i, j, m), r, phi), TangentVec(dr, dphi), total)
        if st == K.SINGULAR:
            raise SingularStep(f"near-tangent collision after {count} steps", index=int(count), partial=partial)
        raise HorizonExceeded(f"free flight cap exceeded after {count} steps", escaped=(st == K.ESCAPED),
                              index=int(count), partial=partial)
    return PhasePoint((i, j, m), r, phi), TangentVec(float(dr), float(dphi)), total


def random_unstable_vector(rng: np.random.Generator) -> TangentVec:
    """Uniformly oriented vector in the open unstable cone (second/fourth quadrant)."""
    a = rng.uniform(0.0, 0.5 * math.pi)
    while a == 0.0:
        a = rng.uniform(0.0, 0.5 * math.pi)
    sgn = 1.0 if rng.random() < 0.5 else -1.0
    return TangentVec(sgn * math.cos(a), -sgn * math.sin(a))


@dataclass(frozen=True)
class LyapunovResult:
    estimate: float
    steps: int
    requested: int
    status: str = "ok"
    reverse: bool = False

    def as_dict(self) -> dict:
        return {"estimate": self.estimate, "steps": self.steps, "requested": self.requested,
                "status": self.status, "reverse": self.reverse}


_STATUS = {K.OK: "ok", K.SINGULAR: "singular", K.NOHIT: "horizon", K.ESCAPED: "escaped", K.EXCEEDED: "exceeded"}


def lyapunov_estimate(config: GasConfig, x0: PhasePoint, N: int, rng: np.random.Generator,
                      *, reverse: bool = False, u0: TangentVec | None = None) -> LyapunovResult:
    """Average log expansion of a random unstable vector over N steps.

    With ``reverse`` the orbit is run under T^{-1} starting from a stable
    vector.  By the time-reversal symmetry this is the forward run from
    I(x0) with the mirrored vector, which is what is computed.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    u = random_unstable_vector(rng) if u0 is None else u0
    x = x0
    if reverse:
        x = involution(x0)
    count, st, total, *_ = K.tangent_orbit(config.arrays, *x.alpha, x.r, x.phi, u.dr, u.dphi, int(N))
    est = float(total) / count if count else math.nan
    return LyapunovResult(est, int(count), int(N), _STATUS[int(st)] if count < N else "ok", reverse)


def tangent_trace(config: GasConfig, x: PhasePoint, u: TangentVec, n: int):
    """Per-step log expansion factors, cone flags and free paths along n steps."""
    count, st, total, i, j, m, r, phi, dr, dphi, logs, cone, taus = K.tangent_orbit(
        config.arrays, *x.alpha, x.r, x.phi, u.dr, u.dphi, int(n))
    return int(count), _STATUS[int(st)], logs[:count], cone[:count], taus[:count]


@dataclass
class Orbit:
    """A computed orbit; row k (k >= 1) is the state right after collision k."""

    ids: np.ndarray
    r: np.ndarray
    phi: np.ndarray
    x: np.ndarray
    y: np.ndarray
    tau: np.ndarray
    margin: np.ndarray
    status: str = "ok"

    @property
    def steps(self) -> int:
        return len(self.tau)

    def point(self, k: int) -> PhasePoint:
        return PhasePoint(tuple(self.ids[k]), float(self.r[k]), float(self.phi[k]))


def orbit(config: GasConfig, x: PhasePoint, n: int) -> Orbit:
    count, st, ids, rs, phis, taus, mgs, xs, ys = K.orbit(config.arrays, *x.alpha, x.r, x.phi, int(n))
    c = int(count)
    return Orbit(ids[:c + 1], rs[:c + 1], phis[:c + 1], xs[:c + 1], ys[:c + 1], taus[:c], mgs[:c],
                 _STATUS[int(st)] if c < n else "ok")


# ---------------------------------------------------------------------------
# invariant measure


def sample_arrays(config: GasConfig, scatterers, n: int, rng: np.random.Generator):
    """Normalized-mu samples as arrays ``(ids (n,3), r, phi)``.

    The scatterer is chosen with probability proportional to its boundary
    length, r is uniform on its boundary and phi has density sin(phi)/2.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    scatterers = [tuple(int(v) for v in s) for s in scatterers]
    if not scatterers:
        raise ValueError("empty scatterer set")
    radii = np.array([_radius(config, s) for s in scatterers])
    ids = np.array(scatterers, dtype=np.int64).reshape(-1, 3)
    if len(scatterers) == 1:
        pick = np.zeros(n, dtype=np.int64)
    else:
        pick = rng.choice(len(scatterers), size=n, p=radii / radii.sum())
    L = 2.0 * math.pi * radii[pick]
    r = rng.random(n) * L
    u = rng.random(n)
    phi = np.arccos(1.0 - 2.0 * u)
    # phi must stay strictly inside (0, pi)
    bad = (phi <= 0.0) | (phi >= math.pi)
    while bad.any():
        phi[bad] = np.arccos(1.0 - 2.0 * rng.random(int(bad.sum())))
        bad = (phi <= 0.0) | (phi >= math.pi)
    return ids[pick].copy(), r, phi


def measure_sample(config: GasConfig, scatterers, n: int, rng: np.random.Generator) -> list[PhasePoint]:
    if isinstance(scatterers, tuple) and scatterers and isinstance(scatterers[0], (int, np.integer)):
        scatterers = [scatterers]
    ids, r, phi = sample_arrays(config, scatterers, n, rng)
    return [PhasePoint(tuple(a), float(b), float(c)) for a, b, c in zip(ids, r, phi)]
