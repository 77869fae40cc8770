"""First returns, excursion sets, recurrence statistics and the aperiodic-gas builder.

The excursion of a first-return segment is the largest distance from the
origin O over the collision points strictly between the start and the
return.  A(R) is the set of points of Pi_alpha that return with excursion at
most R.  Sampled membership is conservative: a point that did not return
within the cap (or stopped on a singular or horizon event) is not in A(R).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import _kernels as K
from .dynamics import PhasePoint, involution, sample_arrays
from .errors import ChooseRError, SceneError
from .geometry import Disk
from .runtime import concat, map_chunks
from .scene import DECLARED, Bounds, GasConfig, _corridor_scan, modify_annulus
from .stats import Proportion, mean_se, wilson

log = logging.getLogger(__name__)

RETURNED = "returned"
EXCEEDED = "exceeded"
SINGULAR = "singular"
HORIZON = "horizon"
ESCAPED = "escaped"
_STATUS = {K.OK: RETURNED, K.EXCEEDED: EXCEEDED, K.SINGULAR: SINGULAR, K.NOHIT: HORIZON, K.ESCAPED: ESCAPED}

DEFAULT_CAP = 100_000
MAX_DOUBLINGS = 20


@dataclass(frozen=True)
class ReturnRecord:
    x0: PhasePoint
    n1: int | None
    status: str
    x_ret: PhasePoint | None
    excursion: float

    @property
    def returned(self) -> bool:
        return self.status == RETURNED


def _targets(target) -> tuple[np.ndarray, bool]:
    if target is None or target == "all":
        return np.zeros((1, 3), np.int64), True
    if isinstance(target, tuple) and target and isinstance(target[0], (int, np.integer)):
        target = [target]
    arr = np.array([tuple(int(v) for v in t) for t in target], dtype=np.int64).reshape(-1, 3)
    return arr, False


def return_batch(config: GasConfig, ids, r, phi, target, cap: int, *, origin=None, threads: int = 1):
    """Vectorized first returns: ``(n1, status codes, excursion, ret_ids, ret_r, ret_phi)``."""
    S = config.arrays
    tg, any_t = _targets(target)
    ox, oy = config.origin if origin is None else origin
    ids = np.ascontiguousarray(ids, dtype=np.int64)
    r = np.ascontiguousarray(r, dtype=float)
    phi = np.ascontiguousarray(phi, dtype=float)

    def run(a, b):
        return K.first_return_batch(S, ids[a:b], r[a:b], phi[a:b], tg, float(ox), float(oy), int(cap), any_t)

    return concat(map_chunks(run, len(r), threads))


def first_return(config: GasConfig, x: PhasePoint, target, cap: int = DEFAULT_CAP, *, origin=None) -> ReturnRecord:
    if cap < 1:
        raise ValueError("cap must be >= 1")
    n1, st, exc, rid, rr, rphi = return_batch(config, [x.alpha], [x.r], [x.phi], target, cap, origin=origin)
    status = _STATUS[int(st[0])]
    if status == RETURNED:
        return ReturnRecord(x, int(n1[0]), status, PhasePoint(tuple(rid[0]), float(rr[0]), float(rphi[0])),
                            float(exc[0]))
    return ReturnRecord(x, None, status, None, float(exc[0]))


# ---------------------------------------------------------------------------
# A(R)


@dataclass
class ExcursionSample:
    """First-return outcomes of one mu-sample of Pi_alpha, reusable across R."""

    alpha: tuple
    status: np.ndarray
    n1: np.ndarray
    excursion: np.ndarray
    ids: np.ndarray = field(repr=False)
    r: np.ndarray = field(repr=False)
    phi: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return len(self.status)

    def in_A(self, R: float) -> np.ndarray:
        return (self.status == K.OK) & (self.excursion <= R)

    def A_fraction(self, R: float) -> Proportion:
        return wilson(int(self.in_A(R).sum()), self.n)

    def complement(self, R: float) -> Proportion:
        return wilson(int((~self.in_A(R)).sum()), self.n)


def excursion_sample(config: GasConfig, alpha, n_samples: int, cap: int, rng: np.random.Generator, *,
                     origin=None, threads: int = 1) -> ExcursionSample:
    alpha = tuple(int(v) for v in alpha)
    ids, r, phi = sample_arrays(config, [alpha], n_samples, rng)
    n1, st, exc, *_ = return_batch(config, ids, r, phi, [alpha], cap, origin=origin, threads=threads)
    return ExcursionSample(alpha, st, n1, exc, ids, r, phi)


def rerun(config: GasConfig, sample: ExcursionSample, cap: int, *, origin=None, threads: int = 1) -> ExcursionSample:
    """Same starting points, possibly a different gas."""
    n1, st, exc, *_ = return_batch(config, sample.ids, sample.r, sample.phi, [sample.alpha], cap,
                                   origin=origin, threads=threads)
    return ExcursionSample(sample.alpha, st, n1, exc, sample.ids, sample.r, sample.phi)


def estimate_A_measure(config: GasConfig, alpha, R, n_samples: int, cap: int, rng: np.random.Generator, *,
                       threads: int = 1):
    """Normalized mu-measure of A(R) in Pi_alpha; ``R`` may be a float or a grid."""
    smp = excursion_sample(config, alpha, n_samples, cap, rng, threads=threads)
    if np.isscalar(R):
        if R < 0:
            raise ValueError("R must be non-negative")
        return smp.A_fraction(float(R))
    return [smp.A_fraction(float(x)) for x in R]


@dataclass(frozen=True)
class ChooseRResult:
    R: float
    complement: Proportion
    doublings: int
    history: tuple = ()

    def as_dict(self) -> dict:
        return {"R": self.R, "complement": self.complement.as_dict(), "doublings": self.doublings,
                "history": [{"R": R, "complement_ci_high": hi} for R, hi in self.history]}


def choose_R(config: GasConfig, alpha, eps: float, n_samples: int, cap: int, rng: np.random.Generator, *,
             R0: float | None = None, R_min: float = 0.0, threads: int = 1,
             sample: ExcursionSample | None = None) -> ChooseRResult:
    """Smallest R of the form R0 * 2^j (j <= 20) whose complement CI lies below eps.

    The initial guess R0 defaults to 10 * tau_M; R is also doubled until it
    exceeds ``R_min``.  One sample is reused for every candidate R, so the
    tested sets are nested.
    """
    if not (0.0 < eps <= 1.0):
        raise ValueError("eps must lie in (0, 1]")
    if R0 is None:
        if config.bounds is None or not math.isfinite(config.bounds.tau_M):
            raise ValueError("choose_R needs a finite tau_M or an explicit R0")
        R0 = 10.0 * config.bounds.tau_M
    smp = sample if sample is not None else excursion_sample(config, alpha, n_samples, cap, rng, threads=threads)
    R = float(R0)
    history = []
    for j in range(MAX_DOUBLINGS + 1):
        comp = smp.complement(R)
        history.append((R, comp.hi))
        if R > R_min and comp.hi <= eps:
            return ChooseRResult(R, comp, j, tuple(history))
        R *= 2.0
    nonret = int((smp.status != K.OK).sum())
    raise ChooseRError(
        f"no R up to {R / 2:.6g} brings the complement CI below {eps:g}: "
        f"{nonret}/{smp.n} samples did not return within cap {cap}; the Wilson floor at n = {smp.n} is "
        f"{wilson(0, smp.n).hi:.3g}"
    )


# ---------------------------------------------------------------------------
# annulus replacement policies


class IdentityPolicy:
    """Put every removed scatterer back unchanged."""

    name = "identity"

    def __call__(self, config, R, width, disks, rng, bounds):
        return [Disk(d.center, d.radius) for d in disks]


@dataclass
class JitterPolicy:
    """Perturb scatterers lying inside the closed annulus.

    Centers move by at most ``position_frac * tau_m``; radii are scaled by a
    factor from ``radius_range``.  A proposal is accepted only if the disk
    stays in the closed annulus and keeps a gap of at least ``bounds.tau_m``
    to every other scatterer; after ``tries`` rejections the disk is kept as
    it was.  Scatterers that stick out of the annulus are always restored
    unchanged, so nothing inside radius R moves.
    """

    position_frac: float = 0.1
    radius_range: tuple = (0.95, 1.05)
    tries: int = 20
    name: str = "jitter"

    def envelope(self, base: Bounds) -> Bounds:
        lo, hi = self.radius_range
        return Bounds(base.k_m / hi, base.k_M / lo, 0.5 * base.tau_m, 1.5 * base.tau_M, DECLARED)

    def __call__(self, config: GasConfig, R, width, disks, rng, bounds):
        O = np.array(config.origin)
        ids, cs, rs = config.materialize(O, R + width + 2 * config.max_diameter)
        cs = cs.copy()
        rs = rs.copy()
        index = {sid: q for q, sid in enumerate(ids)}
        step = self.position_frac * bounds.tau_m
        lo, hi = self.radius_range
        r_lo = 1.0 / bounds.k_M
        r_hi = 1.0 / bounds.k_m
        out = []
        for d in disks:
            q = index[d.label]
            dist = math.hypot(d.center[0] - O[0], d.center[1] - O[1])
            if dist - d.radius < R or dist + d.radius > R + width:
                out.append(Disk(d.center, d.radius))
                continue
            others = np.ones(len(rs), bool)
            others[q] = False
            accepted = False
            for _ in range(self.tries):
                ang = rng.uniform(0, 2 * math.pi)
                rr = step * math.sqrt(rng.random())
                c = np.array([d.center[0] + rr * math.cos(ang), d.center[1] + rr * math.sin(ang)])
                rad = d.radius * rng.uniform(lo, hi)
                rad = min(max(rad, r_lo), r_hi)
                dc = math.hypot(c[0] - O[0], c[1] - O[1])
                if dc - rad < R or dc + rad > R + width:
                    continue
                gaps = np.hypot(cs[others, 0] - c[0], cs[others, 1] - c[1]) - rs[others] - rad
                if gaps.min() < bounds.tau_m:
                    continue
                cs[q] = c
                rs[q] = rad
                out.append(Disk((c[0], c[1]), rad))
                accepted = True
                break
            if not accepted:
                out.append(Disk(d.center, d.radius))
        return out


POLICIES = {"jitter": JitterPolicy, "identity": IdentityPolicy}


@dataclass
class RoundLog:
    k: int
    R: float
    eps: float
    complement: Proportion
    complement_after: Proportion
    A_preserved: bool
    replacement: dict
    validation: dict

    def as_dict(self) -> dict:
        return {
            "k": self.k,
            "R": self.R,
            "eps": self.eps,
            "complement": self.complement.as_dict(),
            "complement_after": self.complement_after.as_dict(),
            "A_preserved": self.A_preserved,
            "replacement": self.replacement,
            "validation": self.validation,
        }


@dataclass
class AperiodicBuildLog:
    alpha: tuple
    rho_w: float
    policy: str
    rounds: list = field(default_factory=list)
    aborted: str | None = None

    def certifies(self) -> bool:
        """Radii separated by the annulus width and every complement CI below its eps."""
        ok = all(rd.complement.hi <= rd.eps for rd in self.rounds)
        for a, b in zip(self.rounds, self.rounds[1:]):
            ok = ok and b.R > a.R + self.rho_w
        return ok and self.aborted is None

    def as_dict(self) -> dict:
        return {"alpha": list(self.alpha), "rho_w": self.rho_w, "policy": self.policy,
                "rounds": [r.as_dict() for r in self.rounds], "aborted": self.aborted,
                "certified": self.certifies()}


def default_eps_schedule(K_rounds: int) -> list[float]:
    return [0.3 * 2.0 ** (-k) for k in range(K_rounds)]


def build_aperiodic(base: GasConfig, alpha, eps_schedule: Sequence[float] | None = None, rho_w: float | None = None,
                    K_rounds: int = 2, policy=None, rng: np.random.Generator | None = None, *,
                    n_samples: int = 2000, cap: int = DEFAULT_CAP, threads: int = 1):
    """Finite stage of the recursive annulus construction.

    Round k picks R_k with the complement of A_k(R_k) certified below eps_k
    (and R_k > R_{k-1} + rho_w), then rewrites the annulus [R_k, R_k + rho_w].
    After the rewrite the same sample is rerun to confirm that every point of
    A_k(R_k) kept its orbit.  Returns ``(config, log)``.
    """
    if not base.is_periodic:
        raise SceneError("build_aperiodic needs a periodic base gas")
    if _corridor_scan(base.lattice):
        raise SceneError("base gas has an open corridor (infinite horizon)")
    alpha = tuple(int(v) for v in alpha)
    rng = np.random.default_rng(0) if rng is None else rng
    policy = JitterPolicy() if policy is None else policy
    if eps_schedule is None:
        eps_schedule = default_eps_schedule(K_rounds)
    eps_schedule = [float(e) for e in eps_schedule][:K_rounds]
    if len(eps_schedule) < K_rounds:
        raise ValueError("eps schedule shorter than the number of rounds")
    if any(b >= a for a, b in zip(eps_schedule, eps_schedule[1:])) or any(e <= 0 for e in eps_schedule):
        raise ValueError("eps schedule must be positive and strictly decreasing")
    if rho_w is None:
        rho_w = 3.0 * base.bounds.tau_M
    origin = tuple(float(v) for v in base.disk(alpha).center)
    cfg = replace(base, origin=origin)
    if hasattr(policy, "envelope"):
        cfg = replace(cfg, bounds=policy.envelope(base.bounds))
    log_ = AperiodicBuildLog(alpha, float(rho_w), getattr(policy, "name", type(policy).__name__))
    if K_rounds == 0:
        return base, log_
    R_prev = -math.inf
    for k in range(K_rounds):
        smp = excursion_sample(cfg, alpha, n_samples, cap, rng, threads=threads)
        try:
            ch = choose_R(cfg, alpha, eps_schedule[k], n_samples, cap, rng, R0=10.0 * base.bounds.tau_M,
                          R_min=R_prev + rho_w, sample=smp)
        except ChooseRError as exc:
            log_.aborted = f"round {k}: {exc}"
            raise
        R = ch.R
        ids, cs, rs = cfg.materialize(cfg.origin, R + rho_w + cfg.max_diameter)
        O = np.array(cfg.origin)
        dist = np.hypot(*(cs - O).T)
        meets = (dist + rs > R) & (dist - rs < R + rho_w)
        old = [Disk((c[0], c[1]), r, sid) for sid, c, r, m in zip(ids, cs, rs, meets) if m]
        repl = policy(cfg, R, rho_w, old, rng, cfg.bounds)
        try:
            new_cfg, report = modify_annulus(cfg, R, rho_w, repl, rng)
        except SceneError as exc:
            log_.aborted = f"round {k}: {exc}"
            raise
        after = rerun(new_cfg, smp, cap, threads=threads)
        kept = smp.in_A(R)
        preserved = bool(np.all(after.in_A(R)[kept]) and np.array_equal(after.n1[kept], smp.n1[kept])
                         and np.array_equal(after.excursion[kept], smp.excursion[kept]))
        moved = sum(1 for a, b in zip(old, repl) if not (a.center == b.center and a.radius == b.radius))
        summary = {"candidates": len(old), "changed": moved, "restored": len(old) - moved}
        log_.rounds.append(RoundLog(k, R, eps_schedule[k], ch.complement, after.complement(R), preserved, summary,
                                    _jsonable(report)))
        cfg = new_cfg
        R_prev = R
    return cfg, log_


def _jsonable(d: dict) -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, tuple):
            v = list(v)
        if isinstance(v, float) and not math.isfinite(v):
            v = None
        out[k] = v
    return out


# ---------------------------------------------------------------------------
# recurrence statistics


@dataclass
class RecurrenceResult:
    checkpoints: list
    fractions: list  # Proportion per checkpoint
    excluded: dict
    n_samples: int

    def monotone(self) -> bool:
        p = [f.p for f in self.fractions]
        return all(b >= a for a, b in zip(p, p[1:]))

    def strictly_increasing(self) -> bool:
        p = [f.p for f in self.fractions]
        return all(b > a for a, b in zip(p, p[1:]))

    def as_dict(self) -> dict:
        return {"checkpoints": [int(c) for c in self.checkpoints],
                "fractions": [f.as_dict() for f in self.fractions],
                "excluded": self.excluded, "n_samples": self.n_samples,
                "monotone": self.monotone()}


def recurrence_fraction(config: GasConfig, target, N: int, n_samples: int, rng: np.random.Generator, *,
                        threads: int = 1) -> RecurrenceResult:
    """Fraction of mu-random starts on ``target`` that re-enter it within N' steps.

    Checkpoints are N//8, N//4, N//2 and N.  Orbits stopped by a singular
    collision or by the flight cap before returning are left out of the
    denominator; escape to infinity from a finite gas is a genuine
    non-return and stays in.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if target is None or target == "all":
        pool = [(0, 0, 0)] if config.lattice is not None else [(config.alive_added[0], 0, -1)]
    else:
        pool = [target] if isinstance(target, tuple) and isinstance(target[0], (int, np.integer)) else list(target)
    ids, r, phi = sample_arrays(config, pool, n_samples, rng)
    n1, st, *_ = return_batch(config, ids, r, phi, target, N, threads=threads)
    dropped = (st == K.SINGULAR) | (st == K.NOHIT)
    denom = int((~dropped).sum())
    cps = [N // 8, N // 4, N // 2, N]
    fr = [wilson(int(((st == K.OK) & (n1 <= c)).sum()), denom) for c in cps]
    excluded = {"singular": int((st == K.SINGULAR).sum()), "horizon": int((st == K.NOHIT).sum()),
                "escaped": int((st == K.ESCAPED).sum()), "exceeded": int((st == K.EXCEEDED).sum())}
    return RecurrenceResult(cps, fr, excluded, int(n_samples))


# ---------------------------------------------------------------------------
# Birkhoff averages of the first-return map


def _f_const(r, phi, tau, L):
    return np.ones_like(r)


def _f_sin(r, phi, tau, L):
    return np.sin(phi)


def _f_cos_r(r, phi, tau, L):
    return np.cos(2 * math.pi * r / L)


def _f_tau(r, phi, tau, L):
    return tau


OBSERVABLES: dict[str, Callable] = {"one": _f_const, "f1": _f_sin, "f2": _f_cos_r, "f3": _f_tau}


@dataclass
class BirkhoffResult:
    observable: str
    requested: int
    forward: float
    backward: float
    n_forward: int
    n_backward: int
    se_forward: float
    se_backward: float
    steps_forward: int
    steps_backward: int

    @property
    def complete(self) -> bool:
        return self.n_forward >= self.requested and self.n_backward >= self.requested

    def agree(self, z: float = 2.0) -> bool:
        se = math.hypot(self.se_forward, self.se_backward)
        return bool(abs(self.forward - self.backward) <= z * se)

    def as_dict(self) -> dict:
        return {"observable": self.observable, "requested": self.requested, "forward": self.forward,
                "backward": self.backward, "n_forward": self.n_forward, "n_backward": self.n_backward,
                "se_forward": self.se_forward, "se_backward": self.se_backward,
                "steps_forward": self.steps_forward, "steps_backward": self.steps_backward,
                "complete": self.complete, "agree_2se": self.agree()}


def _return_values(config, x: PhasePoint, N: int, budget: int):
    S = config.arrays
    cnt, steps, st, rs, phis, tout, tin = K.collect_returns(S, *x.alpha, x.r, x.phi, *x.alpha, int(N), int(budget))
    cnt = int(cnt)
    L = 2 * math.pi * K.disk_of(S, *x.alpha)[2]
    return cnt, int(steps), rs[:cnt], phis[:cnt], tout[:cnt], tin[:cnt], L


def birkhoff_average(config: GasConfig, alpha, observable: str, x0: PhasePoint, N: int, *,
                     budget: int | None = None) -> BirkhoffResult:
    """Forward and backward averages of an observable along the return map to alpha.

    Forward uses x0, T_a x0, ..., T_a^{N-1} x0; backward uses x0, T_a^{-1} x0,
    ... obtained from the forward orbit of I(x0).  ``f3`` is the free path
    of the next flight, which for a backward iterate I(y) is the flight that
    arrived at y.  Fewer than N returns within the budget (default 1000 N
    steps per direction) yield partial averages with their counts.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    if observable not in OBSERVABLES:
        raise ValueError(f"unknown observable {observable!r}; choose from {sorted(OBSERVABLES)}")
    alpha = tuple(int(v) for v in alpha)
    if tuple(x0.alpha) != alpha:
        raise ValueError("x0 must lie on the cross-section of alpha")
    fn = OBSERVABLES[observable]
    budget = 1000 * N if budget is None else int(budget)

    n_f, steps_f, rs, phis, tout, _, L = _return_values(config, x0, N, budget)
    vals_f = fn(rs, phis, tout, L)

    n_b, steps_b, rb, pb, _, tin_b, _ = _return_values(config, involution(x0), N, budget)
    tau_b = tin_b.copy()
    if n_b:
        tau_b[0] = tout[0] if len(tout) else math.nan
    vals_b = fn(rb, math.pi - pb, tau_b, L)
    if observable == "f3":
        # the last forward visit may not have left yet
        vals_f = vals_f[np.isfinite(vals_f)]
        vals_b = vals_b[np.isfinite(vals_b)]
    mf, sf = mean_se(vals_f)
    mb, sb = mean_se(vals_b)
    return BirkhoffResult(observable, int(N), mf, mb, int(len(vals_f)), int(len(vals_b)), sf, sb, steps_f, steps_b)
