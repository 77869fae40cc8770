import math

import numpy as np
import pytest
from scipy.optimize import minimize

from lorentzgas.errors import SceneError
from lorentzgas.geometry import Disk
from lorentzgas.recurrence import IdentityPolicy
from lorentzgas.scene import (Bounds, LatticeSpec, NoHit, build_finite, build_periodic, estimate_horizon,
                              finite_modification, free_flight, modify_annulus)

H = 2.2 * math.sqrt(3) / 2
TRI = LatticeSpec(((2.2, 0.0), (1.1, H)), (Disk((0.0, 0.0), 1.0),))


def brute_tau_max(spacing, radius):
    """Longest free flight from one disk of a triangular lattice, by direct search.

    Plain numpy ray casting against the surrounding disks, a coarse grid over
    (r, phi), then Nelder-Mead polishing of the best grid points.
    """
    h = spacing * math.sqrt(3) / 2
    C = np.array([[i * spacing + j * spacing / 2, j * h] for i in range(-4, 5) for j in range(-4, 5)
                  if (i, j) != (0, 0)])

    def free(x):
        th, phi = x[0] / radius, x[1]
        p = radius * np.array([math.cos(th), -math.sin(th)])
        t = np.array([-math.sin(th), -math.cos(th)])
        n = np.array([math.cos(th), -math.sin(th)])
        d = math.cos(phi) * t + math.sin(phi) * n
        w = p - C
        b = w @ d
        disc = b * b - (np.sum(w * w, axis=1) - radius ** 2)
        ok = (disc >= 0) & (b < 0)
        return float(np.min(-b[ok] - np.sqrt(disc[ok]))) if ok.any() else math.inf

    R = np.linspace(0, 2 * math.pi * radius, 300, endpoint=False)
    P = np.linspace(1e-3, math.pi - 1e-3, 300)
    V = np.array([[free((r, p)) for p in P] for r in R])
    best = 0.0
    for k in np.argsort(V.ravel())[::-1][:20]:
        x = np.array([R[k // len(P)], P[k % len(P)]])
        for _ in range(3):
            res = minimize(lambda v: -free(v), x, method="Nelder-Mead",
                           options={"xatol": 1e-13, "fatol": 1e-15, "maxiter": 4000})
            x = res.x
        best = max(best, -res.fun)
    return best


def test_triangular_bounds(triangular):
    b = triangular.bounds
    assert b.k_m == b.k_M == 1.0
    assert b.tau_m == pytest.approx(0.2, abs=1e-12)
    # frozen value, checked against an independent search below
    assert b.tau_M == pytest.approx(2.247549109077, abs=1e-9)
    assert b.provenance == "estimated"


@pytest.mark.slow
def test_triangular_tau_max_matches_brute_force(triangular):
    assert brute_tau_max(2.2, 1.0) == pytest.approx(triangular.bounds.tau_M, abs=1e-7)


def test_two_disk_bounds(two_disk):
    b = two_disk.bounds
    assert b.tau_m == pytest.approx(2.0)
    assert math.isinf(b.tau_M)


def test_square_lattice_has_corridors(square):
    rep = estimate_horizon(square, 8.0, 2000, np.random.default_rng(0), n_angles=500)
    assert rep.corridor_found
    assert {tuple(d) for d in rep.corridor_directions} >= {(1, 0), (0, 1), (1, 1), (-1, 1)}


def test_triangular_has_no_corridor(triangular):
    rep = estimate_horizon(triangular, 5.0, 2000, np.random.default_rng(0), n_angles=500)
    assert not rep.corridor_found
    assert rep.nohit == 0
    assert rep.tau_min_observed >= 0.2 - 1e-12
    assert rep.tau_max_observed <= triangular.bounds.tau_M + 1e-9


@pytest.mark.parametrize("basis", [((1.0, 0.0), (2.0, 0.0)), ((0.0, 0.0), (0.0, 1.0))])
def test_degenerate_basis(basis):
    with pytest.raises(SceneError, match="degenerate"):
        LatticeSpec(basis, (Disk((0, 0), 0.1),))


def test_overlapping_motif_names_both_disks():
    spec = LatticeSpec(((4.0, 0.0), (0.0, 4.0)), (Disk((0.0, 0.0), 1.0), Disk((1.5, 0.0), 1.0)))
    with pytest.raises(SceneError) as exc:
        build_periodic(spec)
    msg = str(exc.value)
    assert "(0, 0, 0)" in msg and "(0, 0, 1)" in msg


def test_motif_overlapping_its_translate():
    with pytest.raises(SceneError, match="overlap"):
        build_periodic(LatticeSpec(((1.5, 0.0), (0.0, 4.0)), (Disk((0.0, 0.0), 1.0),)))


def test_declared_bounds_are_checked():
    with pytest.raises(SceneError):
        build_periodic(TRI, declared=Bounds(2.0, 3.0, 0.1, 3.0, "declared"))
    with pytest.raises(SceneError):
        build_periodic(TRI, declared=Bounds(0.5, 1.5, 0.1, 1.0, "declared"))
    ok = build_periodic(TRI, declared=Bounds(0.5, 1.5, 0.1, 3.0, "declared"))
    assert ok.bounds.provenance == "declared"


def test_materialize_is_sorted_and_consistent(triangular):
    ids, cs, rs = triangular.materialize((0.3, -0.2), 6.0)
    assert ids == sorted(ids)
    for sid, c in zip(ids, cs):
        assert triangular.disk(sid).center == pytest.approx(tuple(c))
    ids2, _, _ = triangular.materialize((0.3, -0.2), 6.0)
    assert ids == ids2


@pytest.mark.parametrize("shift", [(1, 0), (0, 1), (-3, 2), (7, -5)])
def test_translation_equivariance(triangular, shift):
    rng = np.random.default_rng(sum(shift) + 10)
    B = triangular.lattice.matrix
    v = B @ np.array(shift, float)
    for _ in range(20):
        a = rng.uniform(0, 2 * math.pi)
        o = np.array([0.0, 1.3]) + rng.uniform(-0.05, 0.05, 2)
        d = (math.cos(a), math.sin(a))
        h1 = free_flight(triangular, o, d)
        h2 = free_flight(triangular, o + v, d)
        assert h2.scatterer == (h1.scatterer[0] + shift[0], h1.scatterer[1] + shift[1], h1.scatterer[2])
        assert h2.hit.distance == pytest.approx(h1.hit.distance, abs=1e-9)


def test_free_flight_escape(two_disk):
    res = free_flight(two_disk, (2.0, 0.0), (0.0, 1.0))
    assert isinstance(res, NoHit) and res.escaped


def test_finite_modification_removes_and_adds(triangular, finite_mod):
    assert not finite_mod.has((0, 0, 0))
    assert finite_mod.has((0, 0, -1)) and finite_mod.has((1, 0, 0))
    assert finite_mod.disk((0, 0, -1)).radius == 0.95
    assert finite_mod.bounds.k_M == pytest.approx(1 / 0.95)
    assert finite_mod.bounds.tau_M >= triangular.bounds.tau_M


def test_finite_modification_rejects_overlap(triangular):
    with pytest.raises(SceneError):
        finite_modification(triangular, [], [Disk((1.1, 0.0), 0.3)])
    with pytest.raises(SceneError):
        finite_modification(triangular, [(0, 0, 5)], [])


def test_build_finite_requires_disjoint():
    with pytest.raises(SceneError):
        build_finite([Disk((0, 0), 1), Disk((1.5, 0), 1)])


def test_identity_annulus_rewrite_keeps_the_gas(triangular):
    cfg, rep = modify_annulus(triangular, 10.0, 3.0, _ring(triangular, 10.0, 3.0))
    assert rep["removed"] == 0 and rep["restored"] > 0
    assert cfg.same_scatterers(triangular)


def _ring(cfg, R, w):
    return IdentityPolicy()(cfg, R, w, [cfg.disk(s) for s in _meeting(cfg, R, w)], None, cfg.bounds)


def _meeting(cfg, R, w):
    ids, cs, rs = cfg.materialize(cfg.origin, R + w + 2)
    d = np.hypot(*(cs - np.array(cfg.origin)).T)
    return [s for s, dd, r in zip(ids, d, rs) if dd + r > R and dd - r < R + w]


def test_annulus_rules(triangular):
    ring = _ring(triangular, 10.0, 3.0)
    with pytest.raises(SceneError, match="outside the annulus"):
        modify_annulus(triangular, 10.0, 3.0, ring + [Disk((30.0, 0.0), 0.5)])
    cfg, _ = modify_annulus(triangular, 10.0, 3.0, ring)
    with pytest.raises(SceneError, match="overlaps or precedes"):
        modify_annulus(cfg, 12.0, 3.0, [])


def test_emptying_an_annulus_opens_a_corridor_or_breaks_bounds(triangular):
    # deleting everything meeting a wide annulus leaves long free flights
    with pytest.raises(SceneError):
        modify_annulus(replace_bounds_declared(triangular), 10.0, 6.0, [])


def replace_bounds_declared(cfg):
    from dataclasses import replace

    return replace(cfg, bounds=replace(cfg.bounds, provenance="declared"))
