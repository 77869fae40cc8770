import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lorentzgas import checks
from lorentzgas.dynamics import (NonHyperbolicWarning, PhasePoint, TangentVec, billiard_map, expansion_constant,
                                 increasing_norm, inverse_map, involution, jacobian, jacobian_matrix,
                                 lyapunov_estimate, measure_sample, orbit, propagate_tangent)
from lorentzgas.errors import GeometryError, HorizonExceeded, SingularStep
from lorentzgas.geometry import phase_to_ray, ray_intersect, ray_to_phase
from lorentzgas.runtime import task_rng
from lorentzgas.scene import Bounds

HEAD_ON = PhasePoint((0, 0, -1), 0.0, math.pi / 2)


def slow_step(config, x):
    """Reference billiard step from the pure-python geometry helpers."""
    d = config.disk(x.alpha)
    o, v = phase_to_ray(d, x.r, x.phi)
    best = None
    for sid in config.materialize(o, 60.0)[0]:
        if sid == x.alpha:
            continue
        hit = ray_intersect(config.disk(sid), o, v)
        if hit.hit and (best is None or hit.distance < best[1].distance):
            best = (sid, hit)
    sid, hit = best
    r1, phi1 = ray_to_phase(config.disk(sid), hit.r_hit, v)
    return sid, r1, phi1, hit.distance


def test_head_on_two_disk_step(two_disk):
    step = billiard_map(two_disk, HEAD_ON)
    assert step.next.alpha == (1, 0, -1)
    assert step.next.r == pytest.approx(math.pi)
    assert step.next.phi == pytest.approx(math.pi / 2)
    assert step.tau == pytest.approx(2.0)
    assert step.grazing_margin == pytest.approx(1.0)


def test_head_on_jacobian(two_disk):
    J = jacobian(two_disk, HEAD_ON)
    np.testing.assert_allclose(J, [[-3.0, 2.0], [4.0, -3.0]], atol=1e-12)
    assert np.linalg.det(J) == pytest.approx(1.0)
    v = J @ np.array([1.0, -1.0])
    np.testing.assert_allclose(v, [-5.0, 7.0], atol=1e-12)
    # |(-5, 7)| / |(1, -1)| = sqrt(74) / sqrt(2)
    assert increasing_norm(math.pi / 2, v) / increasing_norm(math.pi / 2, (1.0, -1.0)) == pytest.approx(
        math.sqrt(37))


def test_head_on_expansion_rate(two_disk):
    _, u1, total = propagate_tangent(two_disk, HEAD_ON, (1.0, -1.0), 1)
    assert total == pytest.approx(math.log(math.sqrt(37)))
    assert u1.in_cone
    # long-run growth along the period-2 orbit is the spectral radius 3 + 2 sqrt 2
    J = jacobian_matrix(1.0, 1.0, 2.0, 1.0, 1.0)
    assert max(abs(np.linalg.eigvals(J))) == pytest.approx(3 + 2 * math.sqrt(2))


@pytest.mark.parametrize("k, k1, tau, s, s1", [(1.0, 1.0, 0.3, 0.4, 0.9), (2.0, 0.5, 1.7, 0.99, 0.05),
                                               (0.7, 1.3, 0.01, 0.2, 0.6)])
def test_jacobian_determinant_identity(k, k1, tau, s, s1):
    J = jacobian_matrix(k, k1, tau, s, s1)
    assert np.linalg.det(J) == pytest.approx(s / s1, rel=1e-12)


@pytest.mark.parametrize("scene", ["triangular", "finite_mod"])
def test_kernel_step_matches_reference(scene, request):
    cfg = request.getfixturevalue(scene)
    rng = task_rng(1, "ref", scene)
    pool = checks.sample_pool(cfg, 10)
    for x in measure_sample(cfg, pool, 50, rng):
        step = billiard_map(cfg, x)
        sid, r1, phi1, tau = slow_step(cfg, x)
        assert step.next.alpha == sid
        assert step.next.r == pytest.approx(r1, abs=1e-9)
        assert step.next.phi == pytest.approx(phi1, abs=1e-9)
        assert step.tau == pytest.approx(tau, abs=1e-9)


@pytest.mark.parametrize("scene", ["triangular", "finite_mod"])
def test_jacobian_against_reference_differences(scene, request):
    cfg = request.getfixturevalue(scene)
    rng = task_rng(2, "fd", scene)
    h = 1e-6
    worst = 0.0
    for x in measure_sample(cfg, checks.sample_pool(cfg, 10), 60, rng):
        if math.sin(x.phi) < 0.2:
            continue
        step = billiard_map(cfg, x)
        if step.grazing_margin < 0.2:
            continue
        L1 = cfg.disk(step.next.alpha).length
        cols = []
        for dr, dp in ((h, 0.0), (0.0, h)):
            a = slow_step(cfg, PhasePoint(x.alpha, x.r + dr, x.phi + dp))
            b = slow_step(cfg, PhasePoint(x.alpha, x.r - dr, x.phi - dp))
            assert a[0] == b[0] == step.next.alpha
            d_r = (a[1] - b[1] + L1 / 2) % L1 - L1 / 2
            cols.append((d_r / (2 * h), (a[2] - b[2]) / (2 * h)))
        fd = np.array(cols).T
        J = step.jacobian
        worst = max(worst, np.linalg.norm(fd - J) / np.linalg.norm(J))
    assert worst < 1e-6


def test_inverse_map_undoes_the_step(triangular):
    rng = task_rng(3, "inv")
    for x in measure_sample(triangular, [(0, 0, 0)], 200, rng):
        y = billiard_map(triangular, x).next
        back = inverse_map(triangular, y).next
        assert back.alpha == x.alpha
        assert back.r == pytest.approx(x.r, abs=1e-9)
        assert back.phi == pytest.approx(x.phi, abs=1e-9)


@settings(max_examples=300, deadline=None)
@given(st.floats(-100, 100), st.floats(1e-9, math.pi, exclude_max=True))
def test_involution_is_exact(r, phi):
    x = PhasePoint((0, 0, 0), r, phi)
    y = involution(involution(x))
    assert y == x and y.phi == x.phi and y.phi_mirror == x.phi_mirror


def test_phase_point_rejects_boundary():
    with pytest.raises(GeometryError):
        PhasePoint((0, 0, 0), 0.0, 0.0)


def test_tangent_start_is_singular(two_disk):
    # the ray leaving (0, 0, -1) at r = pi/2 along the tangent grazes the other disk
    x = PhasePoint((0, 0, -1), math.pi / 2, 1e-12)
    with pytest.raises((SingularStep, HorizonExceeded)):
        billiard_map(two_disk, x)


def test_grazing_neighbor_raises_singular(two_disk):
    # from (2, 1 - ...) aim tangent to disk 1: construct via the top of disk 0
    x = PhasePoint((0, 0, -1), 3 * math.pi / 2, math.pi - 1e-15)
    with pytest.raises((SingularStep, HorizonExceeded)):
        billiard_map(two_disk, x)


def test_escape_raises(two_disk):
    x = PhasePoint((0, 0, -1), math.pi, math.pi / 2)
    with pytest.raises(HorizonExceeded) as exc:
        billiard_map(two_disk, x)
    assert exc.value.escaped


def test_escape_mid_propagation_reports_partial(two_disk):
    x = PhasePoint((0, 0, -1), 0.05, math.pi / 2)
    with pytest.raises(HorizonExceeded) as exc:
        propagate_tangent(two_disk, x, (1.0, -1.0), 100)
    assert exc.value.index >= 1
    assert exc.value.partial is not None


def test_expansion_constant_warns_when_not_hyperbolic():
    with pytest.warns(NonHyperbolicWarning):
        assert expansion_constant(Bounds(0.0, 1.0, 0.5, 2.0, "declared")) == 1.0
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert expansion_constant(Bounds(1.0, 1.0, 0.2, 2.0, "declared")) == pytest.approx(1.2)


@pytest.mark.parametrize("scene", ["triangular", "finite_mod"])
def test_lyapunov_forward_and_reverse_exceed_log_lambda(scene, request):
    cfg = request.getfixturevalue(scene)
    lam = expansion_constant(cfg)
    x = measure_sample(cfg, [(1, 0, 0)], 1, task_rng(4, "x0"))[0]
    fwd = lyapunov_estimate(cfg, x, 3000, task_rng(4, "u"))
    rev = lyapunov_estimate(cfg, x, 3000, task_rng(4, "u"), reverse=True)
    assert fwd.steps == rev.steps == 3000
    assert fwd.estimate > math.log(lam) and rev.estimate > math.log(lam)
    assert rev.reverse


def test_cone_vectors_stay_in_cone(triangular):
    x = measure_sample(triangular, [(0, 0, 0)], 1, task_rng(5))[0]
    u = TangentVec(0.3, -2.0)
    for _ in range(50):
        x, u, _ = propagate_tangent(triangular, x, u, 1)
        assert u.in_cone


def test_orbit_arrays_are_consistent(triangular):
    x = measure_sample(triangular, [(0, 0, 0)], 1, task_rng(6))[0]
    orb = orbit(triangular, x, 40)
    assert orb.steps == 40 and orb.status == "ok"
    for k in range(40):
        step = billiard_map(triangular, orb.point(k))
        assert step.next.alpha == tuple(orb.ids[k + 1])
        assert step.tau == pytest.approx(orb.tau[k], rel=1e-12)


def test_measure_sample_law(triangular):
    pts = measure_sample(triangular, [(0, 0, 0)], 20000, task_rng(7))
    phi = np.array([p.phi for p in pts])
    r = np.array([p.r for p in pts])
    # E[phi] = pi/2, E[cos^2 phi] = 1/3 under sin(phi)/2
    assert phi.mean() == pytest.approx(math.pi / 2, abs=0.02)
    assert np.mean(np.cos(phi) ** 2) == pytest.approx(1 / 3, abs=0.01)
    assert r.min() >= 0 and r.max() < 2 * math.pi
