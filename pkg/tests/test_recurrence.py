import math

import numpy as np
import pytest
from scipy.stats import binomtest

from lorentzgas.dynamics import PhasePoint
from lorentzgas.errors import ChooseRError, SceneError
from lorentzgas.recurrence import (ESCAPED, RETURNED, IdentityPolicy, JitterPolicy, birkhoff_average,
                                   build_aperiodic, choose_R, default_eps_schedule, excursion_sample,
                                   first_return, recurrence_fraction, return_batch)
from lorentzgas.runtime import task_rng
from lorentzgas.stats import wilson

HEAD_ON = PhasePoint((0, 0, -1), 0.0, math.pi / 2)


@pytest.mark.parametrize("k, n", [(0, 10), (1, 10), (7, 10), (10, 10), (37, 1000), (999, 1000), (5000, 12345)])
def test_wilson_matches_scipy(k, n):
    ref = binomtest(k, n).proportion_ci(method="wilson")
    got = wilson(k, n)
    assert got.lo == pytest.approx(ref.low, abs=1e-12)
    assert got.hi == pytest.approx(ref.high, abs=1e-12)


def test_head_on_returns_in_two(two_disk):
    rec = first_return(two_disk, HEAD_ON, (0, 0, -1), 10)
    assert rec.status == RETURNED and rec.n1 == 2
    # the only intermediate collision is (3, 0), one unit from the origin (2, 0)
    assert rec.excursion == pytest.approx(1.0)
    assert rec.x_ret.phi == pytest.approx(math.pi / 2)


def test_off_axis_two_disk_escapes(two_disk):
    assert first_return(two_disk, PhasePoint((0, 0, -1), 0.3, 1.0), (0, 0, -1), 10).status == ESCAPED


def test_cap_must_be_positive(triangular):
    with pytest.raises(ValueError):
        first_return(triangular, PhasePoint((0, 0, 0), 0.3, 1.0), (0, 0, 0), 0)


def test_any_target_returns_at_once(triangular):
    rec = first_return(triangular, PhasePoint((0, 0, 0), 0.3, 1.0), "all", 10)
    assert rec.n1 == 1


def test_return_batch_is_thread_independent(triangular):
    rng = task_rng(9, "threads")
    n = 3000
    r = rng.uniform(0, 2 * math.pi, n)
    phi = np.arccos(1 - 2 * rng.random(n))
    ids = np.zeros((n, 3), np.int64)
    one = return_batch(triangular, ids, r, phi, [(0, 0, 0)], 500, threads=1)
    four = return_batch(triangular, ids, r, phi, [(0, 0, 0)], 500, threads=4)
    for a, b in zip(one, four):
        np.testing.assert_array_equal(a, b)


def test_A_sets_are_nested(triangular):
    smp = excursion_sample(triangular, (0, 0, 0), 2000, 2000, task_rng(1, "A"))
    prev = np.zeros(smp.n, bool)
    for R in (2.0, 5.0, 10.0, 20.0, 40.0, 80.0):
        cur = smp.in_A(R)
        assert np.all(cur[prev])
        prev = cur
    assert smp.A_fraction(80.0).p > 0.9


def test_choose_R_meets_eps(triangular):
    smp = excursion_sample(triangular, (0, 0, 0), 2000, 5000, task_rng(2, "R"))
    res = choose_R(triangular, (0, 0, 0), 0.2, 2000, 5000, None, sample=smp)
    assert res.complement.hi <= 0.2
    # one doubling less would not have been enough
    if res.doublings:
        assert smp.complement(res.R / 2).hi > 0.2


def test_choose_R_reports_the_wilson_floor(triangular):
    smp = excursion_sample(triangular, (0, 0, 0), 50, 5000, task_rng(2, "R"))
    with pytest.raises(ChooseRError, match="Wilson floor"):
        choose_R(triangular, (0, 0, 0), 0.01, 50, 5000, None, sample=smp)


def test_choose_R_needs_finite_horizon(two_disk):
    with pytest.raises(ValueError):
        choose_R(two_disk, (0, 0, -1), 0.1, 10, 10, np.random.default_rng(0))


def test_two_disk_recurrence_is_rare(two_disk):
    res = recurrence_fraction(two_disk, (0, 0, -1), 80, 2000, task_rng(3))
    assert res.monotone()
    # escapes stay in the denominator
    assert res.fractions[-1].n == 2000 and res.fractions[-1].p < 0.05
    assert res.excluded["escaped"] > 1900


def test_lattice_recurrence_is_monotone(triangular):
    res = recurrence_fraction(triangular, (0, 0, 0), 4000, 2000, task_rng(4))
    assert res.checkpoints == [500, 1000, 2000, 4000]
    assert res.monotone() and res.fractions[-1].p > 0.9


@pytest.mark.parametrize("schedule", [[0.1, 0.2], [0.2, 0.0], [0.3]])
def test_bad_eps_schedules(triangular, schedule):
    with pytest.raises(ValueError):
        build_aperiodic(triangular, (0, 0, 0), schedule, K_rounds=2)


def test_default_schedule_halves():
    assert default_eps_schedule(3) == [0.3, 0.15, 0.075]


def test_build_rejects_non_periodic_and_corridor(two_disk, square, finite_mod):
    for cfg in (two_disk, square, finite_mod):
        with pytest.raises(SceneError):
            build_aperiodic(cfg, (0, 0, 0))


def test_identity_build_keeps_the_gas(triangular):
    cfg, log = build_aperiodic(triangular, (0, 0, 0), [0.3], K_rounds=1, policy=IdentityPolicy(),
                               rng=task_rng(5, "build"), n_samples=600, cap=20000)
    rd = log.rounds[0]
    assert log.certifies() and rd.A_preserved
    assert rd.replacement["changed"] == 0
    assert rd.complement_after.k == rd.complement.k
    assert cfg.same_scatterers(triangular)


def test_jitter_envelope_widens_bounds(triangular):
    env = JitterPolicy().envelope(triangular.bounds)
    b = triangular.bounds
    assert env.k_m < b.k_m and env.k_M > b.k_M
    assert env.tau_m == pytest.approx(0.5 * b.tau_m) and env.tau_M == pytest.approx(1.5 * b.tau_M)


def test_birkhoff_constant_observable(triangular):
    x0 = PhasePoint((0, 0, 0), 0.3, 1.0)
    res = birkhoff_average(triangular, (0, 0, 0), "one", x0, 3, budget=50000)
    assert res.forward == 1.0 and res.backward == 1.0
    assert res.n_forward >= 1 and res.n_backward >= 1


def test_birkhoff_input_checks(triangular):
    x0 = PhasePoint((0, 0, 0), 0.3, 1.0)
    with pytest.raises(ValueError):
        birkhoff_average(triangular, (0, 0, 0), "f9", x0, 3)
    with pytest.raises(ValueError):
        birkhoff_average(triangular, (1, 0, 0), "f1", x0, 3)
    with pytest.raises(ValueError):
        birkhoff_average(triangular, (0, 0, 0), "f1", x0, 0)
