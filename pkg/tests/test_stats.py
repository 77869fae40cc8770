import math

import numpy as np
import pytest

from lorentzgas.runtime import chunk_bounds, concat, map_chunks, task_rng
from lorentzgas.stats import batch_means_se, mean_se, relative_quadratic_residual


def test_task_rng_is_reproducible_and_label_keyed():
    a = task_rng(7, "x", 3).random(5)
    b = task_rng(7, "x", 3).random(5)
    c = task_rng(7, "x", 4).random(5)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, task_rng(8, "x", 3).random(5))


@pytest.mark.parametrize("n, threads", [(0, 4), (1, 1), (100, 3), (10_000, 8)])
def test_chunks_cover_the_range(n, threads):
    parts = chunk_bounds(n, threads)
    assert sum(b - a for a, b in parts) == n
    assert all(p[1] == q[0] for p, q in zip(parts, parts[1:]))


def test_map_chunks_order_does_not_depend_on_threads():
    def fn(a, b):
        return (np.arange(a, b) ** 2,)

    one = concat(map_chunks(fn, 5000, 1))
    many = concat(map_chunks(fn, 5000, 6))
    np.testing.assert_array_equal(one[0], many[0])
    assert concat([]) == ()


def test_mean_se():
    m, se = mean_se([1.0, 2.0, 3.0, 4.0])
    assert m == 2.5
    assert se == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2)
    assert math.isnan(mean_se([1.0])[1])


def test_batch_means_falls_back_for_short_series():
    x = np.arange(10.0)
    assert batch_means_se(x) == mean_se(x)
    m, se = batch_means_se(np.ones(400))
    assert m == 1.0 and se == 0.0


def test_quadratic_residual_of_exact_quadratic():
    n = np.arange(1, 9)
    coef, res = relative_quadratic_residual(n, 3 * n ** 2 - n + 2)
    np.testing.assert_allclose(coef, [3, -1, 2], atol=1e-9)
    assert res < 1e-12
