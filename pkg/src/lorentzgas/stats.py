"""Small statistics helpers: binomial intervals, standard errors, KS tests."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as _st

Z95 = 1.959963984540054


@dataclass(frozen=True)
class Proportion:
    """Binomial proportion ``k / n`` with a Wilson 95% interval."""

    k: int
    n: int
    lo: float
    hi: float

    @property
    def p(self) -> float:
        return self.k / self.n if self.n else math.nan

    def scaled(self, c: float) -> tuple[float, float, float]:
        return self.p * c, self.lo * c, self.hi * c

    def as_dict(self) -> dict:
        return {"estimate": self.p, "ci_low": self.lo, "ci_high": self.hi, "count": self.k, "n": self.n}


def wilson(k: int, n: int, z: float = Z95) -> Proportion:
    k, n = int(k), int(n)
    if n <= 0:
        return Proportion(k, n, 0.0, 1.0)
    p = k / n
    den = 1.0 + z * z / n
    mid = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    lo, hi = max(0.0, mid - half), min(1.0, mid + half)
    if k == 0:
        lo = 0.0
    if k == n:
        hi = 1.0
    return Proportion(k, n, lo, hi)


def mean_se(x) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    if len(x) < 2:
        return (float(x.mean()) if len(x) else math.nan), math.nan
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(len(x)))


def batch_means_se(x, n_batches: int = 20) -> tuple[float, float]:
    """Mean and a batch-means standard error for a correlated series."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 2 * n_batches:
        return mean_se(x)
    b = n // n_batches
    means = x[: b * n_batches].reshape(n_batches, b).mean(axis=1)
    return float(x.mean()), float(means.std(ddof=1) / math.sqrt(n_batches))


def ks_2samp(a, b) -> tuple[float, float]:
    res = _st.ks_2samp(np.asarray(a), np.asarray(b))
    return float(res.statistic), float(res.pvalue)


def ks_1samp(a, cdf) -> tuple[float, float]:
    res = _st.kstest(np.asarray(a), cdf)
    return float(res.statistic), float(res.pvalue)


def relative_quadratic_residual(n, counts) -> tuple[np.ndarray, float]:
    """Least-squares fit counts ~ a n^2 + b n + c; returns coefficients and ||resid|| / ||counts||."""
    n = np.asarray(n, dtype=float)
    y = np.asarray(counts, dtype=float)
    A = np.stack([n * n, n, np.ones_like(n)], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    return coef, float(np.linalg.norm(resid) / np.linalg.norm(y))
