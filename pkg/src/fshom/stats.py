"""Desk-scale statistical certification of the limit theorems.

Weak convergence cannot be tested as such; the surrogates here are
Kolmogorov-Smirnov distances on marginals, moment-scaling tables for the
Kolmogorov-type bounds, and mean/covariance checks of the lifted pair
(W, WW) against the bilinear-form targets.  Standard errors use batch
means over a fixed number of batches so that every report is reproducible
bit-exactly from (config, seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Union

import numpy as np

from .roughpath import GridRoughPath

#: number of batches used for batch-means standard errors
BATCH_COUNT = 32

#: |mean(W(1))| / stderr beyond this trips the centering guard
CENTERING_GUARD_Z = 10.0


class UncenteredObservableError(ValueError):
    """The lifted observable carries a mean far outside statistical noise."""


@dataclass(frozen=True)
class Ensemble:
    """Sample functionals plus the seed record that regenerates them."""

    values: np.ndarray
    seed: int
    task_offset: int = 0

    def __post_init__(self) -> None:
        if np.asarray(self.values).shape[0] == 0:
            raise ValueError("an ensemble needs at least one sample")

    def __len__(self) -> int:
        return np.asarray(self.values).shape[0]


def ks_distance(samples, reference: Union[np.ndarray, Callable]) -> float:
    """Sup distance between empirical CDFs, or empirical vs analytic CDF.

    `reference` is either a second sample array (two-sample statistic) or
    a vectorized CDF evaluable at the sample points.
    """
    a = np.sort(np.asarray(samples, dtype=float).ravel())
    if a.size == 0:
        raise ValueError("empty sample")
    n = a.size
    if callable(reference):
        F = np.asarray(reference(a), dtype=float)
        upper = float(np.max(np.arange(1, n + 1) / n - F))
        lower = float(np.max(F - np.arange(0, n) / n))
        return max(upper, lower, 0.0)
    b = np.sort(np.asarray(reference, dtype=float).ravel())
    if b.size == 0:
        raise ValueError("empty reference sample")
    grid = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, grid, side="right") / n
    cdf_b = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(cdf_a - cdf_b)))


def normal_cdf(mean: float, variance: float) -> Callable[[np.ndarray], np.ndarray]:
    """Vectorized CDF of N(mean, variance)."""
    if variance < 0:
        raise ValueError("variance must be nonnegative")
    sd = math.sqrt(variance)

    def cdf(x):
        x = np.asarray(x, dtype=float)
        if sd == 0.0:
            return (x >= mean).astype(float)
        return 0.5 * (1.0 + np.vectorize(math.erf)((x - mean) / (sd * math.sqrt(2.0))))

    return cdf


def batch_stderr(values: np.ndarray, batches: int = BATCH_COUNT) -> float:
    """Batch-means standard error of the mean (fixed batch layout)."""
    values = np.asarray(values, dtype=float).ravel()
    if values.size < 2:
        return 0.0
    k = min(batches, values.size)
    means = np.array([chunk.mean() for chunk in np.array_split(values, k)])
    return float(means.std(ddof=1) / math.sqrt(k))


@dataclass(frozen=True)
class MomentScalingReport:
    """Per-grid-index moment ratios of an ensemble of lifts.

    level1_ratio[k] = L^{2q} norm of |W(k/n)| divided by (k/n)^{1/2};
    level2_ratio[k] = L^{q} norm of |WW(0, k/n)| divided by (k/n).
    Boundedness of the maxima across a dyadic range of n is the empirical
    surrogate for the moment assumption.
    """

    n: int
    q: float
    samples: int
    level1_ratio: np.ndarray
    level2_ratio: np.ndarray
    max_level1: float
    max_level2: float


def moment_scaling_report(lifts: Iterable[GridRoughPath], q: float) -> MomentScalingReport:
    """Empirical L^{2q}/L^q moment ratios over the grid (single pass)."""
    if q <= 1.0:
        raise ValueError(f"q must exceed 1, got {q}")
    acc1 = None
    acc2 = None
    n = 0
    count = 0
    for rp in lifts:
        if acc1 is None:
            n = rp.n
            acc1 = np.zeros(n + 1)
            acc2 = np.zeros(n + 1)
        elif rp.n != n:
            raise ValueError("all lifts must share the same grid")
        acc1 += np.linalg.norm(rp.X, axis=1) ** (2.0 * q)
        acc2 += np.linalg.norm(rp.M.reshape(n + 1, -1), axis=1) ** q
        count += 1
    if count == 0:
        raise ValueError("empty lift ensemble")
    t = np.arange(n + 1) / n
    norm1 = (acc1 / count) ** (1.0 / (2.0 * q))
    norm2 = (acc2 / count) ** (1.0 / q)
    ratio1 = np.zeros(n + 1)
    ratio2 = np.zeros(n + 1)
    ratio1[1:] = norm1[1:] / np.sqrt(t[1:])
    ratio2[1:] = norm2[1:] / t[1:]
    return MomentScalingReport(
        n=n, q=q, samples=count,
        level1_ratio=ratio1, level2_ratio=ratio2,
        max_level1=float(ratio1.max()), max_level2=float(ratio2.max()),
    )


@dataclass(frozen=True)
class MomentCheck:
    """An empirical mean, its batch-means error bar, and the target."""

    statistic: float
    stderr: float
    target: float

    @property
    def z(self) -> float:
        gap = self.statistic - self.target
        if self.stderr == 0.0:
            return 0.0 if gap == 0.0 else math.inf
        return gap / self.stderr

    @property
    def within_3se(self) -> bool:
        return abs(self.z) <= 3.0


def _terminal_values(lifts: Iterable[GridRoughPath],
                     component: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    i, j = component
    w = []
    ww = []
    for rp in lifts:
        w.append(float(rp.X[rp.n][i]))
        ww.append(float(rp.M[rp.n][i, j]))
    if not w:
        raise ValueError("empty lift ensemble")
    return np.array(w), np.array(ww)


def _centering_guard(w: np.ndarray) -> None:
    mean = float(w.mean())
    se = batch_stderr(w)
    if se == 0.0:
        if mean != 0.0:
            raise UncenteredObservableError(
                f"W(1) is deterministic and nonzero (mean {mean:g})"
            )
        return
    if abs(mean) > CENTERING_GUARD_Z * se:
        raise UncenteredObservableError(
            f"|mean W(1)| = {abs(mean):g} exceeds {CENTERING_GUARD_Z:g} stderr ({se:g}); "
            "the observable looks uncentered"
        )


def level2_mean_check(lifts: Iterable[GridRoughPath], B2_value: float,
                      component: tuple[int, int] = (0, 0)) -> MomentCheck:
    """Empirical mean of WW(1) against the lag-sum target."""
    _, ww = _terminal_values(lifts, component)
    return MomentCheck(statistic=float(ww.mean()), stderr=batch_stderr(ww),
                       target=float(B2_value))


def covariance_check(lifts: Iterable[GridRoughPath], B1: float,
                     B2: float, component: tuple[int, int] = (0, 0)) -> MomentCheck:
    """Empirical E[W(1)^2] against B1 + 2 B2 (guards uncentered input)."""
    w, _ = _terminal_values(lifts, component)
    _centering_guard(w)
    sq = w * w
    return MomentCheck(statistic=float(sq.mean()), stderr=batch_stderr(sq),
                       target=float(B1) + 2.0 * float(B2))
