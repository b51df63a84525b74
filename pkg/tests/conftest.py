"""Shared fixtures and independent oracles for the test suite.

The oracles here are deliberately naive (explicit double sums, exhaustive
partition enumeration, exact rational arithmetic) and never call the code
paths they are used to check.
"""

from __future__ import annotations

import itertools
import math
from fractions import Fraction

import numpy as np
import pytest

from fshom.maps import LEBESGUE, MapParams, MeasureSpec, Orbit, generate_orbit

ACCEPTANCE_SEED = 20260810


@pytest.fixture(scope="session")
def gamma0_orbit_long() -> Orbit:
    """10^7-point doubling-map orbit from a Lebesgue start (exact backend)."""
    return generate_orbit(MapParams(0.0), MeasureSpec(LEBESGUE), 10_000_000,
                          seed=ACCEPTANCE_SEED, task=0)


@pytest.fixture(scope="session")
def gamma025_orbit_long() -> Orbit:
    """10^7-point gamma = 0.25 orbit from a Lebesgue start."""
    return generate_orbit(MapParams(0.25), MeasureSpec(LEBESGUE), 10_000_000,
                          seed=ACCEPTANCE_SEED, task=1)


def make_orbit(values, gamma: float = 0.0) -> Orbit:
    """Wrap explicit fast values (unit-interval floats) as an Orbit."""
    return Orbit(np.asarray(values, dtype=float), MapParams(gamma))


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------

def doubling_exact(y0: float, length: int) -> list[Fraction]:
    """Exact doubling-map orbit of the dyadic rational float y0."""
    y = Fraction(y0)
    out = []
    for _ in range(length):
        out.append(y)
        y = 2 * y if y <= Fraction(1, 2) else 2 * y - 1
    return out


def brute_first_level(vals: np.ndarray, n: int, j: int) -> np.ndarray:
    """n^{-1/2} sum_{k<j} v_k by direct summation."""
    vals = np.atleast_2d(np.asarray(vals, float).T).T
    acc = np.zeros(vals.shape[1])
    for k in range(j):
        acc = acc + vals[k]
    return acc / math.sqrt(n)


def brute_second_level(vals: np.ndarray, n: int, i: int, j: int) -> np.ndarray:
    """n^{-1} sum_{i<=k<l<j} v_k (x) v_l by the O(n^2) double loop."""
    vals = np.atleast_2d(np.asarray(vals, float).T).T
    m = vals.shape[1]
    acc = np.zeros((m, m))
    for k in range(i, j):
        for l in range(k + 1, j):
            acc = acc + np.outer(vals[k], vals[l])
    return acc / n


def enumerate_pvar(increment_norm, K: int, p: float) -> float:
    """Exhaustive sup over all 2^{K-2} grid partitions of [t_0, t_{K-1}]."""
    if K < 2:
        return 0.0
    interior = range(1, K - 1)
    best = 0.0
    for r in range(K - 1):
        for combo in itertools.combinations(interior, r):
            pts = [0, *combo, K - 1]
            total = sum(
                increment_norm(pts[a], pts[a + 1]) ** p for a in range(len(pts) - 1)
            )
            best = max(best, total)
    return best ** (1.0 / p)
