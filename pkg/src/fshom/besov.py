"""Continuous interpolants and homogeneous Besov norms for level-2 paths.

A grid rough path is interpolated by making the first level piecewise
linear between anchors and the running second level XX(0, .) linear in t
between anchors; (s, t) increments of the interpolant always go through
the group law, so the interpolant agrees with its source at every anchor
and satisfies the Chen relation by construction.

The homogeneous Besov norm is the double integral over the square of

    |X(u,v)|^q / |u-v|^{q a + 1}  +  |XX(u,v)|^{q/2} / |u-v|^{q a + 1},

evaluated by tensor-product midpoint quadrature with the diagonal band
|u - v| < h excluded (h = T / quadrature); the band's contribution is
bounded analytically from the interpolant's Holder constants and reported
separately.  Increments at (u, v) with v < u are read on [min, max], so
the square integral is twice the ordered-pair sum.

The embedding checks return the ratios whose boundedness is asserted by
the Besov-to-variation and Besov-to-Holder embeddings; the constants in
those embeddings are non-explicit, so only finiteness and stability of
the ratios is ever certified.  Variation and Holder functionals are
evaluated on a sampling grid (anchors plus quadrature nodes) and are
therefore lower bounds on the true suprema, which is conservative for
the embeddings' left-hand sides.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .roughpath import GridRoughPath, joint_pvar

#: default midpoint nodes per axis
DEFAULT_QUADRATURE = 256


class InconsistencyError(ValueError):
    """Zero Besov norm against a nonzero variation functional."""


@dataclass(frozen=True)
class ContinuousRoughPath:
    """Piecewise-linear-in-level continuous path anchored at grid values."""

    times: np.ndarray  # (K,), increasing, times[0] = 0
    X: np.ndarray      # (K, m) anchor first level, X[0] = 0
    M: np.ndarray      # (K, m, m) anchor XX(0, t_k)

    def __post_init__(self) -> None:
        K = self.times.shape[0]
        if K < 2:
            raise ValueError("need at least two anchor times")
        if self.X.shape[0] != K or self.M.shape[0] != K:
            raise ValueError("anchor arrays disagree with the time grid")
        for arr in (self.times, self.X, self.M):
            arr.flags.writeable = False

    @property
    def m(self) -> int:
        return self.X.shape[1]

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def _locate(self, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        t = np.asarray(t, dtype=float)
        j = np.clip(np.searchsorted(self.times, t, side="right") - 1,
                    0, self.times.shape[0] - 2)
        width = self.times[j + 1] - self.times[j]
        theta = np.clip((t - self.times[j]) / width, 0.0, 1.0)
        return j, theta

    def first_level(self, t) -> np.ndarray:
        """X~(t) for scalar or array t (convex combination of anchors)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        j, theta = self._locate(t)
        return (1.0 - theta)[:, None] * self.X[j] + theta[:, None] * self.X[j + 1]

    def second_from_zero(self, t) -> np.ndarray:
        """XX~(0, t), linear in t between anchors."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        j, theta = self._locate(t)
        return ((1.0 - theta)[:, None, None] * self.M[j]
                + theta[:, None, None] * self.M[j + 1])

    def increment(self, s, t) -> tuple[np.ndarray, np.ndarray]:
        """Group increment (X~(s,t), XX~(s,t)) for arrays s <= t."""
        xs = self.first_level(s)
        xt = self.first_level(t)
        ms = self.second_from_zero(s)
        mt = self.second_from_zero(t)
        dx = xt - xs
        xx = mt - ms - np.einsum("na,nb->nab", xs, dx)
        return dx, xx


def continuous_interpolant(rp: GridRoughPath) -> ContinuousRoughPath:
    """The anchor-exact continuous interpolant of a grid rough path."""
    times = np.arange(rp.n + 1) / rp.n
    return ContinuousRoughPath(times=times, X=rp.X.copy(), M=rp.M.copy())


def _node_values(crp: ContinuousRoughPath, nodes: np.ndarray):
    Xn = crp.first_level(nodes)
    Mn = crp.second_from_zero(nodes)
    return Xn, Mn


def _pairwise_levels(Xn: np.ndarray, Mn: np.ndarray):
    """Ordered-pair increment norms |X(u_i, u_j)| and |XX(u_i, u_j)|, i < j."""
    dX = Xn[None, :, :] - Xn[:, None, :]
    lvl1 = np.linalg.norm(dX, axis=2)
    cross = np.einsum("im,ijn->ijmn", Xn, dX)
    XX = Mn[None, :, :, :] - Mn[:, None, :, :] - cross
    lvl2 = np.sqrt((XX * XX).sum(axis=(2, 3)))
    return lvl1, lvl2


def holder_constants(crp: ContinuousRoughPath, beta: float = 0.5,
                     anchors_only: bool = True) -> tuple[float, float]:
    """Smallest C1, C2 with |X(t_i,t_j)| <= C1 dt^beta, |XX| <= C2 dt^{2 beta}
    over anchor pairs."""
    lvl1, lvl2 = _pairwise_levels(crp.X, crp.M)
    dt = np.abs(crp.times[None, :] - crp.times[:, None])
    iu = np.triu_indices(crp.times.shape[0], k=1)
    d = dt[iu]
    c1 = float(np.max(lvl1[iu] / d ** beta))
    c2 = float(np.max(lvl2[iu] / d ** (2.0 * beta)))
    return c1, c2


@dataclass(frozen=True)
class BesovReport:
    value: float
    band_bound: float
    band_width: float
    quadrature: int
    level1_integral: float
    level2_integral: float


def besov_norm_report(crp: ContinuousRoughPath, alpha: float, q: float,
                      quadrature: int = DEFAULT_QUADRATURE,
                      beta: float = 0.5) -> BesovReport:
    """Midpoint quadrature of the homogeneous Besov norm.

    Returns the norm of the band-excluded integral and an analytic bound
    on the excluded band, valid whenever alpha < beta (the interpolant's
    Holder exponent); the bound is reported as inf otherwise.
    """
    if q <= 1.0:
        raise ValueError(f"q must exceed 1, got {q}")
    if not (1.0 / q) < alpha < 1.0:
        raise ValueError(f"alpha must lie in (1/q, 1), got alpha={alpha}, q={q}")
    if quadrature < 64:
        raise ValueError(f"need at least 64 quadrature points, got {quadrature}")
    T = crp.horizon
    h = T / quadrature
    nodes = (np.arange(quadrature) + 0.5) * h
    Xn, Mn = _node_values(crp, nodes)
    lvl1, lvl2 = _pairwise_levels(Xn, Mn)
    dt = np.abs(nodes[None, :] - nodes[:, None])
    iu = np.triu_indices(quadrature, k=1)
    weights = dt[iu] ** (-(q * alpha + 1.0))
    int1 = 2.0 * h * h * float(np.sum(lvl1[iu] ** q * weights))
    int2 = 2.0 * h * h * float(np.sum(lvl2[iu] ** (q / 2.0) * weights))

    if alpha < beta:
        c1, c2 = holder_constants(crp, beta)
        c1_int = 3.0 ** (1.0 - beta) * c1
        c2_int = 3.0 ** (2.0 - 2.0 * beta) * (c2 + c1 * c1)
        decay = q * (beta - alpha)
        band = 2.0 * T * (c1_int ** q + c2_int ** (q / 2.0)) * h ** decay / decay
    else:
        band = math.inf
    return BesovReport(value=(int1 + int2) ** (1.0 / q), band_bound=band,
                       band_width=h, quadrature=quadrature,
                       level1_integral=int1, level2_integral=int2)


def besov_norm(crp: ContinuousRoughPath, alpha: float, q: float,
               quadrature: int = DEFAULT_QUADRATURE) -> float:
    return besov_norm_report(crp, alpha, q, quadrature=quadrature).value


def _sampling_times(crp: ContinuousRoughPath, quadrature: int,
                    cap: int = 4096) -> np.ndarray:
    T = crp.horizon
    nodes = (np.arange(quadrature) + 0.5) * (T / quadrature)
    times = np.unique(np.concatenate([crp.times, nodes]))
    if times.shape[0] > cap:
        idx = np.unique(np.linspace(0, times.shape[0] - 1, cap).astype(int))
        times = times[idx]
    return times


def embedding_check_var(crp: ContinuousRoughPath, alpha: float, q: float,
                        quadrature: int = DEFAULT_QUADRATURE) -> float:
    """Ratio of the (1/alpha)-variation to T^{alpha - 1/q} * Besov norm."""
    denom_norm = besov_norm(crp, alpha, q, quadrature=quadrature)
    times = _sampling_times(crp, quadrature)
    Xs = crp.first_level(times)
    Ms = crp.second_from_zero(times)
    var = joint_pvar(Xs, Ms, 1.0 / alpha)
    if denom_norm == 0.0:
        if var > 1e-14:
            raise InconsistencyError(
                f"zero Besov norm but variation {var:g}"
            )
        return 0.0
    T = crp.horizon
    return var / (T ** (alpha - 1.0 / q) * denom_norm)


def embedding_check_holder(crp: ContinuousRoughPath, alpha: float, q: float,
                           quadrature: int = DEFAULT_QUADRATURE) -> float:
    """Ratio of the (alpha - 1/q)-Holder functional to the Besov norm."""
    denom_norm = besov_norm(crp, alpha, q, quadrature=quadrature)
    gamma = alpha - 1.0 / q
    times = _sampling_times(crp, quadrature, cap=1536)
    Xs = crp.first_level(times)
    Ms = crp.second_from_zero(times)
    lvl1, lvl2 = _pairwise_levels(Xs, Ms)
    dt = np.abs(times[None, :] - times[:, None])
    iu = np.triu_indices(times.shape[0], k=1)
    d = dt[iu] ** gamma
    holder = float(np.max(lvl1[iu] / d) + np.max(np.sqrt(lvl2[iu]) / d))
    if denom_norm == 0.0:
        if holder > 1e-14:
            raise InconsistencyError(
                f"zero Besov norm but Holder functional {holder:g}"
            )
        return 0.0
    return holder / denom_norm


@dataclass(frozen=True)
class InterpolantBoundCheck:
    """Worst-case slack of the interpolant's two Holder bounds.

    slack <= 1 means |X~(s,t)| <= 3^{1-beta} C1 |t-s|^beta (level 1) and
    |XX~(s,t)| <= 3^{2-2 beta} (C2 + C1^2) |t-s|^{2 beta} (level 2) held
    on every sampled pair.
    """

    c1: float
    c2: float
    max_slack_level1: float
    max_slack_level2: float


def interpolant_bound_check(crp: ContinuousRoughPath, beta: float = 0.5,
                            pairs: int = 1000,
                            seed: int = 0) -> InterpolantBoundCheck:
    """Sample (s, t) pairs and compare against the interpolation bounds."""
    c1, c2 = holder_constants(crp, beta)
    gen = np.random.default_rng(seed)
    T = crp.horizon
    st = np.sort(gen.random((pairs, 2)) * T, axis=1)
    keep = st[:, 1] - st[:, 0] > 1e-12
    s, t = st[keep, 0], st[keep, 1]
    dx, xx = crp.increment(s, t)
    dt = t - s
    lvl1 = np.linalg.norm(dx, axis=1)
    lvl2 = np.sqrt((xx * xx).sum(axis=(1, 2)))
    bound1 = 3.0 ** (1.0 - beta) * c1 * dt ** beta
    bound2 = 3.0 ** (2.0 - 2.0 * beta) * (c2 + c1 * c1) * dt ** (2.0 * beta)
    slack1 = float(np.max(lvl1 / np.maximum(bound1, 1e-300)))
    slack2 = float(np.max(lvl2 / np.maximum(bound2, 1e-300)))
    return InterpolantBoundCheck(c1=c1, c2=c2, max_slack_level1=slack1,
                                 max_slack_level2=slack2)
