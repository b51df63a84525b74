"""Cadlag level-2 rough paths sampled on the uniform grid.

A grid rough path stores the first level X(t_k) and the running second
level M_k = XX(0, t_k) only; every (s, t) increment is reconstructed
through the group law

    (a, M) (b, N) = (a + b, M + a (x) b + N),
    (a, M)^{-1}   = (-a, -M + a (x) a),

which gives X(s, t) = X(t) - X(s) and
XX(s, t) = M(t) - M(s) - X(s) (x) (X(t) - X(s)).  The Chen relation holds
by construction, up to floating-point rounding.

p-variation is computed exactly by dynamic programming over grid indices:
for a piecewise-constant path every partition point can be slid onto the
previous jump time without changing any increment, so the supremum over
all partitions is attained on the grid.  The DP costs O(K^2) increment
evaluations; above ``MAX_DP_POINTS`` grid points the path is restricted
to a strided subgrid and the result is reported as a lower bound together
with the stride.

Norms: Euclidean on R^m, Frobenius on R^{m x m} (an admissible tensor
pairing, |a (x) b| <= |a| |b|).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Iterator, Optional, Union

import numpy as np

from . import rng as streams
from .maps import MapParams, MeasureSpec, Orbit, orbit_matrix
from .util import chunk_ranges

#: grids larger than this are coarsened before the O(K^2) p-variation DP
MAX_DP_POINTS = 2 ** 13


@dataclass(frozen=True)
class GridRoughPath:
    """Level-2 rough path on the grid t_k = k/n: X(t_k) and M_k = XX(0, t_k)."""

    n: int
    X: np.ndarray  # (n+1, m), X[0] = 0
    M: np.ndarray  # (n+1, m, m), M[0] = 0

    def __post_init__(self) -> None:
        m = self.X.shape[1] if self.X.ndim == 2 else -1
        if self.X.shape != (self.n + 1, m) or self.M.shape != (self.n + 1, m, m):
            raise ValueError(
                f"inconsistent shapes X{self.X.shape}, M{self.M.shape} for n={self.n}"
            )
        if np.any(self.X[0] != 0.0) or np.any(self.M[0] != 0.0):
            raise ValueError("a rough path starts at the group identity: X[0]=0, M[0]=0")
        self.X.flags.writeable = False
        self.M.flags.writeable = False

    @property
    def m(self) -> int:
        return self.X.shape[1]


def group_product(a, M, b, N):
    """(a, M) (b, N) in the level-2 group."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    return a + b, np.asarray(M, float) + np.outer(a, b) + np.asarray(N, float)


def lift_increments(increments: np.ndarray) -> GridRoughPath:
    """Left-point (Ito) lift of a path given by its per-cell jumps.

    X_j = sum_{k<j} xi_k and M_j = sum_{k<l<j} xi_k (x) xi_l, accumulated
    with running sums in O(n m^2).
    """
    xi = np.asarray(increments, dtype=float)
    if xi.ndim == 1:
        xi = xi[:, None]
    n, m = xi.shape
    X = np.zeros((n + 1, m))
    np.cumsum(xi, axis=0, out=X[1:])
    M = np.zeros((n + 1, m, m))
    if n > 0:
        cross = np.einsum("ka,kb->kab", X[:-1], xi)
        np.cumsum(cross, axis=0, out=M[1:])
    return GridRoughPath(n, X, M)


def lift_orbit(v, orbit: Orbit, n: int) -> GridRoughPath:
    """Lift of the observable v along the first n orbit values.

    First level n^{-1/2} sum_{k<j} v(Y_k); second level
    n^{-1} sum_{k<l<j} v(Y_k) (x) v(Y_l).
    """
    if len(orbit) < n:
        raise ValueError(f"orbit has {len(orbit)} values, need at least n={n}")
    vals = np.asarray(v(orbit.values[:n]), dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    return lift_increments(vals / math.sqrt(n))


def lift_ensemble(v, params: MapParams, measure: MeasureSpec, n: int,
                  samples: int, seed: int, chunk: int = 256,
                  task_offset: int = 0) -> Iterator[GridRoughPath]:
    """Yield lifts of independent orbits, one Philox stream per sample.

    Orbits are generated in chunks but sample i always uses stream
    (seed, task_offset + i), so the ensemble is chunking-invariant.
    """
    sqrt_n = math.sqrt(n)
    for start, stop in chunk_ranges(samples, chunk):
        ys = orbit_matrix(params, measure, n, stop - start, seed,
                          task_offset=task_offset + start)
        vals = np.asarray(v(ys), dtype=float)
        if vals.ndim == 2:
            vals = vals[:, :, None]
        count, _, m = vals.shape
        X = np.zeros((count, n + 1, m))
        np.cumsum(vals / sqrt_n, axis=1, out=X[:, 1:])
        M = np.zeros((count, n + 1, m, m))
        cross = np.einsum("cka,ckb->ckab", X[:, :-1], vals / sqrt_n)
        np.cumsum(cross, axis=1, out=M[:, 1:])
        for i in range(count):
            yield GridRoughPath(n, X[i].copy(), M[i].copy())


def increment(rp: GridRoughPath, i: int, j: int) -> tuple[np.ndarray, np.ndarray]:
    """Group increment (X(s,t), XX(s,t)) for s = t_i <= t = t_j."""
    if not 0 <= i <= j <= rp.n:
        raise ValueError(f"need 0 <= i <= j <= n, got i={i}, j={j}, n={rp.n}")
    x = rp.X[j] - rp.X[i]
    xx = rp.M[j] - rp.M[i] - np.outer(rp.X[i], x)
    return x, xx


def chen_defect(rp: GridRoughPath, i: int, u: int, j: int) -> float:
    """Frobenius norm of XX(s,t) - XX(s,u) - XX(u,t) - X(s,u) (x) X(u,t)."""
    if not 0 <= i <= u <= j <= rp.n:
        raise ValueError(f"need i <= u <= j, got ({i}, {u}, {j})")
    x_su, xx_su = increment(rp, i, u)
    x_ut, xx_ut = increment(rp, u, j)
    _, xx_st = increment(rp, i, j)
    defect = xx_st - xx_su - xx_ut - np.outer(x_su, x_ut)
    return float(np.linalg.norm(defect))


# ---------------------------------------------------------------------------
# p-variation by dynamic programming
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PvarResult:
    value: float
    exact: bool
    stride: int


def _dp_sup(K: int, cost_column: Callable[[int], np.ndarray]) -> float:
    """sup over index partitions of summed costs; cost_column(j) gives
    cost(i, j) for all i < j."""
    best = np.zeros(K)
    for j in range(1, K):
        best[j] = np.max(best[:j] + cost_column(j))
    return float(best[K - 1])


def _coarsen(K: int, max_points: int) -> tuple[np.ndarray, int]:
    if K <= max_points:
        return np.arange(K), 1
    stride = int(math.ceil((K - 1) / (max_points - 1)))
    idx = np.arange(0, K, stride)
    if idx[-1] != K - 1:
        idx = np.append(idx, K - 1)
    return idx, stride


def _level1_cost(values: np.ndarray, p: float) -> Callable[[int], np.ndarray]:
    def column(j: int) -> np.ndarray:
        return np.linalg.norm(values[:j] - values[j], axis=1) ** p

    return column


def _level2_cost(X: np.ndarray, M: np.ndarray, p2: float,
                 X2: Optional[np.ndarray] = None,
                 M2: Optional[np.ndarray] = None) -> Callable[[int], np.ndarray]:
    """Cost columns |XX(t_i, t_j)|^p2, or of the difference of two tables."""

    def table(Xa, Ma, j):
        dX = Xa[j][None, :] - Xa[:j]
        cross = Xa[:j, :, None] * dX[:, None, :]
        return Ma[j][None] - Ma[:j] - cross

    def column(j: int) -> np.ndarray:
        D = table(X, M, j)
        if X2 is not None:
            D = D - table(X2, M2, j)
        return np.sqrt((D * D).sum(axis=(1, 2))) ** p2

    return column


def _joint_cost(X: np.ndarray, M: np.ndarray, p: float) -> Callable[[int], np.ndarray]:
    lvl1 = _level1_cost(X, p)
    lvl2 = _level2_cost(X, M, p / 2.0)

    def column(j: int) -> np.ndarray:
        return lvl1(j) + lvl2(j)

    return column


def pvar_detail(values: Union[np.ndarray, GridRoughPath], p: float,
                max_points: int = MAX_DP_POINTS) -> PvarResult:
    """Exact grid p-variation, or a strided lower bound on huge grids.

    ``values`` is a one-parameter path ((K,) or (K, d) array) or a
    GridRoughPath, in which case the second-level increment table is
    measured (pass the exponent for that table, typically p/2).
    """
    if p < 1.0:
        raise ValueError(f"p must be at least 1, got {p}")
    if isinstance(values, GridRoughPath):
        K = values.n + 1
        idx, stride = _coarsen(K, max_points)
        col = _level2_cost(values.X[idx], values.M[idx], p)
    else:
        arr = np.asarray(values, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        K = arr.shape[0]
        if K < 1:
            raise ValueError("need at least one grid point")
        idx, stride = _coarsen(K, max_points)
        col = _level1_cost(arr[idx], p)
    value = _dp_sup(len(idx), col) ** (1.0 / p)
    return PvarResult(value=value, exact=(stride == 1), stride=stride)


def pvar(values: Union[np.ndarray, GridRoughPath], p: float,
         max_points: int = MAX_DP_POINTS) -> float:
    """p-variation over grid partitions; see pvar_detail for the contract."""
    return pvar_detail(values, p, max_points=max_points).value


def joint_pvar(X: np.ndarray, M: np.ndarray, p: float,
               max_points: int = MAX_DP_POINTS) -> float:
    """Homogeneous joint p-variation (sup_P sum |X|^p + |XX|^{p/2})^{1/p}."""
    idx, _ = _coarsen(X.shape[0], max_points)
    return _dp_sup(len(idx), _joint_cost(X[idx], M[idx], p)) ** (1.0 / p)


def homogeneous_norm(rp: GridRoughPath, p: float,
                     max_points: int = MAX_DP_POINTS) -> float:
    """||X||_{p-var} + ||XX||_{p/2-var}^{1/2}."""
    if not 2.0 <= p < 3.0:
        warnings.warn(f"homogeneous level-2 norm is meant for p in [2, 3), got {p}",
                      stacklevel=2)
    lvl1 = pvar(rp.X, p, max_points=max_points)
    lvl2 = pvar(rp, p / 2.0, max_points=max_points)
    return lvl1 + math.sqrt(lvl2)


def _check_same_shape(rp1: GridRoughPath, rp2: GridRoughPath) -> None:
    if rp1.n != rp2.n or rp1.m != rp2.m:
        raise ValueError(
            f"shape mismatch: (n={rp1.n}, m={rp1.m}) vs (n={rp2.n}, m={rp2.m})"
        )


def _inhom_distance_arrays(X1, M1, X2, M2, p: float,
                           max_points: int = MAX_DP_POINTS) -> float:
    idx, _ = _coarsen(X1.shape[0], max_points)
    lvl1 = _dp_sup(len(idx), _level1_cost(X1[idx] - X2[idx], p)) ** (1.0 / p)
    p2 = p / 2.0
    lvl2 = _dp_sup(
        len(idx), _level2_cost(X1[idx], M1[idx], p2, X2[idx], M2[idx])
    ) ** (1.0 / p2)
    return lvl1 + lvl2


def inhom_distance(rp1: GridRoughPath, rp2: GridRoughPath, p: float,
                   max_points: int = MAX_DP_POINTS) -> float:
    """Inhomogeneous metric ||X - X~||_{p-var} + ||XX - XX~||_{p/2-var}."""
    _check_same_shape(rp1, rp2)
    return _inhom_distance_arrays(rp1.X, rp1.M, rp2.X, rp2.M, p,
                                  max_points=max_points)


def _sup_distance(rp1: GridRoughPath, rp2: GridRoughPath) -> float:
    """Two-parameter sup distance sup|X(s,t)-X~(s,t)| + sup|XX(s,t)-XX~(s,t)|."""
    dX = rp1.X - rp2.X
    K = dX.shape[0]
    sup1 = 0.0
    sup2 = 0.0
    col2 = _level2_cost(rp1.X, rp1.M, 1.0, rp2.X, rp2.M)
    for j in range(1, K):
        sup1 = max(sup1, float(np.max(np.linalg.norm(dX[:j] - dX[j], axis=1))))
        sup2 = max(sup2, float(np.max(col2(j))))
    return sup1 + sup2


def interpolation_check(rp1: GridRoughPath, rp2: GridRoughPath,
                        p: float, p_prime: float) -> tuple[float, float]:
    """Evaluate both sides of the p / p' interpolation inequality.

    Returns (lhs, rhs) with lhs the inhomogeneous distance at p' and
    rhs = sup-distance^{1 - p/p'} * distance(p)^{p/p'}; lhs <= rhs holds
    as a theorem, up to floating-point slack.
    """
    if not 1.0 <= p <= p_prime:
        raise ValueError(f"need 1 <= p <= p', got p={p}, p'={p_prime}")
    _check_same_shape(rp1, rp2)
    lhs = inhom_distance(rp1, rp2, p_prime)
    theta = p / p_prime
    sup = _sup_distance(rp1, rp2)
    base = inhom_distance(rp1, rp2, p)
    rhs = sup ** (1.0 - theta) * base ** theta
    return lhs, rhs


# ---------------------------------------------------------------------------
# Skorokhod-type distance (upper bound over a finite time-change family)
# ---------------------------------------------------------------------------

def _sample_running(rp: GridRoughPath, times: np.ndarray,
                    nudge: float = 1e-9) -> tuple[np.ndarray, np.ndarray]:
    """Right-continuous samples of (X(t), XX(0,t)) at arbitrary times."""
    idx = np.minimum((rp.n * times + nudge).astype(np.int64), rp.n)
    return rp.X[idx], rp.M[idx]


def skorokhod_distance_upper(rp1: GridRoughPath, rp2: GridRoughPath, p: float,
                             grid_refinement: int = 8) -> float:
    """Upper bound on the Skorokhod-type p-variation distance.

    Minimizes |omega| + ||rp1 ; rp2 o omega||_{p-var} over the identity and
    all single-breakpoint piecewise-linear time changes sending one
    refinement-grid point to another.  The true distance is an infimum
    over all continuous increasing bijections, so this is only an upper
    bound; the identity candidate makes it <= the inhomogeneous distance.
    """
    if rp1.m != rp2.m:
        raise ValueError(f"driver dimensions differ: {rp1.m} vs {rp2.m}")
    R = grid_refinement
    grid1 = np.arange(rp1.n + 1) / rp1.n
    grid2 = np.arange(rp2.n + 1) / rp2.n

    def cost(g: Optional[float], gp: Optional[float]) -> float:
        if g is None:
            omega = lambda t: t
            omega_inv = lambda s: s
            omega_sup = 0.0
        else:
            def omega(t):
                t = np.asarray(t, float)
                return np.where(t <= g, t * gp / g,
                                gp + (t - g) * (1.0 - gp) / (1.0 - g))

            def omega_inv(s):
                s = np.asarray(s, float)
                return np.where(s <= gp, s * g / gp,
                                g + (s - gp) * (1.0 - g) / (1.0 - gp))

            omega_sup = abs(g - gp)
        tau = np.unique(np.concatenate([grid1, np.clip(omega_inv(grid2), 0.0, 1.0)]))
        X1s, M1s = _sample_running(rp1, tau)
        X2s, M2s = _sample_running(rp2, np.clip(omega(tau), 0.0, 1.0))
        return omega_sup + _inhom_distance_arrays(X1s, M1s, X2s, M2s, p)

    best = cost(None, None)
    interior = [i / R for i in range(1, R)]
    for g in interior:
        for gp in interior:
            best = min(best, cost(g, gp))
    return best
