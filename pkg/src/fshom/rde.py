"""Forward (Ito-type) rough integration and RDE solving on grid drivers.

For a piecewise-constant driver the compensated Riemann sum over the full
grid IS the integral: the sewing limit stabilizes once the partition
refines past the jump set, so the per-cell sum

    Xi(u, v)^i = H^i(Y(u)) X(u, v) + sum_k (d_k H^i (x) H^k)(Y(u)) XX(u, v)

is summed cell by cell without any step-size control.  The forward RDE
update adds the Young drift term F(Y(u)) V(u, v).  For the left-point lift
of an orbit observable the per-cell second level vanishes and the solver
reproduces the slow recursion exactly; nonzero per-cell areas only arise
for synthetic or coarsened drivers.

Only the Ito (forward) convention is implemented; no Marcus/geometric
correction is applied at jumps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .fastslow import CadlagGridPath, NumericBlowupError, grid_path
from .roughpath import GridRoughPath, inhom_distance, pvar

#: central-difference step is FD_STEP * max(1, |x|) per coordinate
FD_STEP = float(np.finfo(np.float64).eps) ** (1.0 / 3.0)


@dataclass(frozen=True)
class VectorFieldPair:
    """Vector fields (F, H) of the forward equation dY = F(Y)dV + H(Y)dX.

    H: (d,) -> (d, m);  DH: (d,) -> (d, d, m) with [i, k, a] = d H^{i,a}/d x_k,
    synthesized by central differences when not supplied; F: (d,) -> (d, e).
    """

    dim: int
    m: int
    H: Callable[[np.ndarray], np.ndarray]
    DH: Optional[Callable[[np.ndarray], np.ndarray]] = None
    F: Optional[Callable[[np.ndarray], np.ndarray]] = None
    e: int = 0

    def dh(self, x: np.ndarray) -> np.ndarray:
        if self.DH is not None:
            return np.asarray(self.DH(x), dtype=float)
        out = np.empty((self.dim, self.dim, self.m))
        for k in range(self.dim):
            h = FD_STEP * max(1.0, abs(float(x[k])))
            xp = x.copy()
            xm = x.copy()
            xp[k] += h
            xm[k] -= h
            out[:, k, :] = (np.asarray(self.H(xp)) - np.asarray(self.H(xm))) / (2.0 * h)
        return out

    def drift(self, x: np.ndarray) -> np.ndarray:
        if self.F is None:
            return np.zeros((self.dim, max(self.e, 1)))
        return np.asarray(self.F(x), dtype=float)


@dataclass(frozen=True)
class ControlledOutput:
    """An X-controlled solution: path Y, Gubinelli derivative Y' = H(Y)."""

    path: CadlagGridPath
    derivative: np.ndarray  # (n+1, d, m)
    driver: GridRoughPath

    def remainder(self, i: int, j: int) -> np.ndarray:
        """R(s, t) = Y(s, t) - Y'(s) X(s, t), s = t_i, t = t_j."""
        if not 0 <= i <= j <= self.path.n:
            raise ValueError(f"need 0 <= i <= j <= n, got ({i}, {j})")
        dY = self.path.values[j] - self.path.values[i]
        dX = self.driver.X[j] - self.driver.X[i]
        return dY - self.derivative[i] @ dX


def _cell_increments(rp: GridRoughPath, k: int) -> tuple[np.ndarray, np.ndarray]:
    x = rp.X[k + 1] - rp.X[k]
    xx = rp.M[k + 1] - rp.M[k] - np.outer(rp.X[k], x)
    return x, xx


def rough_integral(vf: VectorFieldPair, Y: CadlagGridPath,
                   rp: GridRoughPath) -> CadlagGridPath:
    """Running compensated sum of Xi(t_k, t_{k+1}) along the shared grid."""
    if Y.n != rp.n:
        raise ValueError(f"grid mismatch: path n={Y.n}, driver n={rp.n}")
    if Y.dim != vf.dim or rp.m != vf.m:
        raise ValueError("vector field dimensions do not match path/driver")
    n = rp.n
    out = np.zeros((n + 1, vf.dim))
    for k in range(n):
        y = Y.values[k]
        H = np.asarray(vf.H(y), dtype=float)
        xc, xxc = _cell_increments(rp, k)
        second = np.einsum("ika,kb,ab->i", vf.dh(y), H, xxc)
        out[k + 1] = out[k] + H @ xc + second
    return CadlagGridPath(n, out)


def young_integral(F: Callable, Y: CadlagGridPath,
                   V: CadlagGridPath) -> CadlagGridPath:
    """Left-point Riemann sum of F(Y) dV over grid cells."""
    if Y.n != V.n:
        raise ValueError(f"grid mismatch: path n={Y.n}, driver n={V.n}")
    n = Y.n
    first = np.asarray(F(Y.values[0]), dtype=float)
    out = np.zeros((n + 1, first.shape[0]))
    for k in range(n):
        Fk = np.asarray(F(Y.values[k]), dtype=float)
        out[k + 1] = out[k] + Fk @ (V.values[k + 1] - V.values[k])
    return CadlagGridPath(n, out)


def solve_rde(vf: VectorFieldPair, V: Optional[CadlagGridPath],
              rp: GridRoughPath, y0) -> ControlledOutput:
    """Explicit forward solution of dY = F(Y)dV + H(Y)dX on the grid.

    Per cell: Y_{k+1} = Y_k + F(Y_k) V(t_k, t_{k+1}) + H(Y_k) X(t_k, t_{k+1})
    + (DH . H)(Y_k) XX(t_k, t_{k+1}); exact for piecewise-constant drivers.
    """
    n = rp.n
    if V is not None and V.n != n:
        raise ValueError(f"grid mismatch: drift driver n={V.n}, rough driver n={n}")
    d = vf.dim
    y = np.asarray(y0, dtype=float).reshape(d).copy()
    values = np.empty((n + 1, d))
    deriv = np.empty((n + 1, d, vf.m))
    values[0] = y
    for k in range(n):
        H = np.asarray(vf.H(y), dtype=float)
        deriv[k] = H
        xc, xxc = _cell_increments(rp, k)
        step = H @ xc + np.einsum("ika,kb,ab->i", vf.dh(y), H, xxc)
        if V is not None and vf.F is not None:
            step = step + vf.drift(y) @ (V.values[k + 1] - V.values[k])
        y = y + step
        if not np.all(np.isfinite(y)):
            raise NumericBlowupError("RDE solution blew up", cell=k)
        values[k + 1] = y
    deriv[n] = np.asarray(vf.H(y), dtype=float)
    return ControlledOutput(path=CadlagGridPath(n, values), derivative=deriv,
                            driver=rp)


def lipschitz_probe(vf: VectorFieldPair,
                    drivers: tuple[Optional[CadlagGridPath], GridRoughPath],
                    perturbed: tuple[Optional[CadlagGridPath], GridRoughPath],
                    y0, y0_tilde, p: float,
                    drift_q: float = 1.0) -> tuple[float, float]:
    """(solution distance, driver distance) for one perturbation pair.

    Empirical probe of the local Lipschitz property of the solution map:
    returns |Y(0) - Y~(0)| + ||Y - Y~||_{p-var} (the norm under which the
    solution map is continuous) against
    ||rp ; rp~||_{p-var} + ||V - V~||_{q-var} + |y0 - y0~|.  The ratio is
    reported by callers, never asserted against a universal constant.
    """
    V, rp = drivers
    Vt, rpt = perturbed
    sol = solve_rde(vf, V, rp, y0)
    sol_t = solve_rde(vf, Vt, rpt, y0_tilde)
    out_dist = float(
        np.linalg.norm(sol.path.values[0] - sol_t.path.values[0])
    ) + pvar(sol.path.values - sol_t.path.values, p)
    in_dist = inhom_distance(rp, rpt, p)
    if V is not None and Vt is not None:
        in_dist += pvar(V.values - Vt.values, drift_q)
    in_dist += float(np.linalg.norm(np.asarray(y0, float) - np.asarray(y0_tilde, float)))
    return out_dist, in_dist


def constant_drift_path(n: int, rate: np.ndarray) -> CadlagGridPath:
    """The drift driver V(t_k) = (k/n) * rate (e per-component ramp)."""
    rate = np.atleast_1d(np.asarray(rate, dtype=float))
    values = np.outer(np.arange(n + 1) / n, rate)
    return grid_path(values, n)
