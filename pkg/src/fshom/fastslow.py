"""The slow recursion and its cadlag grid-path representation.

One slow step moves x by a(x, y)/n + b(x, y)/sqrt(n) while the fast state
advances one map iterate; the slow path x_n is the piecewise-constant
(cadlag) path taking value X_k on [k/n, (k+1)/n).  The recursion itself is
the ground truth everywhere in the package: there is no discretization
error by construction.

Field handles are batch-vectorized: ``eval_a`` and ``eval_b`` map
(x: (N, d), y: (N,)) -> (N, d), and ``eval_db`` maps to (N, d, d) with
entry [i, k] = d b^i / d x_k.  Product-form fields b(x, y) = h(x) v(y)
additionally carry their factors so that downstream coefficient
estimation can use exact per-component correlation tables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .maps import Orbit, MapParams, MeasureSpec, orbit_matrix
from .util import chunk_ranges, ordered_map

#: densest path stored as a full (n+1, d) array; beyond this use the
#: streaming ensemble kernels, which retain only requested functionals
MAX_DENSE_STEPS = 2 ** 24

#: default ceiling on |Birkhoff mean of centered b| at each probe
CENTERING_TOL = 1e-3


class NumericBlowupError(ArithmeticError):
    """A slow step or solver update produced a non-finite state."""

    def __init__(self, message: str, **context):
        super().__init__(message)
        self.context = context


@dataclass(frozen=True)
class CadlagGridPath:
    """Piecewise-constant path on [0, 1] with jumps at k/n, values in R^d."""

    n: int
    values: np.ndarray  # (n+1, d); value on [k/n, (k+1)/n) is values[k]

    def __post_init__(self) -> None:
        if self.values.ndim != 2 or self.values.shape[0] != self.n + 1:
            raise ValueError(
                f"values must have shape (n+1, d), got {self.values.shape} for n={self.n}"
            )
        self.values.flags.writeable = False

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def value_at(self, t: float) -> np.ndarray:
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"t must lie in [0, 1], got {t}")
        return self.values[min(int(math.floor(self.n * t)), self.n)]

    def increment(self, i: int, j: int) -> np.ndarray:
        return self.values[j] - self.values[i]


def grid_path(values: np.ndarray, n: Optional[int] = None) -> CadlagGridPath:
    """Coerce a (n+1,) or (n+1, d) array into a CadlagGridPath."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if n is None:
        n = arr.shape[0] - 1
    return CadlagGridPath(n, np.ascontiguousarray(arr))


@dataclass(frozen=True)
class ProductParts:
    """Factors of a product field b(x, y) = h(x) v(y).

    h: (N, d) -> (N, d, m);  dh: (N, d) -> (N, d, d, m) with
    [i, k, a] = d h^{i,a} / d x_k;  v: (N,) -> (N, m).
    """

    h: Callable[[np.ndarray], np.ndarray]
    dh: Callable[[np.ndarray], np.ndarray]
    v: Callable[[np.ndarray], np.ndarray]
    m: int


@dataclass(frozen=True)
class SlowField:
    """Drift and noise handles of one fast-slow system."""

    dim: int
    eval_a: Callable[[np.ndarray, np.ndarray], np.ndarray]
    eval_b: Callable[[np.ndarray, np.ndarray], np.ndarray]
    eval_db: Callable[[np.ndarray, np.ndarray], np.ndarray]
    product: Optional[ProductParts] = None


def _as_batch_x(x, dim: int) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.shape[-1] != dim:
        raise ValueError(f"x has dimension {arr.shape[-1]}, field expects {dim}")
    return arr


def zero_drift(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.zeros_like(x)


def product_field(h, dh, v, m: int, dim: int = 1, eval_a=None) -> SlowField:
    """Assemble a SlowField from product factors (drift defaults to zero)."""
    parts = ProductParts(h=h, dh=dh, v=v, m=m)

    def eval_b(x, y):
        return np.einsum("nim,nm->ni", parts.h(x), parts.v(y))

    def eval_db(x, y):
        return np.einsum("nikm,nm->nik", parts.dh(x), parts.v(y))

    return SlowField(
        dim=dim,
        eval_a=eval_a if eval_a is not None else zero_drift,
        eval_b=eval_b,
        eval_db=eval_db,
        product=parts,
    )


def fs_step(x, y: float, n: int, field: SlowField) -> np.ndarray:
    """One slow update x + a(x, y)/n + b(x, y)/sqrt(n)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    xb = _as_batch_x(x, field.dim)
    yb = np.asarray([y], dtype=float)
    out = xb + field.eval_a(xb, yb) / n + field.eval_b(xb, yb) / math.sqrt(n)
    if not np.all(np.isfinite(out)):
        raise NumericBlowupError("slow step produced a non-finite state", x=x, y=y)
    return out[0]


def run_fast_slow(field: SlowField, xi, orbit: Orbit, n: int) -> CadlagGridPath:
    """The literal recursion along the first n orbit values."""
    if n > MAX_DENSE_STEPS:
        raise ValueError(
            f"n={n} exceeds the dense-path cap 2**24; "
            "use slow_marginal_ensemble to retain functionals only"
        )
    if len(orbit) < n:
        raise ValueError(f"orbit has {len(orbit)} values, need at least n={n}")
    d = field.dim
    sqrt_n = math.sqrt(n)
    values = np.empty((n + 1, d))
    x = np.asarray(xi, dtype=float).reshape(1, d).copy()
    values[0] = x[0]
    ys = orbit.values
    for k in range(n):
        y = ys[k : k + 1]
        x = x + field.eval_a(x, y) / n + field.eval_b(x, y) / sqrt_n
        if not np.all(np.isfinite(x)):
            raise NumericBlowupError(
                "slow recursion blew up", k=k, x=values[k].copy(), y=float(ys[k])
            )
        values[k + 1] = x[0]
    return CadlagGridPath(n, values)


def _mean_interpolators(raw_b, probes: np.ndarray, orbit: Orbit,
                        dim: int, chunk: int = 262_144):
    """Per-probe Birkhoff means of b and a piecewise-linear interpolant.

    Returns (mean_of_b, d_mean_dx) handles for batched x.  Only d == 1 gets
    genuine linear interpolation; higher dimensions fall back to the
    nearest probe (the experiment matrix only exercises product fields and
    one-dimensional general fields).
    """
    probes = np.asarray(probes, dtype=float)
    if probes.ndim == 1:
        probes = probes[:, None]
    npr = probes.shape[0]
    means = np.zeros((npr, dim))
    total = len(orbit)
    for start, stop in chunk_ranges(total, chunk):
        yc = orbit.values[start:stop]
        for j in range(npr):
            xt = np.broadcast_to(probes[j], (yc.shape[0], dim))
            means[j] += raw_b(xt, yc).sum(axis=0)
    means /= total

    if dim == 1:
        order = np.argsort(probes[:, 0])
        xs = probes[order, 0]
        ms = means[order, 0]
        slopes = np.gradient(ms, xs) if npr > 1 else np.zeros(1)

        def mean_b(x):
            return np.interp(x[:, 0], xs, ms)[:, None]

        def dmean_b(x):
            return np.interp(x[:, 0], xs, slopes)[:, None, None]

        return mean_b, dmean_b

    def mean_b(x):
        idx = np.argmin(
            ((x[:, None, :] - probes[None, :, :]) ** 2).sum(axis=2), axis=1
        )
        return means[idx]

    def dmean_b(x):
        return np.zeros((x.shape[0], dim, dim))

    return mean_b, dmean_b


def center_field(field: SlowField, reference_orbit: Orbit,
                 probes: Optional[Sequence] = None,
                 min_orbit_length: int = 100_000) -> SlowField:
    """Return the field with b replaced by its mean-centered version.

    Product form subtracts the (scalar, per-component) Birkhoff mean of v
    exactly; the general form subtracts a per-x mean interpolated across
    the probe points.  The drift handle is untouched.
    """
    if len(reference_orbit) < min_orbit_length:
        raise ValueError(
            f"reference orbit has {len(reference_orbit)} points, "
            f"need at least {min_orbit_length}"
        )
    if field.product is not None:
        parts = field.product
        vbar = np.asarray(parts.v(reference_orbit.values)).reshape(
            len(reference_orbit), parts.m
        ).mean(axis=0)

        raw_v = parts.v

        def v_centered(y):
            return np.asarray(raw_v(y)).reshape(-1, parts.m) - vbar

        return product_field(
            parts.h, parts.dh, v_centered, parts.m,
            dim=field.dim, eval_a=field.eval_a,
        )

    if probes is None:
        raise ValueError("centering a non-product field requires probe points")
    raw_b, raw_db = field.eval_b, field.eval_db
    mean_b, dmean_b = _mean_interpolators(raw_b, np.asarray(probes, dtype=float),
                                          reference_orbit, field.dim)

    def eval_b(x, y):
        return raw_b(x, y) - mean_b(x)

    def eval_db(x, y):
        return raw_db(x, y) - dmean_b(x)

    return SlowField(dim=field.dim, eval_a=field.eval_a,
                     eval_b=eval_b, eval_db=eval_db, product=None)


def centering_deviation(field: SlowField, orbit: Orbit, probes) -> float:
    """Largest |Birkhoff mean of b(x, .)| over the probe points."""
    worst = 0.0
    probes = np.asarray(probes, dtype=float)
    if probes.ndim == 1:
        probes = probes[:, None]
    for j in range(probes.shape[0]):
        xt = np.broadcast_to(probes[j], (len(orbit), field.dim))
        mean = field.eval_b(xt, orbit.values).mean(axis=0)
        worst = max(worst, float(np.linalg.norm(mean)))
    return worst


def drift_average_deviation(field: SlowField, x, orbit: Orbit, n: int,
                            abar: Callable) -> float:
    """| n^{-1} sum_{k<n} a(x, Y_k) - abar(x) | (Euclidean norm)."""
    if len(orbit) < n:
        raise ValueError(f"orbit has {len(orbit)} values, need at least n={n}")
    xb = np.asarray(x, dtype=float).reshape(field.dim)
    xt = np.broadcast_to(xb, (n, field.dim))
    emp = field.eval_a(xt, orbit.values[:n]).mean(axis=0)
    target = np.asarray(abar(xb), dtype=float).reshape(field.dim)
    return float(np.linalg.norm(emp - target))


DYADIC_TIMES = (0.25, 0.5, 0.75, 1.0)


@dataclass(frozen=True)
class SlowMarginals:
    """Marginals of an ensemble of slow paths at fixed times, plus the sup."""

    times: tuple
    marginals: np.ndarray  # (samples, len(times), d)
    sup_norm: np.ndarray   # (samples,), sup over grid times of |x_n(t)|
    seed: int
    task_offset: int

    def at_time(self, t: float) -> np.ndarray:
        idx = self.times.index(t)
        return self.marginals[:, idx, :]

    def terminal(self) -> np.ndarray:
        return self.marginals[:, -1, :]


def slow_marginal_ensemble(field: SlowField, xi, params: MapParams,
                           measure: MeasureSpec, n: int, samples: int,
                           seed: int, times: Sequence[float] = DYADIC_TIMES,
                           chunk: int = 1024, threads: int = 1,
                           task_offset: int = 0) -> SlowMarginals:
    """Run the slow recursion over an ensemble of independent orbits.

    Retains only the marginals x_n(t) at the requested times and the path
    supremum.  Sample i uses orbit stream (seed, task_offset + i); results
    are reduced in fixed chunk order, so the output is bit-identical for
    any thread count.
    """
    times = tuple(times)
    targets = [min(int(math.floor(n * t)), n) for t in times]
    d = field.dim
    xi_vec = np.asarray(xi, dtype=float).reshape(d)
    sqrt_n = math.sqrt(n)

    def run_chunk(rng_range):
        start, stop = rng_range
        count = stop - start
        ys = orbit_matrix(params, measure, n, count, seed,
                          task_offset=task_offset + start)
        x = np.tile(xi_vec, (count, 1))
        marg = np.empty((count, len(times), d))
        sup = np.linalg.norm(x, axis=1)
        for ti, kk in enumerate(targets):
            if kk == 0:
                marg[:, ti, :] = x
        for k in range(n):
            y = ys[:, k]
            x = x + field.eval_a(x, y) / n + field.eval_b(x, y) / sqrt_n
            np.maximum(sup, np.linalg.norm(x, axis=1), out=sup)
            for ti, kk in enumerate(targets):
                if kk == k + 1:
                    marg[:, ti, :] = x
        if not np.all(np.isfinite(x)):
            raise NumericBlowupError("slow ensemble blew up", n=n,
                                     chunk=(start, stop))
        return marg, sup

    ranges = list(chunk_ranges(samples, chunk))
    results = ordered_map(run_chunk, ranges, threads=threads)
    marginals = np.concatenate([r[0] for r in results], axis=0)
    sup = np.concatenate([r[1] for r in results], axis=0)
    return SlowMarginals(times=times, marginals=marginals, sup_norm=sup,
                         seed=seed, task_offset=task_offset)
