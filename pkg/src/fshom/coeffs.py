"""Limiting SDE coefficients estimated from long orbits.

The bilinear forms on centered observables are

    B1(v, w) = time average of v * w,
    B2(v, w) = sum over lags l >= 1 of the time average of v * (w o T^l),

combined as B = B1/2 + B2.  The diffusion matrix is
Sigma^{ij}(x) = B(b^i(x,.), b^j(x,.)) + B(b^j(x,.), b^i(x,.)), its PSD
square root gives sigma, and the corrected drift is
atilde^i(x) = abar^i(x) + sum_k B2(b^k(x,.), d_k b^i(x,.)).

All lag averages come from a single long orbit by index shifting; the lag
sum is truncated at L with a decay-based early stop, and the magnitude of
the last computed lag term is reported as a tail proxy.  Product-form
fields get exact per-component correlation tables (one orbit pass, O(1)
work per x); general fields are estimated per x with caching.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np

from . import rng as streams
from .fastslow import NumericBlowupError, SlowField
from .maps import Orbit
from .util import chunk_ranges

#: default truncation of the lag sum
DEFAULT_LAG_TRUNCATION = 50
#: stop the lag sum after this many consecutive negligible terms
STOP_WINDOW = 5
#: a lag term is negligible below STOP_RTOL * (scale of the form)
STOP_RTOL = 1e-4
#: eigenvalues of Sigma below -PSD_REL_TOL * ||Sigma||_2 signal a broken estimate
PSD_REL_TOL = 1e-8


class NotPSDError(ValueError):
    """Sigma has an eigenvalue below the negative tolerance."""


def estimate_B1(v, w, orbit: Orbit) -> float:
    """Time average of v * w along the orbit."""
    if len(orbit) == 0:
        raise ValueError("cannot estimate from an empty orbit")
    return float(np.mean(np.asarray(v(orbit.values)) * np.asarray(w(orbit.values))))


@dataclass(frozen=True)
class B2Estimate:
    """Truncated lag sum with its tail proxy."""

    value: float
    last_term: float
    terms_used: int

    def __float__(self) -> float:
        return self.value


def estimate_B2(v, w, orbit: Orbit, L: int, auto_stop: bool = False) -> B2Estimate:
    """Sum over lags 1..L of the shifted time average of v * (w o T^l).

    Each lag term reuses the single orbit by index shifting.  With
    auto_stop, the sum ends early once STOP_WINDOW consecutive terms fall
    below STOP_RTOL times the observable scale.
    """
    if L < 0:
        raise ValueError(f"truncation L must be nonnegative, got {L}")
    if len(orbit) <= L:
        raise ValueError(f"orbit of length {len(orbit)} too short for L={L}")
    if L == 0:
        return B2Estimate(value=0.0, last_term=0.0, terms_used=0)
    va = np.asarray(v(orbit.values), dtype=float)
    wa = np.asarray(w(orbit.values), dtype=float)
    scale = max(
        math.sqrt(float(np.mean(va * va)) * float(np.mean(wa * wa))), 1e-300
    )
    total = 0.0
    last = 0.0
    quiet = 0
    used = 0
    for lag in range(1, L + 1):
        term = float(np.mean(va[:-lag] * wa[lag:]))
        total += term
        last = term
        used = lag
        if auto_stop:
            quiet = quiet + 1 if abs(term) < STOP_RTOL * scale else 0
            if quiet >= STOP_WINDOW:
                break
    return B2Estimate(value=total, last_term=abs(last), terms_used=used)


def psd_sqrt(S: np.ndarray, tol: float) -> np.ndarray:
    """Unique PSD square root via symmetric eigendecomposition.

    Eigenvalues in [-tol, 0) are clamped to zero; anything below -tol is a
    broken Sigma estimate and raises NotPSDError.
    """
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {S.shape}")
    asym = float(np.max(np.abs(S - S.T))) if S.size else 0.0
    if asym > max(tol, 0.0):
        raise ValueError(f"matrix is not symmetric within tol: asymmetry {asym:g}")
    w, Q = np.linalg.eigh(0.5 * (S + S.T))
    if w.size and float(w.min()) < -tol:
        raise NotPSDError(f"eigenvalue {w.min():g} below -{tol:g}")
    return (Q * np.sqrt(np.clip(w, 0.0, None))) @ Q.T


def _psd_sqrt_stack(Ss: np.ndarray, rel_tol: float) -> np.ndarray:
    if Ss.shape[-1] == 1:
        w = Ss[..., 0, 0]
        scale = np.maximum(np.abs(w), 1e-300)
        if float((w / scale).min()) < -rel_tol:
            raise NotPSDError("stacked Sigma has an eigenvalue below tolerance")
        return np.sqrt(np.clip(w, 0.0, None))[..., None, None]
    w, Q = np.linalg.eigh(0.5 * (Ss + np.swapaxes(Ss, -1, -2)))
    scale = np.maximum(np.abs(w).max(axis=-1), 1e-300)
    if float((w / scale[..., None]).min()) < -rel_tol:
        raise NotPSDError("stacked Sigma has an eigenvalue below tolerance")
    root = np.sqrt(np.clip(w, 0.0, None))
    return np.einsum("...ik,...k,...jk->...ij", Q, root, Q)


@dataclass
class CoefficientSet:
    """Evaluable limiting coefficients with per-x caching.

    Scalar handles take x of shape (d,); the *_batch variants take
    (N, d) stacks and fall back to a loop when no vectorized form exists.
    """

    dim: int
    abar: Callable[[np.ndarray], np.ndarray]
    Sigma: Callable[[np.ndarray], np.ndarray]
    atilde: Callable[[np.ndarray], np.ndarray]
    psd_rel_tol: float = PSD_REL_TOL
    provenance: dict = dc_field(default_factory=dict)
    _batch_abar: Optional[Callable] = None
    _batch_Sigma: Optional[Callable] = None
    _batch_atilde: Optional[Callable] = None

    def sigma(self, x) -> np.ndarray:
        S = self.Sigma(np.asarray(x, dtype=float).reshape(self.dim))
        tol = self.psd_rel_tol * max(float(np.linalg.norm(S, 2)), 1e-300)
        return psd_sqrt(S, tol)

    def abar_batch(self, xs: np.ndarray) -> np.ndarray:
        if self._batch_abar is not None:
            return self._batch_abar(xs)
        return np.stack([np.asarray(self.abar(x), float).reshape(self.dim)
                         for x in xs])

    def atilde_batch(self, xs: np.ndarray) -> np.ndarray:
        if self._batch_atilde is not None:
            return self._batch_atilde(xs)
        return np.stack([np.asarray(self.atilde(x), float).reshape(self.dim)
                         for x in xs])

    def Sigma_batch(self, xs: np.ndarray) -> np.ndarray:
        if self._batch_Sigma is not None:
            return self._batch_Sigma(xs)
        return np.stack([np.asarray(self.Sigma(x), float) for x in xs])

    def sigma_batch(self, xs: np.ndarray) -> np.ndarray:
        return _psd_sqrt_stack(self.Sigma_batch(xs), self.psd_rel_tol)

    def validate(self, probe_xs, sym_tol: float = 1e-12) -> None:
        """Invariant check on probes: symmetry, sigma^2 = Sigma, finiteness."""
        for x in np.atleast_2d(np.asarray(probe_xs, dtype=float)):
            S = np.asarray(self.Sigma(x), dtype=float)
            scale = max(float(np.abs(S).max()), 1.0)
            if float(np.abs(S - S.T).max()) > sym_tol * scale:
                raise ValueError(f"Sigma not symmetric at x={x}")
            root = self.sigma(x)
            if float(np.abs(root @ root - S).max()) > 1e-8 * scale:
                raise ValueError(f"sigma^2 deviates from Sigma at x={x}")
            vals = [self.abar(x), self.atilde(x), S, root]
            if not all(np.all(np.isfinite(np.asarray(t))) for t in vals):
                raise ValueError(f"non-finite coefficient at x={x}")


def correlation_tables(vals: np.ndarray, L: int,
                       auto_stop: bool = True) -> tuple[np.ndarray, np.ndarray, int, float]:
    """(B1, B2, lags used, last-term magnitude) for component values (N, m)."""
    N, m = vals.shape
    B1 = vals.T @ vals / N
    B2 = np.zeros((m, m))
    scale = max(float(np.abs(B1).max()), 1e-300)
    quiet = 0
    used = 0
    last = 0.0
    for lag in range(1, L + 1):
        term = vals[:-lag].T @ vals[lag:] / (N - lag)
        B2 += term
        last = float(np.abs(term).max())
        used = lag
        if auto_stop:
            quiet = quiet + 1 if last < STOP_RTOL * scale else 0
            if quiet >= STOP_WINDOW:
                break
    return B1, B2, used, last


def assemble_coefficients(field: SlowField, abar: Optional[Callable],
                          orbit: Orbit, L: int = DEFAULT_LAG_TRUNCATION,
                          probes=None, auto_stop: bool = True,
                          psd_rel_tol: float = PSD_REL_TOL) -> CoefficientSet:
    """Assemble (abar, Sigma, sigma, atilde) from a centered field.

    With abar=None the averaged drift is estimated from the same orbit.
    Product fields use the exact per-component correlation tables; general
    fields fall back to per-x estimation with caching (vectorized over the
    orbit, one evaluation sweep per new x).
    """
    d = field.dim
    N = len(orbit)
    prov = {
        "orbit_length": N,
        "lag_truncation": L,
        "gamma": orbit.params.gamma,
        "psd_rel_tol": psd_rel_tol,
    }
    drift_cache: dict = {}

    def abar_handle(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(d)
        if abar is not None:
            return np.asarray(abar(x), dtype=float).reshape(d)
        key = x.tobytes()
        if key not in drift_cache:
            acc = np.zeros(d)
            for start, stop in chunk_ranges(N, 1 << 20):
                yc = orbit.values[start:stop]
                xt = np.broadcast_to(x, (yc.shape[0], d))
                acc += field.eval_a(xt, yc).sum(axis=0)
            drift_cache[key] = acc / N
        return drift_cache[key]

    if field.product is not None:
        parts = field.product
        vals = np.asarray(parts.v(orbit.values), dtype=float).reshape(N, parts.m)
        B1, B2, used, last = correlation_tables(vals, L, auto_stop=auto_stop)
        Bsym = 0.5 * B1 + B2
        Bsym = Bsym + Bsym.T
        prov.update({"lags_used": used, "tail_proxy": last, "product": True})

        def Sigma_handle(x):
            h = np.asarray(parts.h(np.asarray(x, float).reshape(1, d)))[0]
            return np.einsum("ia,ab,jb->ij", h, Bsym, h)

        def atilde_handle(x):
            x = np.asarray(x, dtype=float).reshape(d)
            h = np.asarray(parts.h(x.reshape(1, d)))[0]
            dh = np.asarray(parts.dh(x.reshape(1, d)))[0]
            corr = np.einsum("ka,ikb,ab->i", h, dh, B2)
            return abar_handle(x) + corr

        def Sigma_batch(xs):
            h = np.asarray(parts.h(np.asarray(xs, float)))
            return np.einsum("nia,ab,njb->nij", h, Bsym, h)

        def atilde_batch(xs):
            xs = np.asarray(xs, dtype=float)
            h = np.asarray(parts.h(xs))
            dh = np.asarray(parts.dh(xs))
            corr = np.einsum("nka,nikb,ab->ni", h, dh, B2)
            if abar is None:
                base = np.stack([abar_handle(x) for x in xs])
            else:
                base = np.stack([np.asarray(abar(x), float).reshape(d) for x in xs])
            return base + corr

        return CoefficientSet(
            dim=d, abar=abar_handle, Sigma=Sigma_handle, atilde=atilde_handle,
            psd_rel_tol=psd_rel_tol, provenance=prov,
            _batch_Sigma=Sigma_batch, _batch_atilde=atilde_batch,
        )

    # general field: per-x tables over the full orbit, cached
    prov.update({"product": False})
    table_cache: dict = {}

    def tables_at(x: np.ndarray):
        key = x.tobytes()
        if key not in table_cache:
            xt = np.broadcast_to(x, (N, d))
            bvals = np.asarray(field.eval_b(xt, orbit.values), dtype=float)
            B1, B2, used, last = correlation_tables(bvals, L, auto_stop=auto_stop)
            dbvals = np.asarray(field.eval_db(xt, orbit.values), dtype=float)
            corr = np.zeros(d)
            for lag in range(1, used + 1):
                # sum_k of the lagged average of b^k[t] * d_k b^i[t + lag]
                corr += np.einsum(
                    "tk,tik->i", bvals[:-lag], dbvals[lag:]
                ) / (N - lag)
            table_cache[key] = (B1, B2, corr, used, last)
            prov.setdefault("lags_used", used)
            prov.setdefault("tail_proxy", last)
        return table_cache[key]

    def Sigma_handle(x):
        x = np.asarray(x, dtype=float).reshape(d)
        B1, B2, _, _, _ = tables_at(x)
        B = 0.5 * B1 + B2
        return B + B.T

    def atilde_handle(x):
        x = np.asarray(x, dtype=float).reshape(d)
        _, _, corr, _, _ = tables_at(x)
        return abar_handle(x) + corr

    if probes is not None:
        for x in np.atleast_2d(np.asarray(probes, dtype=float)):
            tables_at(x.reshape(d))

    return CoefficientSet(dim=d, abar=abar_handle, Sigma=Sigma_handle,
                          atilde=atilde_handle, psd_rel_tol=psd_rel_tol,
                          provenance=prov)


def constant_coefficients(abar_value, Sigma_value,
                          atilde_value=None) -> CoefficientSet:
    """Coefficient set with x-independent drift and diffusion."""
    a = np.atleast_1d(np.asarray(abar_value, dtype=float))
    S = np.atleast_2d(np.asarray(Sigma_value, dtype=float))
    at = a if atilde_value is None else np.atleast_1d(np.asarray(atilde_value, float))
    d = a.shape[0]
    return CoefficientSet(
        dim=d,
        abar=lambda x: a,
        Sigma=lambda x: S,
        atilde=lambda x: at,
        provenance={"constant": True},
        _batch_abar=lambda xs: np.broadcast_to(a, (len(xs), d)).copy(),
        _batch_Sigma=lambda xs: np.broadcast_to(S, (len(xs), d, d)).copy(),
        _batch_atilde=lambda xs: np.broadcast_to(at, (len(xs), d)).copy(),
    )


def euler_maruyama(coeffs: CoefficientSet, xi, steps: int, samples: int,
                   seed: int, return_paths: bool = False,
                   chunk: int = 2048, task_offset: int = 0) -> np.ndarray:
    """Left-point scheme X_{k+1} = X_k + atilde(X_k) dt + sigma(X_k) sqrt(dt) xi_k.

    Sample i draws its normals from stream (seed, task_offset + i), so the
    ensemble is deterministic under (seed, sample index) and independent
    of chunking.  Returns terminal values (samples, d), or the full paths
    (samples, steps+1, d) with return_paths.
    """
    if steps < 1:
        raise ValueError("steps must be at least 1")
    d = coeffs.dim
    xi_vec = np.asarray(xi, dtype=float).reshape(d)
    dt = 1.0 / steps
    sqrt_dt = math.sqrt(dt)
    out = np.empty((samples, steps + 1, d)) if return_paths else np.empty((samples, d))
    for start, stop in chunk_ranges(samples, chunk):
        count = stop - start
        noise = np.empty((count, steps, d))
        for i in range(count):
            gen = streams.stream(seed, task_offset + start + i, streams.DIFFUSION)
            noise[i] = gen.standard_normal((steps, d))
        x = np.tile(xi_vec, (count, 1))
        if return_paths:
            out[start:stop, 0] = x
        for k in range(steps):
            drift = coeffs.atilde_batch(x)
            diffusion = np.einsum("nij,nj->ni", coeffs.sigma_batch(x), noise[:, k])
            x = x + drift * dt + diffusion * sqrt_dt
            if return_paths:
                out[start:stop, k + 1] = x
        if not np.all(np.isfinite(x)):
            raise NumericBlowupError("Euler-Maruyama blew up",
                                     chunk=(start, stop), steps=steps)
        if not return_paths:
            out[start:stop] = x
    return out
