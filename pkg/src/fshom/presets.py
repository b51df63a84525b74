"""Named observables and slow fields used by configs and tests.

Configs stay declarative: a field is assembled from a named x-factor h
(with its analytic derivative) and a named fast observable v, giving the
product form b(x, y) = h(x) v(y) in one slow dimension.  The drift factor
is named the same way.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .fastslow import SlowField, product_field, zero_drift

TWO_PI = 2.0 * math.pi

#: fast observables v: [0, 1] -> R (all vectorized)
OBSERVABLES: dict[str, Callable] = {
    "cos2pi": lambda y: np.cos(TWO_PI * np.asarray(y)),
    "cos4pi": lambda y: np.cos(2.0 * TWO_PI * np.asarray(y)),
    "sin2pi": lambda y: np.sin(TWO_PI * np.asarray(y)),
    "cos2pi_plus_cos4pi": lambda y: (np.cos(TWO_PI * np.asarray(y))
                                     + np.cos(2.0 * TWO_PI * np.asarray(y))),
}

#: scalar x-factors h with analytic derivatives, for d = 1
H_FACTORS: dict[str, tuple[Callable, Callable]] = {
    "one": (lambda x: np.ones_like(x), lambda x: np.zeros_like(x)),
    "sin": (np.sin, np.cos),
    "cos": (np.cos, lambda x: -np.sin(x)),
}

#: drift fields a(x, y), batch convention (N, d), (N,) -> (N, d)
DRIFTS: dict[str, Callable] = {
    "zero": zero_drift,
}


def observable(name: str) -> Callable:
    try:
        return OBSERVABLES[name]
    except KeyError:
        raise KeyError(
            f"unknown observable {name!r}; available: {sorted(OBSERVABLES)}"
        ) from None


def make_product_field(h_name: str = "one", v_name: str = "cos2pi",
                       a_name: str = "zero") -> SlowField:
    """One-dimensional product field b(x, y) = h(x) v(y)."""
    try:
        h_scalar, dh_scalar = H_FACTORS[h_name]
    except KeyError:
        raise KeyError(
            f"unknown x-factor {h_name!r}; available: {sorted(H_FACTORS)}"
        ) from None
    v_scalar = observable(v_name)
    try:
        drift = DRIFTS[a_name]
    except KeyError:
        raise KeyError(f"unknown drift {a_name!r}; available: {sorted(DRIFTS)}") from None

    def h(x):
        return np.asarray(h_scalar(np.asarray(x)[:, 0]))[:, None, None]

    def dh(x):
        return np.asarray(dh_scalar(np.asarray(x)[:, 0]))[:, None, None, None]

    def v(y):
        return np.asarray(v_scalar(np.asarray(y)))[:, None]

    return product_field(h, dh, v, m=1, dim=1, eval_a=drift)
