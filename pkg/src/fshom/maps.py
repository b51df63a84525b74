"""Intermittent interval maps, orbit generation, and Birkhoff averaging.

The fast dynamics is the intermittent family on [0, 1]

    T(y) = y * (1 + 2**gamma * y**gamma)   for y <= 1/2,
    T(y) = 2*y - 1                         for y >  1/2,

with a neutral fixed point at 0.  gamma = 0 is the doubling map; for
gamma < 1 there is a unique absolutely continuous invariant probability
measure, approximated everywhere in this package by Birkhoff (time)
averages over long orbits -- the invariant density is never tabulated.

Orbit backends
--------------
* ``iterate_orbit`` is the literal float64 recursion: values[k+1] is
  bit-for-bit ``lsv_step(values[k], gamma)``.
* For gamma == 0 the map is the exact binary shift, so float64 iteration
  sheds one bit of state per step and every double collapses onto the
  fixed point within ~53 steps.  ``generate_orbit`` / ``orbit_matrix``
  therefore realise doubling-map orbits exactly: a Lebesgue-distributed
  initial condition has i.i.d. fair-coin binary digits, the orbit is the
  shift acting on that digit tape, and each emitted value is the exact
  state rounded once to float64.  For gamma > 0 the nonlinear left branch
  reinjects rounding noise every visit and plain float64 iteration is
  statistically sound, so the literal recursion is used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from . import rng as streams

LN2 = math.log(2.0)
EPS = float(np.finfo(np.float64).eps)

#: left-branch operands below this are glued to the neutral fixed point
#: (subnormal guard for long sticky excursions)
TINY = 1e-300

#: burn-in length used when the invariant measure is requested without one
DEFAULT_BURN_IN = 10_000

LEBESGUE = "lebesgue"
INVARIANT = "invariant"


@dataclass(frozen=True)
class MapParams:
    """Intermittency exponent of one member of the map family.

    gamma < 1 is required for a unique a.c. invariant measure; any
    experiment claiming an SDE limit additionally needs gamma < 1/2
    (enforced by the experiment runner, not here).
    """

    gamma: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")


@dataclass(frozen=True)
class MeasureSpec:
    """Initial-condition law: Lebesgue, or Lebesgue pushed through a burn-in."""

    kind: str = LEBESGUE
    burn_in: int = DEFAULT_BURN_IN

    def __post_init__(self) -> None:
        if self.kind not in (LEBESGUE, INVARIANT):
            raise ValueError(f"unknown measure kind {self.kind!r}")
        if self.burn_in < 0:
            raise ValueError("burn_in must be nonnegative")

    @property
    def effective_burn_in(self) -> int:
        return self.burn_in if self.kind == INVARIANT else 0


@dataclass(frozen=True)
class Orbit:
    """A finite fast trajectory (values in [0, 1]) and its map parameters."""

    values: np.ndarray
    params: MapParams

    def __post_init__(self) -> None:
        self.values.flags.writeable = False

    def __len__(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, k):
        return self.values[k]


@njit(cache=True)
def _step(y: float, gamma: float) -> float:
    if y <= 0.5:
        if gamma == 0.0:
            return 2.0 * y
        if y < TINY:
            return 0.0
        z = y * (1.0 + math.exp(gamma * (LN2 + math.log(y))))
        # rounding may push the left branch a hair above 1 near y = 1/2
        if z > 1.0 and z <= 1.0 + 4.0 * EPS:
            z = 1.0
        return z
    return 2.0 * y - 1.0


@njit(cache=True)
def _fill_orbit(y0: float, gamma: float, out: np.ndarray) -> None:
    y = y0
    for k in range(out.shape[0]):
        out[k] = y
        y = _step(y, gamma)


@njit(cache=True)
def _burn(y: float, gamma: float, steps: int) -> float:
    for _ in range(steps):
        y = _step(y, gamma)
    return y


@njit(cache=True)
def _fill_orbit_block(y0s: np.ndarray, gamma: float, out: np.ndarray) -> None:
    for i in range(y0s.shape[0]):
        y = y0s[i]
        for k in range(out.shape[1]):
            out[i, k] = y
            y = _step(y, gamma)


@njit(cache=True)
def _burn_block(ys: np.ndarray, gamma: float, steps: int) -> None:
    for i in range(ys.shape[0]):
        y = ys[i]
        for _ in range(steps):
            y = _step(y, gamma)
        ys[i] = y


def _shift_orbit_from_words(words: np.ndarray, length: int) -> np.ndarray:
    """Doubling-map orbit read off a packed random bit tape.

    ``words`` is a uint64 array (or a (samples, n_words) matrix), each word
    carrying 64 tape bits MSB first.  Entry k of the result is the 64-bit
    window starting at tape bit k, i.e. the k-th binary shift of the
    expansion 0.b0 b1 b2 ..., rounded once to float64.
    """
    words = np.atleast_2d(words)
    samples = words.shape[0]
    out = np.empty((samples, length))
    scale = 2.0 ** -64
    lead, trail = words[:, :-1], words[:, 1:]
    for r in range(64):
        if r == 0:
            win = lead
        else:
            win = (lead << np.uint64(r)) | (trail >> np.uint64(64 - r))
        seg = out[:, r::64]
        seg[:] = win.astype(np.float64)[:, : seg.shape[1]] * scale
    return out


def _words_needed(length: int) -> int:
    return length // 64 + 2


def lsv_step(y: float, gamma: float) -> float:
    """One application of the map.  y = 1/2 takes the left branch."""
    if not 0.0 <= y <= 1.0:
        raise ValueError(f"y must lie in [0, 1], got {y}")
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"gamma must lie in [0, 1), got {gamma}")
    return float(_step(float(y), float(gamma)))


def iterate_orbit(y0: float, params: MapParams, length: int) -> Orbit:
    """The literal float64 orbit of y0: exactly `length` values, values[0] = y0."""
    if length <= 0:
        raise ValueError("orbit length must be positive")
    if not 0.0 <= y0 <= 1.0:
        raise ValueError(f"y0 must lie in [0, 1], got {y0}")
    out = np.empty(length)
    _fill_orbit(float(y0), params.gamma, out)
    return Orbit(out, params)


def sample_initial(measure: MeasureSpec, params: MapParams,
                   rng: np.random.Generator) -> float:
    """Draw one initial condition: uniform, optionally pushed through burn-in."""
    y = float(rng.random())
    burn = measure.effective_burn_in
    if burn > 0:
        y = float(_burn(y, params.gamma, burn))
    return y


def birkhoff_average(v, orbit: Orbit) -> float:
    """Time average of the observable v along the orbit.

    v must accept an ndarray of points in [0, 1] and return an array of
    the same length (every observable in this package is vectorized).
    """
    if len(orbit) == 0:
        raise ValueError("cannot average over an empty orbit")
    return float(np.mean(v(orbit.values)))


def generate_orbit(params: MapParams, measure: MeasureSpec, length: int,
                   seed: int, task: int = 0) -> Orbit:
    """Sample an initial condition from `measure` and return its orbit.

    Stream identity is (seed, task); identical arguments give bit-identical
    orbits.  See the module docstring for the gamma == 0 backend.
    """
    if length <= 0:
        raise ValueError("orbit length must be positive")
    gen = streams.stream(seed, task, streams.ORBIT)
    burn = measure.effective_burn_in
    if params.gamma == 0.0:
        total = length + burn
        words = streams.random_words(gen, _words_needed(total))
        vals = _shift_orbit_from_words(words, total)[0, burn:].copy()
    else:
        y0 = sample_initial(measure, params, gen)
        vals = np.empty(length)
        _fill_orbit(y0, params.gamma, vals)
    return Orbit(vals, params)


def orbit_matrix(params: MapParams, measure: MeasureSpec, length: int,
                 samples: int, seed: int, task_offset: int = 0) -> np.ndarray:
    """(samples, length) matrix of independent orbits, one stream per row.

    Row i is drawn from stream (seed, task_offset + i), so any chunking of
    a large ensemble reproduces the same rows.
    """
    if length <= 0:
        raise ValueError("orbit length must be positive")
    if samples <= 0:
        raise ValueError("sample count must be positive")
    burn = measure.effective_burn_in
    if params.gamma == 0.0:
        total = length + burn
        nw = _words_needed(total)
        words = np.empty((samples, nw), dtype=np.uint64)
        for i in range(samples):
            gen = streams.stream(seed, task_offset + i, streams.ORBIT)
            words[i] = streams.random_words(gen, nw)
        return np.ascontiguousarray(_shift_orbit_from_words(words, total)[:, burn:])
    y0 = np.empty(samples)
    for i in range(samples):
        gen = streams.stream(seed, task_offset + i, streams.ORBIT)
        y0[i] = gen.random()
    if burn > 0:
        _burn_block(y0, params.gamma, burn)
    out = np.empty((samples, length))
    _fill_orbit_block(y0, params.gamma, out)
    return out
