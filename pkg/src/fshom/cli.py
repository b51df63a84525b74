"""Declarative experiment runner.

A single JSON document describes one homogenization experiment: the map
(or map family), the initial-condition law, the slow field, grid sizes,
sample counts, seed, and the checks to certify.  The runner executes the
pipeline simulate -> lift -> estimate -> compare -> report and emits
machine-readable artifacts:

    paths.csv    a few dense slow paths
    lift.csv     first and second level of one orbit lift per grid time
    coeffs.csv   coefficient table over the probe grid
    report.jsonl one record per check: {check, params, statistic, target,
                 tol, pass, runtime_ms}, preceded by the resolved config
    summary.txt  human-readable one-line-per-check summary

Subcommands simulate | lift | coeffs | compare | checks | besov each run
the pipeline up to and including their stage; `run` executes everything.
Exit status: 0 all configured checks pass, 2 config/schema violation,
3 numeric failure (the failing check is named on stderr).

Unknown config keys are errors.  CSV output is RFC 4180 with a header
row, '.' decimal separator, and 17 significant digits.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np

try:
    import jsonschema
except ImportError:  # pragma: no cover
    jsonschema = None

from . import besov as besov_mod
from . import coeffs as coeffs_mod
from . import rng as streams
from . import roughpath as rp_mod
from . import stats as stats_mod
from .fastslow import (NumericBlowupError, center_field, run_fast_slow,
                       slow_marginal_ensemble)
from .maps import MapParams, MeasureSpec, generate_orbit, INVARIANT, LEBESGUE
from .presets import make_product_field, DRIFTS, H_FACTORS, OBSERVABLES
from .rde import VectorFieldPair, solve_rde

#: stream task index reserved for the long estimation orbit (sample
#: streams use task indices 0..samples-1)
ESTIMATION_ORBIT_TASK = 1 << 40

#: gamma at or above this triggers a truncation-adequacy warning in reports
GAMMA_TAIL_WARNING = 0.45

STAGE_ORDER = ["simulate", "lift", "coeffs", "compare", "checks", "besov"]

KNOWN_CHECKS = [
    "sde-limit", "moment-scaling", "level2-mean", "covariance",
    "consistency", "chen", "interpolation", "psd", "besov-embedding",
]

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["map", "field", "n", "samples", "seed"],
    "properties": {
        "name": {"type": "string"},
        "map": {
            "type": "object",
            "additionalProperties": False,
            "required": ["gamma"],
            "properties": {
                "gamma": {
                    "oneOf": [
                        {"type": "number"},
                        {"type": "array", "items": {"type": "number"},
                         "minItems": 1},
                    ]
                }
            },
        },
        "measure": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": [LEBESGUE, INVARIANT]},
                "burn_in": {"type": "integer", "minimum": 0},
            },
        },
        "field": {
            "type": "object",
            "additionalProperties": False,
            "required": ["v"],
            "properties": {
                "h": {"enum": sorted(H_FACTORS)},
                "v": {"enum": sorted(OBSERVABLES)},
                "a": {"enum": sorted(DRIFTS)},
                "center": {"type": "boolean"},
            },
        },
        "n": {
            "oneOf": [
                {"type": "integer", "minimum": 1},
                {"type": "array", "items": {"type": "integer", "minimum": 1},
                 "minItems": 1},
            ]
        },
        "samples": {"type": "integer", "minimum": 1},
        "xi": {"type": "number"},
        "orbit_length": {"type": "integer", "minimum": 1},
        "L": {"type": "integer", "minimum": 0},
        "q": {"type": "number"},
        "p": {"type": "number"},
        "alpha": {"type": "number"},
        "em_steps": {"type": "integer", "minimum": 1},
        "quadrature": {"type": "integer", "minimum": 64},
        "besov_samples": {"type": "integer", "minimum": 1},
        "path_dump": {"type": "integer", "minimum": 0},
        "probes": {"type": "array", "items": {"type": "number"}, "minItems": 1},
        "seed": {"type": "integer"},
        "tolerances": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "ks": {"type": "number"},
                "chen": {"type": "number"},
                "consistency": {"type": "number"},
                "interp_slack": {"type": "number"},
                "psd": {"type": "number"},
                "centering": {"type": "number"},
                "moment_factor": {"type": "number"},
                "z": {"type": "number"},
                "besov_spread": {"type": "number"},
            },
        },
        "checks": {"type": "array", "items": {"enum": KNOWN_CHECKS}},
        "compare": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "reference": {"enum": ["analytic-normal", "euler-maruyama"]},
                "mean": {"type": "number"},
                "variance": {"type": "number", "minimum": 0},
            },
        },
        "outputs": {"type": "string"},
    },
}

DEFAULT_TOLERANCES = {
    "ks": 0.02,
    "chen": 1e-12,
    "consistency": 1e-12,
    "interp_slack": 1e-10,
    "psd": 1e-10,
    "centering": 1e-3,
    "moment_factor": 2.0,
    "z": 3.0,
    "besov_spread": 3.0,
}


class ConfigError(ValueError):
    """Schema violation or out-of-range parameter (exit code 2)."""


@dataclass
class ExperimentConfig:
    """Fully resolved experiment description (all defaults expanded)."""

    name: str
    gammas: list
    ns: list
    measure_kind: str
    burn_in: int
    field_h: str
    field_v: str
    field_a: str
    center: bool
    samples: int
    xi: float
    orbit_length: int
    L: int
    q: float
    p: float
    alpha: float
    em_steps: int
    quadrature: int
    besov_samples: int
    path_dump: int
    probes: list
    seed: int
    tolerances: dict
    checks: list
    compare_reference: str
    compare_mean: float
    compare_variance: Optional[float]
    outputs: str

    @property
    def terminal_gamma(self) -> float:
        return self.gammas[-1]

    @property
    def terminal_n(self) -> int:
        return self.ns[-1]

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def resolve_config(raw: dict) -> ExperimentConfig:
    """Validate a raw config document and expand every default."""
    if jsonschema is not None:
        try:
            jsonschema.validate(raw, CONFIG_SCHEMA)
        except jsonschema.ValidationError as err:
            path = "/".join(str(p) for p in err.absolute_path) or "<root>"
            raise ConfigError(f"config field {path}: {err.message}") from None
    gammas = raw["map"]["gamma"]
    gammas = list(gammas) if isinstance(gammas, list) else [gammas]
    ns = raw["n"]
    ns = list(ns) if isinstance(ns, list) else [ns]
    if len(gammas) > 1 and len(gammas) != len(ns):
        raise ConfigError(
            f"map/gamma: a gamma sequence of length {len(gammas)} must pair "
            f"with an n list of the same length (got {len(ns)})"
        )
    if len(gammas) == 1 and len(ns) > 1:
        gammas = gammas * len(ns)
    for g in gammas:
        if not 0.0 <= g < 1.0:
            raise ConfigError(f"map/gamma: gamma={g} outside [0, 1)")
    measure = raw.get("measure", {})
    fieldspec = raw.get("field", {})
    tolerances = dict(DEFAULT_TOLERANCES)
    tolerances.update(raw.get("tolerances", {}))
    checks = list(raw.get("checks", ["sde-limit"]))
    compare = raw.get("compare", {})
    q = float(raw.get("q", 2.0))
    p = float(raw.get("p", 2.5))
    # the default alpha must sit inside (1/q, 1) for the default q
    alpha = float(raw.get("alpha", 0.6))
    cfg = ExperimentConfig(
        name=raw.get("name", "experiment"),
        gammas=[float(g) for g in gammas],
        ns=[int(n) for n in ns],
        measure_kind=measure.get("kind", LEBESGUE),
        burn_in=int(measure.get("burn_in", 10_000)),
        field_h=fieldspec.get("h", "one"),
        field_v=fieldspec["v"],
        field_a=fieldspec.get("a", "zero"),
        center=bool(fieldspec.get("center", True)),
        samples=int(raw["samples"]),
        xi=float(raw.get("xi", 0.0)),
        orbit_length=int(raw.get("orbit_length", 10_000_000)),
        L=int(raw.get("L", coeffs_mod.DEFAULT_LAG_TRUNCATION)),
        q=q,
        p=p,
        alpha=alpha,
        em_steps=int(raw.get("em_steps", 2000)),
        quadrature=int(raw.get("quadrature", besov_mod.DEFAULT_QUADRATURE)),
        besov_samples=int(raw.get("besov_samples", 64)),
        path_dump=int(raw.get("path_dump", 8)),
        probes=[float(x) for x in raw.get("probes", [0.0, 0.5, 1.0])],
        seed=int(raw["seed"]),
        tolerances=tolerances,
        checks=checks,
        compare_reference=compare.get("reference", "euler-maruyama"),
        compare_mean=float(compare.get("mean", 0.0)),
        compare_variance=(float(compare["variance"])
                          if "variance" in compare else None),
        outputs=raw.get("outputs", "out"),
    )
    if q <= 1.0:
        raise ConfigError(f"q: moment parameter must exceed 1, got {q}")
    if not 2.0 < p < 3.0:
        raise ConfigError(f"p: variation parameter must lie in (2, 3), got {p}")
    if not (1.0 / q) < alpha < 1.0:
        raise ConfigError(f"alpha: must lie in (1/q, 1), got {alpha}")
    if "sde-limit" in cfg.checks:
        bad = [g for g in cfg.gammas if g >= 0.5]
        if bad:
            raise ConfigError(
                f"map/gamma: gamma={bad[0]} outside [0, 0.5) but the "
                "'sde-limit' check claims a diffusion limit"
            )
    if cfg.compare_reference == "analytic-normal" and cfg.compare_variance is None:
        raise ConfigError("compare/variance: required for analytic-normal reference")
    return cfg


class Workspace:
    """Lazy cache of the heavyweight pipeline artifacts for one config."""

    def __init__(self, cfg: ExperimentConfig, threads: int = 1):
        self.cfg = cfg
        self.threads = threads
        self._cache: dict = {}
        self.records: list[dict] = []

    @property
    def measure(self) -> MeasureSpec:
        return MeasureSpec(kind=self.cfg.measure_kind, burn_in=self.cfg.burn_in)

    def map_params(self, gamma: Optional[float] = None) -> MapParams:
        return MapParams(self.cfg.terminal_gamma if gamma is None else gamma)

    def long_orbit(self):
        if "long_orbit" not in self._cache:
            self._cache["long_orbit"] = generate_orbit(
                self.map_params(), self.measure, self.cfg.orbit_length,
                self.cfg.seed, task=ESTIMATION_ORBIT_TASK,
            )
        return self._cache["long_orbit"]

    def fielder(self):
        """(raw field, centered field): centering uses the long orbit."""
        if "field" not in self._cache:
            raw = make_product_field(self.cfg.field_h, self.cfg.field_v,
                                     self.cfg.field_a)
            centered = (center_field(raw, self.long_orbit())
                        if self.cfg.center else raw)
            self._cache["field"] = (raw, centered)
        return self._cache["field"]

    def centered_observable(self):
        """The centered v as a scalar observable (m = 1 product fields)."""
        _, centered = self.fielder()
        parts = centered.product

        def v(y):
            return np.asarray(parts.v(np.asarray(y).ravel()))[:, 0].reshape(
                np.asarray(y).shape
            )

        return v

    def coefficients(self) -> coeffs_mod.CoefficientSet:
        if "coefficients" not in self._cache:
            _, centered = self.fielder()
            self._cache["coefficients"] = coeffs_mod.assemble_coefficients(
                centered, None, self.long_orbit(), L=self.cfg.L,
                probes=[[x] for x in self.cfg.probes],
            )
        return self._cache["coefficients"]

    def slow_marginals(self):
        if "slow_marginals" not in self._cache:
            _, centered = self.fielder()
            self._cache["slow_marginals"] = slow_marginal_ensemble(
                centered, [self.cfg.xi], self.map_params(), self.measure,
                self.cfg.terminal_n, self.cfg.samples, self.cfg.seed,
                threads=self.threads,
            )
        return self._cache["slow_marginals"]

    def reference_terminals(self) -> np.ndarray:
        if "reference" not in self._cache:
            if self.cfg.compare_reference == "analytic-normal":
                self._cache["reference"] = None
            else:
                terminal = coeffs_mod.euler_maruyama(
                    self.coefficients(), [self.cfg.xi], self.cfg.em_steps,
                    self.cfg.samples, self.cfg.seed,
                )
                self._cache["reference"] = terminal[:, 0]
        return self._cache["reference"]

    def add_record(self, check: str, statistic: float, target: float,
                   tol: float, passed: bool, params: dict,
                   runtime_ms: float) -> dict:
        record = {
            "check": check,
            "params": params,
            "statistic": float(statistic),
            "target": float(target),
            "tol": float(tol),
            "pass": bool(passed),
            "runtime_ms": round(float(runtime_ms), 3),
        }
        self.records.append(record)
        return record


# ---------------------------------------------------------------------------
# checks
# ---------------------------------------------------------------------------

def check_sde_limit(ws: Workspace) -> None:
    cfg = ws.cfg
    t0 = time.perf_counter()
    empirical = ws.slow_marginals().terminal()[:, 0]
    if cfg.compare_reference == "analytic-normal":
        ref = stats_mod.normal_cdf(cfg.compare_mean, cfg.compare_variance)
    else:
        ref = ws.reference_terminals()
    ks = stats_mod.ks_distance(empirical, ref)
    tol = cfg.tolerances["ks"]
    params = {
        "n": cfg.terminal_n, "samples": cfg.samples,
        "gamma": cfg.terminal_gamma, "reference": cfg.compare_reference,
    }
    if cfg.terminal_gamma >= GAMMA_TAIL_WARNING:
        params["warning"] = ("gamma close to 1/2: lag-sum truncation "
                             "adequacy is not guaranteed")
    ws.add_record("sde-limit", ks, 0.0, tol, ks < tol, params,
                  (time.perf_counter() - t0) * 1e3)


def check_moment_scaling(ws: Workspace) -> None:
    cfg = ws.cfg
    t0 = time.perf_counter()
    v = ws.centered_observable()
    samples = min(cfg.samples, 1000)
    maxima1, maxima2 = [], []
    for gamma, n in zip(cfg.gammas, cfg.ns):
        lifts = rp_mod.lift_ensemble(v, ws.map_params(gamma), ws.measure,
                                     n, samples, cfg.seed)
        report = stats_mod.moment_scaling_report(lifts, cfg.q)
        maxima1.append(report.max_level1)
        maxima2.append(report.max_level2)
    factor = 1.0
    if len(maxima1) > 1:
        factor = max(max(maxima1) / max(min(maxima1), 1e-300),
                     max(maxima2) / max(min(maxima2), 1e-300))
    tol = cfg.tolerances["moment_factor"]
    ws.add_record(
        "moment-scaling", factor, 1.0, tol, factor <= tol,
        {"n": cfg.ns, "gamma": cfg.gammas, "q": cfg.q, "samples": samples,
         "max_level1": maxima1, "max_level2": maxima2},
        (time.perf_counter() - t0) * 1e3,
    )


def _estimated_forms(ws: Workspace) -> tuple[float, float]:
    v = ws.centered_observable()
    orbit = ws.long_orbit()
    b1 = coeffs_mod.estimate_B1(v, v, orbit)
    b2 = coeffs_mod.estimate_B2(v, v, orbit, ws.cfg.L)
    return b1, b2.value


def check_level2_mean(ws: Workspace) -> None:
    cfg = ws.cfg
    t0 = time.perf_counter()
    _, b2 = _estimated_forms(ws)
    lifts = rp_mod.lift_ensemble(ws.centered_observable(), ws.map_params(),
                                 ws.measure, cfg.terminal_n, cfg.samples,
                                 cfg.seed)
    res = stats_mod.level2_mean_check(lifts, b2)
    tol = cfg.tolerances["z"]
    ws.add_record("level2-mean", res.statistic, res.target,
                  tol * max(res.stderr, 1e-300), abs(res.z) <= tol,
                  {"n": cfg.terminal_n, "samples": cfg.samples,
                   "stderr": res.stderr, "z": res.z},
                  (time.perf_counter() - t0) * 1e3)


def check_covariance(ws: Workspace) -> None:
    cfg = ws.cfg
    t0 = time.perf_counter()
    b1, b2 = _estimated_forms(ws)
    lifts = rp_mod.lift_ensemble(ws.centered_observable(), ws.map_params(),
                                 ws.measure, cfg.terminal_n, cfg.samples,
                                 cfg.seed)
    res = stats_mod.covariance_check(lifts, b1, b2)
    tol = cfg.tolerances["z"]
    ws.add_record("covariance", res.statistic, res.target,
                  tol * max(res.stderr, 1e-300), abs(res.z) <= tol,
                  {"n": cfg.terminal_n, "samples": cfg.samples,
                   "stderr": res.stderr, "z": res.z},
                  (time.perf_counter() - t0) * 1e3)


def check_consistency(ws: Workspace) -> None:
    cfg = ws.cfg
    t0 = time.perf_counter()
    _, centered = ws.fielder()
    parts = centered.product
    n = min(cfg.terminal_n, 2048)
    orbit = generate_orbit(ws.map_params(), ws.measure, n, cfg.seed, task=0)
    path = run_fast_slow(centered, [cfg.xi], orbit, n)
    driver = rp_mod.lift_orbit(lambda y: parts.v(y), orbit, n)
    vf = VectorFieldPair(
        dim=1, m=parts.m,
        H=lambda x: np.asarray(parts.h(x.reshape(1, 1)))[0],
        DH=lambda x: np.asarray(parts.dh(x.reshape(1, 1)))[0],
    )
    sol = solve_rde(vf, None, driver, [cfg.xi])
    scale = float(np.max(np.abs(path.values)))
    gap = float(np.max(np.abs(sol.path.values - path.values)))
    statistic = gap / (1.0 + scale)
    tol = cfg.tolerances["consistency"]
    ws.add_record("consistency", statistic, 0.0, tol, statistic <= tol,
                  {"n": n, "gamma": cfg.terminal_gamma},
                  (time.perf_counter() - t0) * 1e3)


def check_chen(ws: Workspace) -> None:
    cfg = ws.cfg
    t0 = time.perf_counter()
    n = min(cfg.terminal_n, 256)
    orbit = generate_orbit(ws.map_params(), ws.measure, n, cfg.seed, task=0)
    rp = rp_mod.lift_orbit(ws.centered_observable(), orbit, n)
    gen = streams.stream(cfg.seed, 0, streams.PROBE)
    worst = 0.0
    for _ in range(1000):
        i, u, j = sorted(int(t) for t in gen.integers(0, n + 1, size=3))
        worst = max(worst, rp_mod.chen_defect(rp, i, u, j))
    tol = cfg.tolerances["chen"]
    ws.add_record("chen", worst, 0.0, tol, worst <= tol,
                  {"n": n, "triples": 1000},
                  (time.perf_counter() - t0) * 1e3)


def check_interpolation(ws: Workspace) -> None:
    cfg = ws.cfg
    t0 = time.perf_counter()
    gen = streams.stream(cfg.seed, 1, streams.PROBE)
    tol = cfg.tolerances["interp_slack"]
    worst = 0.0
    for _ in range(200):
        k = int(gen.integers(4, 16))
        rp1 = rp_mod.lift_increments(gen.standard_normal(k))
        rp2 = rp_mod.lift_increments(gen.standard_normal(k))
        lhs, rhs = rp_mod.interpolation_check(rp1, rp2, 2.0, cfg.p)
        worst = max(worst, (lhs - rhs) / max(rhs, 1e-300))
    ws.add_record("interpolation", worst, 0.0, tol, worst <= tol,
                  {"pairs": 200, "p": 2.0, "p_prime": cfg.p},
                  (time.perf_counter() - t0) * 1e3)


def check_psd(ws: Workspace) -> None:
    cfg = ws.cfg
    t0 = time.perf_counter()
    gen = streams.stream(cfg.seed, 2, streams.PROBE)
    worst = 0.0
    for _ in range(100):
        d = int(gen.integers(1, 9))
        A = gen.standard_normal((d, d))
        S = A @ A.T
        root = coeffs_mod.psd_sqrt(S, 1e-8 * float(np.linalg.norm(S, 2)))
        worst = max(worst, float(np.linalg.norm(root @ root - S)))
    tol = cfg.tolerances["psd"]
    ws.add_record("psd", worst, 0.0, tol, worst <= tol,
                  {"matrices": 100, "max_dim": 8},
                  (time.perf_counter() - t0) * 1e3)


def check_besov_embedding(ws: Workspace) -> None:
    cfg = ws.cfg
    t0 = time.perf_counter()
    n = min(cfg.terminal_n, 1024)
    lifts = rp_mod.lift_ensemble(ws.centered_observable(), ws.map_params(),
                                 ws.measure, n, cfg.besov_samples, cfg.seed)
    ratios_var, ratios_hol = [], []
    worst_slack = 0.0
    for idx, rp in enumerate(lifts):
        crp = besov_mod.continuous_interpolant(rp)
        ratios_var.append(besov_mod.embedding_check_var(
            crp, cfg.alpha, cfg.q, quadrature=cfg.quadrature))
        ratios_hol.append(besov_mod.embedding_check_holder(
            crp, cfg.alpha, cfg.q, quadrature=cfg.quadrature))
        bound = besov_mod.interpolant_bound_check(crp, seed=cfg.seed + idx)
        worst_slack = max(worst_slack, bound.max_slack_level1,
                          bound.max_slack_level2)
    spread = max(
        float(np.max(ratios_var)) / max(float(np.median(ratios_var)), 1e-300),
        float(np.max(ratios_hol)) / max(float(np.median(ratios_hol)), 1e-300),
    )
    tol = cfg.tolerances["besov_spread"]
    passed = spread <= tol and worst_slack <= 1.0 + 1e-9
    ws.add_record(
        "besov-embedding", spread, 1.0, tol, passed,
        {"n": n, "samples": cfg.besov_samples, "alpha": cfg.alpha,
         "q": cfg.q, "max_bound_slack": worst_slack,
         "note": "embedding constants are non-explicit; only ratio "
                 "stability is certified"},
        (time.perf_counter() - t0) * 1e3,
    )


CHECK_REGISTRY = {
    "sde-limit": check_sde_limit,
    "moment-scaling": check_moment_scaling,
    "level2-mean": check_level2_mean,
    "covariance": check_covariance,
    "consistency": check_consistency,
    "chen": check_chen,
    "interpolation": check_interpolation,
    "psd": check_psd,
    "besov-embedding": check_besov_embedding,
}


# ---------------------------------------------------------------------------
# artifact writers
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def _write_csv(path: str, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(x) for x in row])


def stage_simulate(ws: Workspace, outdir: str) -> None:
    cfg = ws.cfg
    ws.slow_marginals()
    _, centered = ws.fielder()
    n = cfg.terminal_n
    rows = []
    for s in range(min(cfg.path_dump, cfg.samples)):
        orbit = generate_orbit(ws.map_params(), ws.measure, n, cfg.seed, task=s)
        path = run_fast_slow(centered, [cfg.xi], orbit, n)
        for k in range(n + 1):
            rows.append((s, k, k / n, float(path.values[k, 0])))
    _write_csv(os.path.join(outdir, "paths.csv"),
               ["sample", "k", "t", "x"], rows)


def stage_lift(ws: Workspace, outdir: str) -> None:
    cfg = ws.cfg
    n = cfg.terminal_n
    orbit = generate_orbit(ws.map_params(), ws.measure, n, cfg.seed, task=0)
    rp = rp_mod.lift_orbit(ws.centered_observable(), orbit, n)
    rows = [(k, k / n, float(rp.X[k, 0]), float(rp.M[k, 0, 0]))
            for k in range(n + 1)]
    _write_csv(os.path.join(outdir, "lift.csv"), ["k", "t", "X", "M"], rows)


def stage_coeffs(ws: Workspace, outdir: str) -> None:
    cfg = ws.cfg
    cs = ws.coefficients()
    rows = []
    for x in cfg.probes:
        xv = np.array([x])
        rows.append((
            x,
            float(cs.abar(xv)[0]),
            float(cs.Sigma(xv)[0, 0]),
            float(cs.sigma(xv)[0, 0]),
            float(cs.atilde(xv)[0]),
        ))
    _write_csv(os.path.join(outdir, "coeffs.csv"),
               ["x", "abar", "Sigma", "sigma", "atilde"], rows)


def stage_compare(ws: Workspace, outdir: str) -> None:
    if "sde-limit" in ws.cfg.checks:
        check_sde_limit(ws)


def stage_checks(ws: Workspace, outdir: str,
                 only: Optional[str] = None) -> None:
    done = {r["check"] for r in ws.records}
    for name in ws.cfg.checks:
        if only is not None and name != only:
            continue
        if name in done or name == "besov-embedding":
            continue
        CHECK_REGISTRY[name](ws)


def stage_besov(ws: Workspace, outdir: str,
                only: Optional[str] = None) -> None:
    if "besov-embedding" not in ws.cfg.checks:
        return
    if only is not None and only != "besov-embedding":
        return
    check_besov_embedding(ws)


def write_reports(ws: Workspace, outdir: str) -> None:
    cfg = ws.cfg
    report_path = os.path.join(outdir, "report.jsonl")
    with open(report_path, "w", encoding="ascii") as fh:
        fh.write(json.dumps({"resolved_config": cfg.as_dict()},
                            sort_keys=True) + "\n")
        for record in ws.records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    lines = [f"experiment: {cfg.name}", f"seed: {cfg.seed}"]
    for record in ws.records:
        status = "PASS" if record["pass"] else "FAIL"
        lines.append(
            f"[{status}] {record['check']}: statistic={record['statistic']:.6g} "
            f"target={record['target']:.6g} tol={record['tol']:.6g}"
        )
    failed = [r["check"] for r in ws.records if not r["pass"]]
    lines.append("result: " + ("PASS" if not failed
                               else "FAIL (" + ", ".join(failed) + ")"))
    with open(os.path.join(outdir, "summary.txt"), "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def execute(cfg: ExperimentConfig, stage: str, threads: int,
            outdir: Optional[str], only_check: Optional[str]) -> int:
    ws = Workspace(cfg, threads=threads)
    out = outdir or cfg.outputs
    os.makedirs(out, exist_ok=True)
    last = len(STAGE_ORDER) - 1 if stage == "run" else STAGE_ORDER.index(stage)
    try:
        for name in STAGE_ORDER[: last + 1]:
            if name == "simulate":
                stage_simulate(ws, out)
            elif name == "lift":
                stage_lift(ws, out)
            elif name == "coeffs":
                stage_coeffs(ws, out)
            elif name == "compare":
                stage_compare(ws, out)
            elif name == "checks":
                stage_checks(ws, out, only=only_check)
            elif name == "besov":
                stage_besov(ws, out, only=only_check)
    except NumericBlowupError as err:
        print(f"numeric failure: {err} {err.context}", file=sys.stderr)
        return 3
    write_reports(ws, out)
    failed = [r["check"] for r in ws.records if not r["pass"]]
    if failed:
        print("failed checks: " + ", ".join(failed), file=sys.stderr)
        return 3
    return 0


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="fshom",
        description="run homogenization experiments from a JSON config",
    )
    sub = parser.add_subparsers(dest="stage", required=True)
    for name in ["run"] + STAGE_ORDER:
        sp = sub.add_parser(name, help=f"pipeline through stage '{name}'")
        sp.add_argument("--config", required=True, help="path to the JSON config")
        sp.add_argument("--threads", type=int, default=os.cpu_count() or 1)
        sp.add_argument("--out", default=None, help="output directory override")
        sp.add_argument("--seed", type=int, default=None, help="seed override")
        sp.add_argument("--check", default=None, help="run only this check")
    args = parser.parse_args(argv)
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    if args.seed is not None:
        raw["seed"] = args.seed
    try:
        cfg = resolve_config(raw)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    if args.check is not None and args.check not in cfg.checks:
        print(f"config error: --check {args.check} is not configured",
              file=sys.stderr)
        return 2
    return execute(cfg, args.stage, args.threads, args.out, args.check)


if __name__ == "__main__":
    sys.exit(main())
