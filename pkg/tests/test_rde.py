"""Rough/Young integration and the forward RDE solver."""

import math

import numpy as np
import pytest

from fshom.fastslow import NumericBlowupError, grid_path, run_fast_slow
from fshom.maps import LEBESGUE, MapParams, MeasureSpec, generate_orbit
from fshom.presets import make_product_field
from fshom.rde import (ControlledOutput, VectorFieldPair, constant_drift_path,
                       lipschitz_probe, rough_integral, solve_rde,
                       young_integral)
from fshom.roughpath import GridRoughPath, lift_increments, lift_orbit

from conftest import make_orbit


def scalar_vf(H, DH=None, F=None, e=0) -> VectorFieldPair:
    return VectorFieldPair(dim=1, m=1, H=H, DH=DH, F=F, e=e)


def synthetic_driver(gen, n: int, area_scale: float = 0.5) -> GridRoughPath:
    """Driver with nonzero per-cell second level (exercises the XX term)."""
    incs = gen.standard_normal((n, 1))
    base = lift_increments(incs)
    areas = area_scale * gen.standard_normal(n)
    M = base.M.copy()
    M[1:, 0, 0] += np.cumsum(areas)
    return GridRoughPath(n, base.X.copy(), M)


class TestVectorFieldPair:
    def test_finite_difference_matches_analytic(self):
        vf_exact = scalar_vf(H=lambda x: np.array([[math.sin(x[0])]]),
                             DH=lambda x: np.array([[[math.cos(x[0])]]]))
        vf_fd = scalar_vf(H=lambda x: np.array([[math.sin(x[0])]]))
        for x in np.linspace(-2, 2, 9):
            xv = np.array([x])
            gap = abs(vf_fd.dh(xv)[0, 0, 0] - vf_exact.dh(xv)[0, 0, 0])
            assert gap < 1e-9


class TestRoughIntegral:
    def test_constant_h_reduces_to_first_term(self):
        gen = np.random.default_rng(0)
        rp = synthetic_driver(gen, 10)
        Y = grid_path(np.zeros(11))
        vf = scalar_vf(H=lambda x: np.array([[3.0]]),
                       DH=lambda x: np.zeros((1, 1, 1)))
        out = rough_integral(vf, Y, rp)
        assert np.allclose(out.values[:, 0], 3.0 * rp.X[:, 0], atol=1e-14)

    def test_zero_driver_zero_path(self):
        rp = lift_increments(np.zeros((6, 1)))
        Y = grid_path(np.linspace(0, 1, 7))
        vf = scalar_vf(H=lambda x: np.array([[x[0]]]),
                       DH=lambda x: np.array([[[1.0]]]))
        out = rough_integral(vf, Y, rp)
        assert np.array_equal(out.values, np.zeros((7, 1)))

    def test_hand_expanded_four_cells(self):
        # d = m = 1, H(x) = x, Y = X = lift of a 4-point orbit
        orbit = make_orbit([0.1, 0.7, 0.4, 0.9])
        v = lambda y: np.where(np.asarray(y) > 0.5, 1.0, -1.0)
        rp = lift_orbit(v, orbit, 4)
        Y = grid_path(rp.X[:, 0])
        vf = scalar_vf(H=lambda x: np.array([[x[0]]]),
                       DH=lambda x: np.array([[[1.0]]]))
        out = rough_integral(vf, Y, rp)
        acc = 0.0
        for k in range(4):
            xc = rp.X[k + 1, 0] - rp.X[k, 0]
            xxc = rp.M[k + 1, 0, 0] - rp.M[k, 0, 0] - rp.X[k, 0] * xc
            acc += rp.X[k, 0] * xc + rp.X[k, 0] * xxc
            assert out.values[k + 1, 0] == pytest.approx(acc, abs=1e-14)

    def test_second_level_term_contributes(self):
        gen = np.random.default_rng(1)
        rp = synthetic_driver(gen, 8)
        Y = grid_path(rp.X[:, 0])
        vf_full = scalar_vf(H=lambda x: np.array([[x[0]]]),
                            DH=lambda x: np.array([[[1.0]]]))
        vf_flat = scalar_vf(H=lambda x: np.array([[x[0]]]),
                            DH=lambda x: np.zeros((1, 1, 1)))
        full = rough_integral(vf_full, Y, rp)
        flat = rough_integral(vf_flat, Y, rp)
        assert not np.allclose(full.values, flat.values)

    def test_grid_mismatch_rejected(self):
        rp = lift_increments(np.zeros((6, 1)))
        Y = grid_path(np.zeros(6))
        vf = scalar_vf(H=lambda x: np.array([[1.0]]))
        with pytest.raises(ValueError):
            rough_integral(vf, Y, rp)


class TestYoungIntegral:
    def test_constant_integrand(self):
        V = grid_path(np.linspace(0, 2, 9))
        Y = grid_path(np.zeros(9))
        out = young_integral(lambda y: np.array([[5.0]]), Y, V)
        assert np.allclose(out.values[:, 0], 5.0 * V.values[:, 0], atol=1e-14)

    def test_zero_driver(self):
        V = grid_path(np.zeros(9))
        Y = grid_path(np.linspace(0, 1, 9))
        out = young_integral(lambda y: np.array([[y[0]]]), Y, V)
        assert np.array_equal(out.values, np.zeros((9, 1)))

    def test_three_step_hand_sum(self):
        Y = grid_path(np.array([1.0, 2.0, -1.0, 0.5]))
        V = grid_path(np.array([0.0, 0.5, 0.25, 1.0]))
        out = young_integral(lambda y: np.array([[y[0]]]), Y, V)
        expect = [0.0,
                  1.0 * 0.5,
                  1.0 * 0.5 + 2.0 * (0.25 - 0.5),
                  1.0 * 0.5 + 2.0 * (0.25 - 0.5) + (-1.0) * 0.75]
        assert np.allclose(out.values[:, 0], expect, atol=1e-14)


class TestSolveRde:
    def test_zero_drivers_constant_solution(self):
        rp = lift_increments(np.zeros((5, 1)))
        V = grid_path(np.zeros(5 + 1))
        vf = scalar_vf(H=lambda x: np.array([[x[0]]]),
                       DH=lambda x: np.array([[[1.0]]]),
                       F=lambda x: np.array([[x[0]]]), e=1)
        sol = solve_rde(vf, V, rp, [0.7])
        assert np.array_equal(sol.path.values, np.full((6, 1), 0.7))

    def test_euler_polygon_exact(self):
        # dY = dt with V(t) = t on a power-of-two grid sums exactly to 1
        n = 8
        V = constant_drift_path(n, [1.0])
        rp = lift_increments(np.zeros((n, 1)))
        vf = scalar_vf(H=lambda x: np.zeros((1, 1)),
                       DH=lambda x: np.zeros((1, 1, 1)),
                       F=lambda x: np.array([[1.0]]), e=1)
        sol = solve_rde(vf, V, rp, [0.25])
        assert sol.path.values[n, 0] == 1.25

    def test_consistency_with_recursion(self):
        # product field: the RDE on the lifted driver reproduces the slow
        # recursion at every grid time
        n = 256
        orbit = generate_orbit(MapParams(0.25), MeasureSpec(LEBESGUE), n,
                               seed=31)
        field = make_product_field("sin", "cos2pi_plus_cos4pi")
        parts = field.product
        path = run_fast_slow(field, [0.3], orbit, n)
        driver = lift_orbit(lambda y: parts.v(y), orbit, n)
        vf = VectorFieldPair(
            dim=1, m=1,
            H=lambda x: np.asarray(parts.h(x.reshape(1, 1)))[0],
            DH=lambda x: np.asarray(parts.dh(x.reshape(1, 1)))[0],
        )
        sol = solve_rde(vf, None, driver, [0.3])
        scale = float(np.max(np.abs(path.values)))
        gap = float(np.max(np.abs(sol.path.values - path.values)))
        assert gap <= 1e-12 * (1.0 + scale)

    def test_brownian_sanity_matches_euler_maruyama(self):
        # the Ito lift of a Brownian grid path drives dY = Y dX through the
        # same arithmetic as the Euler-Maruyama loop for dY = Y dB
        gen = np.random.default_rng(32)
        n = 512
        xi = gen.standard_normal(n) / math.sqrt(n)
        rp = lift_increments(xi)
        vf = scalar_vf(H=lambda x: np.array([[x[0]]]),
                       DH=lambda x: np.array([[[1.0]]]))
        sol = solve_rde(vf, None, rp, [1.0])
        y = 1.0
        for k in range(n):
            y = y + y * xi[k]
            assert sol.path.values[k + 1, 0] == pytest.approx(y, rel=1e-12)

    def test_derivative_is_h_of_solution(self):
        gen = np.random.default_rng(33)
        rp = synthetic_driver(gen, 16, area_scale=0.1)
        vf = scalar_vf(H=lambda x: np.array([[math.sin(x[0])]]),
                       DH=lambda x: np.array([[[math.cos(x[0])]]]))
        sol = solve_rde(vf, None, rp, [0.2])
        for k in range(17):
            assert sol.derivative[k, 0, 0] == pytest.approx(
                math.sin(sol.path.values[k, 0]), abs=1e-14)

    def test_remainder_vanishes_on_diagonal(self):
        gen = np.random.default_rng(34)
        rp = synthetic_driver(gen, 8, area_scale=0.1)
        vf = scalar_vf(H=lambda x: np.array([[x[0]]]),
                       DH=lambda x: np.array([[[1.0]]]))
        sol = solve_rde(vf, None, rp, [0.5])
        for k in range(9):
            assert np.array_equal(sol.remainder(k, k), np.zeros(1))

    def test_blowup_carries_cell_index(self):
        rp = lift_increments(np.full((4, 1), 1e200))
        vf = scalar_vf(H=lambda x: np.array([[x[0] * abs(x[0])]]),
                       DH=lambda x: np.array([[[2.0 * abs(x[0])]]]))
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(NumericBlowupError) as err:
                solve_rde(vf, None, rp, [1.0])
        assert "cell" in err.value.context


class TestLipschitzProbe:
    def test_identical_inputs(self):
        gen = np.random.default_rng(35)
        rp = synthetic_driver(gen, 12, area_scale=0.1)
        vf = scalar_vf(H=lambda x: np.array([[math.sin(x[0])]]),
                       DH=lambda x: np.array([[[math.cos(x[0])]]]))
        out, inn = lipschitz_probe(vf, (None, rp), (None, rp), [0.1], [0.1], 2.5)
        assert out == 0.0 and inn == 0.0

    def test_initial_condition_only_ratio_one(self):
        rp = lift_increments(np.zeros((6, 1)))
        vf = scalar_vf(H=lambda x: np.zeros((1, 1)),
                       DH=lambda x: np.zeros((1, 1, 1)))
        out, inn = lipschitz_probe(vf, (None, rp), (None, rp), [0.0], [0.3], 2.5)
        assert out == pytest.approx(inn) == pytest.approx(0.3)

    def test_bounded_ratio_under_small_perturbations(self):
        gen = np.random.default_rng(36)
        base_incs = gen.standard_normal((32, 1)) / 4.0
        rp = lift_increments(base_incs)
        vf = scalar_vf(H=lambda x: np.array([[math.sin(x[0])]]),
                       DH=lambda x: np.array([[[math.cos(x[0])]]]))
        ratios = []
        for _ in range(100):
            pert = lift_increments(base_incs + 1e-3 * gen.standard_normal((32, 1)))
            out, inn = lipschitz_probe(vf, (None, rp), (None, pert),
                                       [0.2], [0.2], 2.5)
            ratios.append(out / inn)
        ratios = np.array(ratios)
        assert np.all(np.isfinite(ratios))
        assert ratios.max() < 100.0
