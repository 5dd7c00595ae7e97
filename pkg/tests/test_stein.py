import math

import numpy as np
import pytest
from scipy import integrate, stats

from poisson_clt.core import gaussian_target_from
from poisson_clt.stein import (SteinSolution, check_hessian_null, check_inverse_distance_moment,
                               conjugation_check, constant_M2, constant_M3,
                               default_inverse_distance_catalog, hermite3_second_moment,
                               inverse_distance_moment_exact, random_halfspaces, smooth_h,
                               smoothed_expectation, stein_derivatives, stein_residual,
                               stein_value, strip_probability_rows)
from poisson_clt.testfns import Ball, HalfspaceIntersection, halfspace

I1 = gaussian_target_from(np.eye(1))
C2 = gaussian_target_from(np.array([[2.0, 1.0], [1.0, 2.0]]))
EVERYTHING = HalfspaceIntersection(np.zeros((0, 1)), [])


def _exact_value(z, t, y):
    """Stein solution for a half-line in one dimension by adaptive quadrature."""
    def integrand(s):
        return (stats.norm.cdf((z - math.sqrt(1 - s) * y) / math.sqrt(s))
                - stats.norm.cdf(z)) / (1 - s)
    return 0.5 * integrate.quad(integrand, t, 1, limit=200)[0]


def test_smooth_h_examples():
    assert smooth_h(EVERYTHING, 0.4, I1, [0.3]).value == 1.0
    est = smooth_h(halfspace([1.0], 0.0), 0.5, I1, [0.0], n=100_000)
    assert abs(est.value - 0.5) <= 3 * est.std_error
    est = smooth_h(halfspace([1.0], 1.0), 0.5, I1, [0.0], n=100_000)
    assert abs(est.value - stats.norm.cdf(1 / math.sqrt(0.5))) <= 3 * est.std_error
    assert stats.norm.cdf(1 / math.sqrt(0.5)) == pytest.approx(0.92135, abs=1e-5)


def test_smoothed_expectation_exact_for_halfspaces():
    h = halfspace([1.0], 0.5)
    pts = np.array([[0.0], [1.0]])
    want = np.mean(stats.norm.cdf((0.5 - math.sqrt(0.7) * pts[:, 0]) / math.sqrt(0.3)))
    assert smoothed_expectation(h, 0.3, I1, pts) == pytest.approx(want, abs=1e-12)


@pytest.mark.parametrize("t", [0.0, 1.0, -0.1, 1.5])
def test_t_outside_unit_interval(t):
    with pytest.raises(ValueError):
        SteinSolution(halfspace([1.0], 0.0), t, I1)


def test_constant_region_has_zero_solution():
    sol = SteinSolution(EVERYTHING, 0.3, I1, n_inner=2000)
    assert stein_value(sol, [0.4]).value == 0.0
    for order in (1, 2, 3):
        assert np.all(stein_derivatives(sol, [0.4], order).value == 0.0)
    assert stein_residual(sol, [0.4]).residual == 0.0


@pytest.mark.parametrize("y", [-1.0, 0.0, 1.3])
def test_value_against_quadrature(y):
    sol = SteinSolution(halfspace([1.0], 0.5), 0.3, I1, n_inner=40_000, seed=1)
    est = stein_value(sol, [y])
    assert abs(est.value - _exact_value(0.5, 0.3, y)) <= 3 * est.std_error + 1e-6


def test_first_derivative_against_finite_difference():
    sol = SteinSolution(halfspace([1.0], 0.2), 0.4, I1, n_inner=40_000, seed=2)
    fails = 0
    for y in np.linspace(-2, 2, 20):
        eps = 1e-4
        fd = (_exact_value(0.2, 0.4, y + eps) - _exact_value(0.2, 0.4, y - eps)) / (2 * eps)
        d = stein_derivatives(sol, [y], 1)
        fails += abs(d.value[0] - fd) > 3 * d.std_error[0] + 1e-5
    # three-sigma bands at 20 points: a single excursion is expected noise
    assert fails <= 1


@pytest.mark.parametrize("y", [-1.0, 0.0, 1.0])
def test_residual_one_dimension(y):
    sol = SteinSolution(halfspace([1.0], 0.5), 0.3, I1, n_inner=20_000, seed=3)
    assert stein_residual(sol, [y]).passes()


def test_residual_correlated_halfspaces():
    gen = np.random.default_rng(4)
    for h in random_halfspaces(2, 3, 2, gen):
        sol = SteinSolution(h, 0.5, C2, n_inner=20_000, seed=5)
        for y in gen.standard_normal((2, 2)):
            assert stein_residual(sol, y).passes()


def test_derivative_tensors_are_symmetric():
    sol = SteinSolution(halfspace([0.6, 0.8], 0.1), 0.4, C2, n_inner=5000, seed=6)
    d2 = stein_derivatives(sol, [0.2, -0.3], 2).value
    d3 = stein_derivatives(sol, [0.2, -0.3], 3).value
    assert np.array_equal(d2, d2.T)
    assert np.array_equal(d3, d3.transpose(1, 0, 2))
    assert np.array_equal(d3, d3.transpose(2, 1, 0))


def test_constants():
    assert constant_M2(1) == pytest.approx(0.25 * (4 * stats.norm.pdf(1)) ** 2, rel=1e-6)
    assert constant_M2(1) == pytest.approx(0.23421, abs=5e-5)
    m3 = constant_M3(1, n=200_000, seed=1)
    assert m3.value <= math.sqrt(6) + 3 * m3.std_error
    e = hermite3_second_moment(n=200_000, seed=2)
    assert abs(e.value - 6.0) <= 3 * e.std_error


def test_hessian_integrates_to_zero():
    assert check_hessian_null(C2, n=100_000).all_passed


def test_strip_probabilities():
    assert strip_probability_rows().all_passed


def test_inverse_distance_moment_quadrature():
    # E |N|^{-1/2} = 2^{-1/4} Gamma(1/4) / sqrt(pi)
    v = inverse_distance_moment_exact(halfspace([1.0], 0.0), 0.5, 1)
    assert v == pytest.approx(2 ** -0.25 * math.gamma(0.25) / math.sqrt(math.pi), rel=1e-8)
    ball = inverse_distance_moment_exact(Ball(np.zeros(1), 1.0), 0.0, 1)
    assert ball == pytest.approx(1.0)


@pytest.mark.parametrize("m", [1, 2])
def test_inverse_distance_bound(m):
    rep = check_inverse_distance_moment(0.5, default_inverse_distance_catalog(m), m, n=50_000)
    assert rep.all_passed


def test_small_alpha_moment_near_one():
    v = inverse_distance_moment_exact(halfspace([1.0], 0.0), 1e-4, 1)
    assert v == pytest.approx(1.0, abs=1e-3)


def test_conjugation():
    ys = np.array([[0.3, -0.4], [1.0, 0.5]])
    rep = conjugation_check(halfspace([1.0, -0.5], 0.2), 0.4, C2, ys, n_inner=10_000)
    assert rep.all_passed


def test_second_moment_check_at_the_null():
    from poisson_clt.stein import check_hessian_second_moment, sample_targets
    ys = sample_targets(I1, 200, 1)
    rep = check_hessian_second_moment(ys, I1, 0.2, n_inner=64, distance=0.0)
    row = rep.rows[0]
    assert row.passed and 0 < row.lhs < row.rhs
    assert rep.notes


def test_smoothing_on_gaussian_samples():
    from poisson_clt.stein import check_smoothing
    x = np.random.default_rng(3).standard_normal((4000, 2))
    rep = check_smoothing(x, gaussian_target_from(np.eye(2)), 0.2, l=2, budget=20, n_catalog=4)
    names = [r.check for r in rep.rows]
    assert any(n.startswith("smoothing_convex") for n in names)
    assert any(n.startswith("smoothing_halfspaces") for n in names)
    assert rep.all_passed
