import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from scipy.stats import multivariate_normal, norm

from crossover_ci.perf import (
    PerformanceEvaluator,
    QuadratureError,
    QuadratureSpec,
    WeightSpec,
    coverage,
    criterion,
    lambda_prob,
    max_sel2,
    mc_coverage,
    min_coverage,
    perf_curve,
    quadrature_rule,
    sel,
)
from crossover_ci.splines import IntervalFunctions, KnotGrid
from crossover_ci.validation import DomainError

from conftest import C05, RT, random_functions


class TestLambda:
    def test_central(self):
        assert lambda_prob(-1.959964, 1.959964, 0, 1) == pytest.approx(0.95, abs=1e-6)

    def test_table_value(self):
        assert lambda_prob(0, 1, 0, 1) == pytest.approx(0.341345, abs=1e-6)

    @given(st.lists(st.floats(-8, 8), min_size=3, max_size=3, unique=True), st.floats(-2, 2), st.floats(0.05, 4))
    def test_additive(self, pts, mu, v):
        a, b, c = sorted(pts)
        assert lambda_prob(a, b, mu, v) + lambda_prob(b, c, mu, v) == pytest.approx(lambda_prob(a, c, mu, v), abs=1e-14)

    def test_far_tail_no_cancellation(self):
        p = lambda_prob(9.0, 10.0, 0, 1)
        assert p == pytest.approx(norm.sf(9.0) - norm.sf(10.0), rel=1e-10)
        assert p > 0

    def test_errors(self):
        with pytest.raises(DomainError):
            lambda_prob(0, 1, 0, 0)
        with pytest.raises(DomainError):
            lambda_prob(1, 0, 0, 1)


def test_rule_integrates_polynomials(knots):
    h, w = quadrature_rule(knots, 64, 10)
    assert w.sum() == pytest.approx(12.0, rel=1e-14)
    assert (w * h**6).sum() == pytest.approx(2 * 6**7 / 7, rel=1e-13)
    assert np.all(np.diff(h) > 0)


def test_quad_spec_validation():
    with pytest.raises(DomainError):
        QuadratureSpec(panels=4)
    with pytest.raises(DomainError):
        QuadratureSpec(nodes_per_panel=3)
    g = QuadratureSpec().gamma_grid(6.0)
    assert g[0] == 0.0 and g[-1] == pytest.approx(10.0) and len(g) == 201


class TestStandardInterval:
    def test_coverage_is_nominal(self, standard_f):
        g = np.random.default_rng(0).uniform(-10, 10, 20)
        np.testing.assert_allclose(coverage(standard_f, RT, g), 0.95, atol=1e-10)

    def test_sel_is_one(self, standard_f):
        g = np.random.default_rng(1).uniform(-10, 10, 20)
        np.testing.assert_allclose(sel(standard_f, g), 1.0, atol=1e-10)

    def test_criterion_zero(self, standard_f):
        assert criterion(standard_f, WeightSpec(0.2)) == pytest.approx(0.0, abs=1e-12)

    def test_perf_curve(self, standard_f):
        curve = perf_curve(standard_f, RT, np.linspace(0, 8, 9))
        np.testing.assert_allclose(curve.coverage, 0.95, atol=1e-12)
        np.testing.assert_allclose(curve.sel2, 1.0, atol=1e-12)


def _coverage_by_2d_oracle(f, rt, gamma):
    """P(l(H) <= G <= u(H)) by adaptive quadrature of the conditional normal, independent of the panel rule."""
    sd = math.sqrt(1 - rt * rt)

    def inner(h):
        lo, hi = f.ell_u(h)
        mu = rt * (h - gamma)
        return (norm.cdf((hi - mu) / sd) - norm.cdf((lo - mu) / sd)) * norm.pdf(h - gamma)

    pts = sorted(set(np.concatenate([-f.knots.array, f.knots.array])))
    total, _ = integrate.quad(inner, -f.d, f.d, points=pts, limit=400, epsabs=1e-13, epsrel=1e-13)
    outside = norm.cdf(-f.d - gamma) + norm.sf(f.d - gamma)
    # outside [-d, d] the interval is standard; integrate k-dagger there directly
    def std_inner(h):
        mu = rt * (h - gamma)
        return (norm.cdf((C05 - mu) / sd) - norm.cdf((-C05 - mu) / sd)) * norm.pdf(h - gamma)

    left, _ = integrate.quad(std_inner, -np.inf, -f.d, epsabs=1e-14)
    right, _ = integrate.quad(std_inner, f.d, np.inf, epsabs=1e-14)
    assert outside >= 0
    return total + left + right


@pytest.mark.parametrize("gamma", [0.0, 0.7, 2.5, 5.0])
def test_coverage_matches_independent_quadrature(knots, gamma):
    for f in random_functions(knots, np.random.default_rng(2), 2):
        assert coverage(f, RT, gamma) == pytest.approx(_coverage_by_2d_oracle(f, RT, gamma), abs=1e-9)


def test_coverage_matches_bivariate_normal_cdf(knots):
    # constant b and s: coverage = P(b - s <= G <= b + s, |H| < d) + standard part outside
    f = IntervalFunctions(knots, (0.0,) * 7, (1.0,) * 8)
    gamma = 0.0
    mc, se = mc_coverage(f, RT, gamma, reps=400_000, seed=3)
    assert abs(coverage(f, RT, gamma) - mc) < 4 * se


def test_evenness(knots):
    rng = np.random.default_rng(4)
    g = rng.uniform(0, 9, 20)
    for f in random_functions(knots, rng, 3):
        np.testing.assert_allclose(coverage(f, RT, g), coverage(f, RT, -g), atol=1e-9)
        np.testing.assert_allclose(sel(f, g), sel(f, -g), atol=1e-9)


def test_tail_limit(knots):
    g = np.array([14.0, 20.0, 60.0])
    for f in random_functions(knots, np.random.default_rng(5), 3):
        np.testing.assert_allclose(coverage(f, RT, g), 0.95, atol=1e-6)
        np.testing.assert_allclose(sel(f, g), 1.0, atol=1e-6)


def test_convergence_and_check(knots):
    f = random_functions(knots, np.random.default_rng(6), 1)[0]
    g = np.linspace(0, 10, 41)
    a = coverage(f, RT, g, QuadratureSpec(64, 10))
    b = coverage(f, RT, g, QuadratureSpec(128, 10))
    assert np.max(np.abs(a - b)) < 1e-9
    assert np.max(np.abs(sel(f, g, QuadratureSpec(64, 10)) - sel(f, g, QuadratureSpec(128, 10)))) < 1e-9
    coverage(f, RT, g, check=True)
    coarse = IntervalFunctions(KnotGrid.uniform(6, 3), (1.0,), (0.5, 3.0))
    with pytest.raises(QuadratureError):
        coverage(coarse, 0.995, g, QuadratureSpec(8, 5), check=True)


def test_coverage_in_unit_interval(knots):
    rng = np.random.default_rng(7)
    for f in random_functions(knots, rng, 5):
        c = coverage(f, 0.95, np.linspace(0, 12, 121))
        assert np.all((c >= 0) & (c <= 1))


def test_sel_positive_and_formula(knots):
    f = random_functions(knots, np.random.default_rng(8), 1)[0]
    for gamma in (0.0, 1.3, 4.0):
        direct, _ = integrate.quad(lambda h: (f.eval_s(abs(h)) - C05) * norm.pdf(h - gamma), -6, 6,
                                   points=[-4.5, -3, -1.5, 0, 1.5, 3, 4.5], limit=200, epsabs=1e-13)
        assert sel(f, gamma) == pytest.approx(1 + direct / C05, abs=1e-10)
        assert sel(f, gamma) > 0


def test_criterion_constant_integrand(knots):
    # (2/c) * sum over [0, d] of (s - c)(omega + phi) with s - c = -1
    h, w = quadrature_rule(knots, 64, 10)
    pos = h > 0
    value = (2 / C05) * np.sum(w[pos] * -1.0 * (0.2 + norm.pdf(h[pos])))
    expected = -(2 / C05) * (0.2 * 6 + (norm.cdf(6) - 0.5))
    assert value == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(-1.7347, abs=1e-4)


def test_criterion_against_adaptive_quadrature(knots):
    for f in random_functions(knots, np.random.default_rng(9), 3):
        for omega in (0.0, 0.2, 1.0):
            oracle, _ = integrate.quad(lambda h: (f.eval_s(h) - C05) * (omega + norm.pdf(h)), 0, 6,
                                       points=list(knots.x[1:-1]), limit=200, epsabs=1e-13)
            assert criterion(f, omega) == pytest.approx(2 / C05 * oracle, abs=1e-10)


def test_criterion_equals_weighted_integral_of_sel(knots):
    """(e(0) - 1) + omega * integral of (e(gamma) - 1) over the real line."""
    gx, gw = np.polynomial.legendre.leggauss(40)
    edges = np.linspace(-18, 18, 73)
    gam = np.concatenate([(b - a) / 2 * gx + (a + b) / 2 for a, b in zip(edges[:-1], edges[1:])])
    wts = np.concatenate([(b - a) / 2 * gw for a, b in zip(edges[:-1], edges[1:])])
    for f in random_functions(knots, np.random.default_rng(10), 3):
        omega = 0.35
        lhs = (sel(f, 0.0) - 1) + omega * np.sum(wts * (sel(f, gam) - 1))
        assert lhs == pytest.approx(criterion(f, omega), abs=1e-6)


def test_jacobians_match_finite_differences(knots):
    f = random_functions(knots, np.random.default_rng(11), 1)[0]
    ev = PerformanceEvaluator(knots, 0.05, RT)
    z = f.vector
    g = np.array([0.0, 1.0, 3.0, 6.5])
    c, J = ev.coverage(z, g, jac=True)
    e, Je = ev.sel(z, g, jac=True)
    eps = 1e-6
    for i in range(z.size):
        dz = np.zeros_like(z)
        dz[i] = eps
        fd = (ev.coverage(z + dz, g) - ev.coverage(z - dz, g)) / (2 * eps)
        np.testing.assert_allclose(J[:, i], fd, atol=1e-7)
        fd_e = (ev.sel(z + dz, g) - ev.sel(z - dz, g)) / (2 * eps)
        np.testing.assert_allclose(Je[:, i], fd_e, atol=1e-8)


def test_min_coverage_refines_between_grid_points(knots):
    f = random_functions(knots, np.random.default_rng(12), 1)[0]
    coarse, gc = min_coverage(f, RT, gammas=np.arange(0, 10.01, 0.5))
    fine_grid = np.linspace(0, 10, 20001)
    brute = coverage(f, RT, fine_grid)
    assert coarse == pytest.approx(brute.min(), abs=1e-8)
    assert coarse <= brute.min() + 1e-12


def test_max_sel2(knots):
    f = random_functions(knots, np.random.default_rng(13), 1)[0]
    v, g = max_sel2(f)
    brute = sel(f, np.linspace(0, 10, 20001)) ** 2
    assert v == pytest.approx(brute.max(), abs=1e-8)


def test_perf_curve_csv(standard_f, tmp_path):
    curve = perf_curve(standard_f, RT, [0.0, 0.5, 1.0])
    text = curve.to_csv(tmp_path / "c.csv")
    assert text.splitlines()[0] == "gamma,coverage,e2"
    assert len(text.splitlines()) == 4
    with pytest.raises(DomainError):
        perf_curve(standard_f, RT, [1.0, 0.5])


def test_mc_coverage_standard(standard_f):
    p, se = mc_coverage(standard_f, RT, 0.0, reps=10**6, seed=1)
    assert abs(p - 0.95) < 0.001
    with pytest.raises(DomainError):
        mc_coverage(standard_f, RT, 0.0, reps=100)


@pytest.mark.parametrize("gamma", [0.0, 2.0])
def test_mc_matches_quadrature_optimized(optimized, gamma):
    p, se = mc_coverage(optimized.f, RT, gamma, reps=400_000, seed=int(gamma * 10) + 5)
    assert abs(p - coverage(optimized.f, RT, gamma)) < 4 * se
