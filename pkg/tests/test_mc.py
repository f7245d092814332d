import math

import numpy as np
import pytest

from crossover_ci.mc import (
    FiniteSampleConfig,
    PlugInError,
    finite_sample_interval,
    mc_assess,
    plug_in_estimates,
    results_to_csv,
)
from crossover_ci.model import (
    SummaryStats,
    TrialData,
    TrialDesign,
    TrialParams,
    VarianceModel,
    make_rng,
    simulate_batch,
    simulate_trial,
    summary_stats,
    _stats_arrays,
)
from crossover_ci.perf import coverage
from crossover_ci.validation import RHO_TILDE_MIN, DomainError

from conftest import C05, RT


class TestPlugIn:
    def test_equal_statistics(self):
        sigma, rt = plug_in_estimates(SummaryStats(0, 0, V=4.0, W=4.0), TrialDesign(3, 3))
        assert rt == pytest.approx(RHO_TILDE_MIN, abs=1e-15)
        assert sigma == pytest.approx(1.0)

    def test_exact_inversion(self):
        design = TrialDesign(10, 12)
        var = VarianceModel(0.8, 1.7)
        df = design.M - 2
        stats = SummaryStats(0, 0, V=var.sigma_eps2 * df, W=(var.sigma_eps2 + 2 * var.sigma_s2) * df)
        sigma, rt = plug_in_estimates(stats, design)
        assert sigma == pytest.approx(var.sigma, rel=1e-12)
        assert rt == pytest.approx(var.rho_tilde, rel=1e-12)

    def test_truncation(self):
        sigma, rt = plug_in_estimates(SummaryStats(0, 0, V=5.0, W=1.0), TrialDesign(4, 4))
        assert rt == pytest.approx(RHO_TILDE_MIN)
        assert sigma == pytest.approx(math.sqrt(5.0 / 6))

    def test_degenerate(self):
        with pytest.raises(PlugInError):
            plug_in_estimates(SummaryStats(0, 0, 0.0, 0.0), TrialDesign(3, 3))
        with pytest.raises(DomainError):
            plug_in_estimates(SummaryStats(0, 0, 1.0, 1.0), TrialDesign(1, 1, relaxed=True))

    def test_consistency(self):
        var = VarianceModel(1.0, 1.0)
        design = TrialDesign(2000, 2000)
        y1, y2 = simulate_batch(TrialParams(), design, var, make_rng(1), 200)
        A, P, V, W = _stats_arrays(y1, y2)
        est = np.array([plug_in_estimates(SummaryStats(a, p, v, w), design) for a, p, v, w in zip(A, P, V, W)])
        for col, truth in ((0, var.sigma), (1, var.rho_tilde)):
            assert abs(est[:, col].mean() - truth) < 4 * est[:, col].std() / math.sqrt(len(est)) + 1e-3


class TestFiniteSampleInterval:
    def test_standard_when_far(self, optimized):
        design = TrialDesign(20, 20)
        var = VarianceModel(1.0, 1.0)
        data = simulate_trial(TrialParams.from_theta_psi(0.0, 30.0), design, var, seed=2)
        stats = summary_stats(data)
        sigma, rt = plug_in_estimates(stats, design)
        assert abs(stats.Psi_hat) / (sigma * math.sqrt(design.m) * rt) >= 6
        iv = finite_sample_interval(data, design, optimized.f)
        half = C05 * math.sqrt(design.m) * sigma
        assert (iv.lower, iv.upper) == pytest.approx((stats.Theta_hat - half, stats.Theta_hat + half))

    def test_centered_when_psi_hat_zero(self, optimized):
        # mirror group 2 so that Psi_hat = 0 exactly
        y1 = np.array([[1.0, 2.0], [0.5, 1.0], [2.0, 2.5]])
        y2 = np.array([[1.5, 1.0], [0.7, 1.6], [1.8, 2.9]])
        y2 = y2 - (y2.sum(axis=1).mean() - y1.sum(axis=1).mean()) / 2
        data = TrialData(y1, y2)
        stats = summary_stats(data)
        assert abs(stats.Psi_hat) < 1e-12
        iv = finite_sample_interval(data, TrialDesign(3, 3), optimized.f)
        assert (iv.lower + iv.upper) / 2 == pytest.approx(stats.Theta_hat, abs=1e-10)


def test_known_variance_standard_is_exact(standard_f):
    for n in (3, 20):
        res = mc_assess(FiniteSampleConfig.at_gamma(n, 1.0, standard_f, reps=50_000, seed=n), known_variance=True)
        assert abs(res.coverage - 0.95) < 3 * res.coverage_se
        assert res.length_ratio == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("gamma", [0.0, 1.5, 4.0])
def test_known_variance_matches_quadrature(optimized, gamma):
    res = mc_assess(FiniteSampleConfig.at_gamma(15, gamma, optimized.f, reps=100_000, seed=3), known_variance=True)
    assert abs(res.coverage - coverage(optimized.f, RT, gamma)) < 4 * res.coverage_se


def test_plug_in_coverage_near_nominal(optimized):
    res = mc_assess(FiniteSampleConfig.at_gamma(50, 0.0, optimized.f, reps=100_000, seed=4))
    assert abs(res.coverage - 0.95) < 0.01


def test_length_ratio_large_n(optimized):
    res = mc_assess(FiniteSampleConfig.at_gamma(200, 0.0, optimized.f, reps=20_000, seed=5))
    assert abs(res.length_ratio2 - 0.8527) < 0.02


def test_seed_determinism_and_threads(optimized):
    cfg = FiniteSampleConfig.at_gamma(10, 1.0, optimized.f, reps=5000, seed=9, chunk=1000)
    a = mc_assess(cfg)
    b = mc_assess(cfg, threads=3)
    assert a == b


def test_config_validation(optimized):
    with pytest.raises(DomainError):
        FiniteSampleConfig.at_gamma(10, 0.0, optimized.f, reps=10)
    cfg = FiniteSampleConfig.at_gamma(12, 2.5, optimized.f, ratio=3.0)
    assert cfg.gamma == pytest.approx(2.5)


def test_results_csv(standard_f):
    res = mc_assess(FiniteSampleConfig.at_gamma(5, 0.0, standard_f, reps=1000, seed=0))
    lines = results_to_csv([res]).splitlines()
    assert lines[0] == "n,gamma,coverage,coverage_se,length_ratio2,length_ratio2_se,plugin_failures"
    assert lines[1].startswith("5,0,")
