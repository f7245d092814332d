"""Finite-sample plug-in interval and its Monte Carlo assessment.

The plug-in interval replaces sigma and rho_tilde in J(b, s) by estimates from
V and W.  The functions b and s are used as given: they are not re-optimized
at the estimated rho_tilde.
"""

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .model import (
    TrialDesign,
    TrialParams,
    VarianceModel,
    _stats_arrays,
    simulate_batch,
    summary_stats,
)
from .splines import construct_interval
from .validation import RHO_TILDE_MIN, DomainError


class PlugInError(ValueError):
    """Raised when the data cannot support variance estimates (e.g. V = W = 0)."""


def _plug_in_arrays(V, W, M):
    df = M - 2
    se2 = V / df
    ss2 = np.maximum(0.0, (W - V) / (2.0 * df))
    s2 = se2 + ss2
    with np.errstate(invalid="ignore", divide="ignore"):
        rho = ss2 / s2
        rt = np.sqrt((1.0 + rho) / 2.0)
    ok = (se2 > 0) & np.isfinite(rt)
    return np.sqrt(s2), np.maximum(rt, RHO_TILDE_MIN), ok


def plug_in_estimates(stats, design):
    """Estimates (sigma_hat, rho_tilde_hat) from the within-subject statistics.

    V/(M-2) estimates sigma_eps^2 and W/(M-2) estimates sigma_eps^2 + 2 sigma_s^2;
    a negative estimate of sigma_s^2 is truncated at zero.
    """
    if design.M < 3:
        raise DomainError("need n1 + n2 >= 3")
    if stats.V < 0 or stats.W < 0:
        raise DomainError("V and W must be nonnegative")
    sigma, rt, ok = _plug_in_arrays(np.float64(stats.V), np.float64(stats.W), design.M)
    if not ok:
        raise PlugInError(f"degenerate variance statistics V={stats.V}, W={stats.W}")
    return float(sigma), float(rt)


def finite_sample_interval(data, design, f):
    stats = summary_stats(data, design)
    sigma, rt = plug_in_estimates(stats, design)
    return construct_interval(f, stats.Theta_hat, stats.Psi_hat, sigma, design.m, rt)


@dataclass(frozen=True)
class FiniteSampleConfig:
    design: TrialDesign
    params: TrialParams
    variances: VarianceModel
    f: object
    reps: int = 100_000
    seed: int = 0
    chunk: int = 10_000

    def __post_init__(self):
        if self.reps < 1000:
            raise DomainError("reps must be at least 1000")

    @classmethod
    def at_gamma(cls, n, gamma, f, ratio=1.0, theta=0.0, sigma_eps2=1.0, **kw):
        """Equal groups of size ``n`` with carryover set so the standardized value is ``gamma``."""
        design = TrialDesign(n, n)
        var = VarianceModel.from_ratio(ratio, sigma_eps2)
        psi = gamma * var.sigma * math.sqrt(design.m) * var.rho_tilde
        return cls(design, TrialParams.from_theta_psi(theta, psi), var, f, **kw)

    @property
    def gamma(self):
        v = self.variances
        return self.params.psi / (v.sigma * math.sqrt(self.design.m) * v.rho_tilde)


@dataclass(frozen=True)
class MCResult:
    n1: int
    n2: int
    gamma: float
    reps: int
    coverage: float
    coverage_se: float
    length_ratio: float
    length_ratio_se: float
    plugin_failures: int
    known_variance: bool
    reoptimized: bool = False

    @property
    def length_ratio2(self):
        return self.length_ratio**2

    @property
    def length_ratio2_se(self):
        return 2.0 * abs(self.length_ratio) * self.length_ratio_se


def _chunk(cfg, seed_seq, size, known_variance):
    rng = np.random.Generator(np.random.Philox(seed_seq))
    y1, y2 = simulate_batch(cfg.params, cfg.design, cfg.variances, rng, size)
    A, psi_hat, V, W = _stats_arrays(y1, y2)
    theta_hat = A + psi_hat
    m = cfg.design.m
    if known_variance:
        sigma = np.full(size, cfg.variances.sigma)
        rt = np.full(size, cfg.variances.rho_tilde)
        ok = np.ones(size, dtype=bool)
    else:
        sigma, rt, ok = _plug_in_arrays(V, W, cfg.design.M)
    sigma, rt = sigma[ok], rt[ok]
    scale = math.sqrt(m) * sigma
    h = psi_hat[ok] / (scale * rt)
    center = theta_hat[ok] - scale * cfg.f.eval_b(h)
    half = scale * cfg.f.eval_s(np.abs(h))
    covered = int(np.count_nonzero(np.abs(cfg.params.theta - center) <= half))
    ratio = half / (cfg.f.c_alpha * math.sqrt(m) * cfg.variances.sigma)
    return covered, int(ok.sum()), math.fsum(ratio), math.fsum(ratio * ratio), int(size - ok.sum())


def mc_assess(cfg, known_variance=False, threads=1):
    """Empirical coverage and mean scaled length of the plug-in interval.

    Scaled length divides by the large-sample standard length
    2 c_alpha sqrt(m) sigma with the true sigma.  Replications are split into
    fixed chunks with spawned seed streams, so results do not depend on
    ``threads``.
    """
    sizes = [cfg.chunk] * (cfg.reps // cfg.chunk)
    if cfg.reps % cfg.chunk:
        sizes.append(cfg.reps % cfg.chunk)
    seeds = np.random.SeedSequence(cfg.seed).spawn(len(sizes))
    jobs = list(zip(seeds, sizes))
    run = lambda job: _chunk(cfg, job[0], job[1], known_variance)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(run, jobs))
    else:
        parts = [run(j) for j in jobs]
    covered = sum(p[0] for p in parts)
    used = sum(p[1] for p in parts)
    failures = sum(p[4] for p in parts)
    if used == 0:
        raise PlugInError("every replication failed to produce variance estimates")
    mean = math.fsum(p[2] for p in parts) / used
    var = max(0.0, math.fsum(p[3] for p in parts) / used - mean * mean)
    p = covered / used
    return MCResult(
        n1=cfg.design.n1,
        n2=cfg.design.n2,
        gamma=cfg.gamma,
        reps=used,
        coverage=p,
        coverage_se=math.sqrt(p * (1.0 - p) / used),
        length_ratio=mean,
        length_ratio_se=math.sqrt(var / used),
        plugin_failures=failures,
        known_variance=known_variance,
    )


def results_to_csv(results, path=None):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["n", "gamma", "coverage", "coverage_se", "length_ratio2", "length_ratio2_se", "plugin_failures"])
    for r in results:
        writer.writerow(
            [
                r.n1,
                f"{r.gamma:.6g}",
                f"{r.coverage:.10g}",
                f"{r.coverage_se:.6g}",
                f"{r.length_ratio2:.10g}",
                f"{r.length_ratio2_se:.6g}",
                r.plugin_failures,
            ]
        )
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text
