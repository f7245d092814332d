"""Crossover trial versus a completely randomized design (CRD) of equal size.

With n1 = n2 the expected length of J(b, s) relative to the CRD interval is
r(gamma; s) = sqrt(2) e(gamma; s).  Within the class of intervals whose
maximum e^2 is capped (1.25 by default, i.e. max r^2 <= 1.5), the scan
searches for the smallest attainable min_gamma r^2; the CRD is better
whenever that value exceeds 1.
"""

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .model import ratio_from_rho_tilde
from .optimize import OptConfig, OptimizationError, _select, solve_constrained
from .perf import DEFAULT_QUAD, get_evaluator, max_sel2, min_coverage, sel
from .splines import IntervalFunctions
from .validation import RHO_TILDE_MIN, DomainError, check_nonnegative, check_rho_tilde

DEFAULT_RHO_TILDE_GRID = (0.72, 0.75, 0.80, 0.85, 0.866, 0.90, 0.95, 0.98)


def crd_efficiency(design, ratio):
    """var(A) / var(CRD estimator) when there is no differential carryover."""
    ratio = check_nonnegative(ratio, "ratio")
    return (design.M / 4.0) * design.m / (1.0 + ratio)


def r2_curve(f, gammas, quad=DEFAULT_QUAD):
    return 2.0 * np.asarray(sel(f, gammas, quad)) ** 2


@dataclass(frozen=True)
class ComparisonSpec:
    alpha: float = 0.05
    max_e2_bound: float = 1.25
    rho_tilde_grid: tuple = DEFAULT_RHO_TILDE_GRID
    template: OptConfig = field(default_factory=OptConfig)
    anchors: tuple = (0.0, 0.5, 1.0)

    def __post_init__(self):
        if not self.max_e2_bound > 1:
            raise DomainError("max_e2_bound must exceed 1")
        if not self.rho_tilde_grid:
            raise DomainError("rho_tilde_grid must be nonempty")
        for rt in self.rho_tilde_grid:
            if not RHO_TILDE_MIN < rt <= 0.98 + 1e-12:
                raise DomainError(f"rho_tilde {rt} outside (1/sqrt(2), 0.98]")


@dataclass
class ConstrainedResult:
    rho_tilde: float
    min_r2: float
    gamma_min_r2: float
    max_e2: float
    min_coverage: float
    f: IntervalFunctions

    @property
    def variance_ratio(self):
        return ratio_from_rho_tilde(self.rho_tilde)

    @property
    def margin(self):
        return self.min_r2 - 1.0

    @property
    def verdict(self):
        return "CRD better" if self.min_r2 > 1.0 else "crossover better"


def constrained_optimize_min_r2(rho_tilde, spec=ComparisonSpec(), cap=None):
    """Smallest min_gamma r^2 found subject to the coverage and e^2-cap constraints.

    ``min over gamma of r^2`` is minimized jointly over (gamma, s) by
    minimizing e(gamma0; s) for each anchor gamma0 and keeping the best.
    ``cap=math.inf`` drops the e^2 cap.
    """
    rho_tilde = check_rho_tilde(rho_tilde, strict=True)
    cap = spec.max_e2_bound if cap is None else cap
    cfg = replace(spec.template, alpha=spec.alpha, rho_tilde=rho_tilde)
    knots = cfg.knot_grid
    ev = get_evaluator(knots, cfg.alpha, rho_tilde, cfg.quad)
    audit = cfg.audit_grid()
    best = None
    for g0 in spec.anchors:
        anchor = np.array([float(g0)])

        def objective(z, a=anchor):
            return float(ev.sel(z, a)[0])

        def jac(z, a=anchor):
            return ev.sel(z, a, jac=True)[1][0]

        attempts = solve_constrained(ev, cfg, objective, jac, cap=None if math.isinf(cap) else cap)
        chosen = _select(attempts, cfg.constraint_tol, lambda a: a.objective)
        if chosen is None:
            continue
        f = IntervalFunctions.from_vector(knots, chosen.z, cfg.alpha)
        r2 = r2_curve(f, audit, cfg.quad)
        i = int(np.argmin(r2))
        emax, _ = max_sel2(f, cfg.quad, gammas=audit)
        cmin, _ = min_coverage(f, rho_tilde, cfg.quad, gammas=audit)
        cand = ConstrainedResult(rho_tilde, float(r2[i]), float(audit[i]), emax, cmin, f)
        if best is None or cand.min_r2 < best.min_r2 - 1e-12:
            best = cand
    if best is None:
        raise OptimizationError(f"no feasible interval found for rho_tilde={rho_tilde}")
    return best


@dataclass
class ScanRow:
    rho_tilde: float
    result: ConstrainedResult = None
    error: str = None

    @property
    def variance_ratio(self):
        return ratio_from_rho_tilde(self.rho_tilde)

    @property
    def verdict(self):
        return self.result.verdict if self.result else "error"


def scan_designs(spec=ComparisonSpec(), threads=1):
    def run(rt):
        try:
            return ScanRow(rt, constrained_optimize_min_r2(rt, spec))
        except OptimizationError as exc:
            return ScanRow(rt, error=str(exc))

    grid = list(spec.rho_tilde_grid)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(run, grid))
    return [run(rt) for rt in grid]


def scan_to_csv(rows, path=None):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["rho_tilde", "variance_ratio", "min_r2", "max_e2", "verdict"])
    for row in rows:
        r = row.result
        writer.writerow(
            [
                f"{row.rho_tilde:.12g}",
                f"{row.variance_ratio:.10g}",
                f"{r.min_r2:.10g}" if r else "nan",
                f"{r.max_e2:.10g}" if r else "nan",
                row.verdict,
            ]
        )
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text
