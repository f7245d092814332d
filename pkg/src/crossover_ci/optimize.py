"""Constrained search for the knot values of b and s.

The criterion is affine in s, so all the difficulty sits in the coverage
constraint.  Coverage >= 1 - alpha is imposed on a gamma grid and solved by
SLSQP with exact Jacobians; after each solve a fine audit locates the true
minimum coverage between grid points and any violating gamma is added to the
constraint set before re-solving.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from .model import make_rng
from .perf import DEFAULT_QUAD, QuadratureSpec, get_evaluator, max_sel2, min_coverage, sel
from .splines import IntervalFunctions, KnotGrid
from .validation import DomainError, check_alpha, check_nonnegative, check_positive, check_rho_tilde


class OptimizationError(RuntimeError):
    """No start produced a feasible solution.

    ``best`` holds the least-infeasible iterate and ``violation`` its
    largest constraint violation.
    """

    def __init__(self, message, best=None, violation=None):
        super().__init__(message)
        self.best = best
        self.violation = violation


@dataclass(frozen=True)
class OptConfig:
    alpha: float = 0.05
    rho_tilde: float = math.sqrt(3.0) / 2.0
    d: float = 6.0
    n_knots: int = 9
    knots: tuple = None
    omega: float = 0.2
    quad: QuadratureSpec = DEFAULT_QUAD
    max_iter: int = 500
    constraint_tol: float = 5e-5
    ftol: float = 1e-8
    multistarts: int = 2
    perturbation: float = 0.05
    seed: int = 0
    bound_multiple: float = 3.0
    audit_step: float = 0.01
    max_refinements: int = 6

    def __post_init__(self):
        check_alpha(self.alpha)
        check_rho_tilde(self.rho_tilde, strict=True)
        check_positive(self.d, "d")
        check_nonnegative(self.omega, "omega")
        if self.knots is not None:
            grid = KnotGrid(tuple(self.knots))
            if not math.isclose(grid.d, self.d):
                raise DomainError("last knot must equal d")
        elif self.n_knots < 3:
            raise DomainError("need at least 3 knots")
        if self.multistarts < 0:
            raise DomainError("multistarts must be >= 0")

    @property
    def knot_grid(self):
        if self.knots is not None:
            return KnotGrid(tuple(self.knots))
        return KnotGrid.uniform(self.d, self.n_knots)

    def audit_grid(self):
        gmax = self.d + 4.0 if self.quad.gamma_max is None else self.quad.gamma_max
        return np.arange(int(round(gmax / self.audit_step)) + 1) * self.audit_step


@dataclass
class OptResult:
    f: IntervalFunctions
    criterion_value: float
    min_coverage: float
    gamma_argmin: float
    expected_gain: float
    max_potential_loss: float
    gamma_argmax_e2: float
    iterations: int = 0
    starts: list = field(default_factory=list)

    @property
    def gain_loss_ratio(self):
        if self.max_potential_loss <= 0:
            return math.inf
        return self.expected_gain / self.max_potential_loss

    def summary(self):
        return {
            "criterion": self.criterion_value,
            "min_coverage": self.min_coverage,
            "gamma_argmin_coverage": self.gamma_argmin,
            "expected_gain": self.expected_gain,
            "max_potential_loss": self.max_potential_loss,
            "gain_loss_ratio": self.gain_loss_ratio,
            "gamma_argmax_e2": self.gamma_argmax_e2,
        }


@dataclass
class _Attempt:
    z: np.ndarray
    objective: float
    violation: float
    iterations: int
    message: str


def _bounds(cfg, c_alpha, nb, ns):
    lim = cfg.bound_multiple * c_alpha
    return [(-lim, lim)] * nb + [(0.0, lim)] * ns


def _start_points(cfg, z_std, bounds):
    starts = [z_std.copy()]
    rng = make_rng(cfg.seed)
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    for _ in range(cfg.multistarts):
        starts.append(np.clip(z_std + cfg.perturbation * rng.standard_normal(z_std.size), lo, hi))
    return starts


def solve_constrained(ev, cfg, objective, jac, cap=None, z_starts=None):
    """Minimize ``objective`` subject to coverage >= 1 - alpha for all gamma >= 0.

    If ``cap`` is given, e^2(gamma; s) <= cap is imposed as well.  Returns
    the list of attempts (one per start); the caller selects among them.
    """
    target = 1.0 - cfg.alpha
    grid = cfg.quad.gamma_grid(cfg.d)
    audit = cfg.audit_grid()
    knots = ev.knots
    f_std = IntervalFunctions.standard(knots, cfg.alpha)
    z_std = f_std.vector
    bounds = _bounds(cfg, ev.c_alpha, ev.nb, ev.ns)
    if z_starts is None:
        z_starts = _start_points(cfg, z_std, bounds)

    attempts = []
    for z0 in z_starts:
        gammas = grid.copy()
        z = np.asarray(z0, dtype=float)
        iters = 0
        message = ""
        for _ in range(cfg.max_refinements + 1):
            g_sorted = np.unique(gammas)
            cons = [
                {
                    "type": "ineq",
                    "fun": lambda z, g=g_sorted: ev.coverage(z, g) - target,
                    "jac": lambda z, g=g_sorted: ev.coverage(z, g, jac=True)[1],
                }
            ]
            if cap is not None:
                cons.append(
                    {
                        "type": "ineq",
                        "fun": lambda z, g=g_sorted: cap - ev.sel(z, g) ** 2,
                        "jac": lambda z, g=g_sorted: _cap_jac(ev, z, g),
                    }
                )
            res = minimize(
                objective,
                z,
                jac=jac,
                method="SLSQP",
                bounds=bounds,
                constraints=cons,
                options={"maxiter": cfg.max_iter, "ftol": cfg.ftol},
            )
            z = np.clip(res.x, [b[0] for b in bounds], [b[1] for b in bounds])
            iters += int(res.nit)
            message = str(res.message)
            f = IntervalFunctions.from_vector(knots, z, cfg.alpha)
            cmin, garg = min_coverage(f, ev.rho_tilde, cfg.quad, gammas=audit)
            new = []
            viol = max(0.0, target - cmin)
            if viol > 1e-7:
                new.append(garg)
            if cap is not None:
                emax, gmax = max_sel2(f, cfg.quad, gammas=audit)
                viol = max(viol, emax - cap)
                if emax - cap > 1e-7:
                    new.append(gmax)
            if not new:
                break
            gammas = np.concatenate([gammas, new])
        attempts.append(_Attempt(z, float(objective(z)), viol, iters, message))
    return attempts


def _cap_jac(ev, z, g):
    e, J = ev.sel(z, g, jac=True)
    return -2.0 * e[:, None] * J


def _select(attempts, tol, tiebreak):
    feasible = [a for a in attempts if a.violation <= tol]
    if not feasible:
        return None
    best = min(a.objective for a in feasible)
    close = [a for a in feasible if a.objective <= best + 1e-8]
    return min(close, key=tiebreak)


def optimize_interval(cfg):
    """Knot values of b and s minimizing the weighted expected length.

    Raises
    ------
    OptimizationError
        If no start reaches min coverage within ``cfg.constraint_tol`` of
        1 - alpha.
    """
    knots = cfg.knot_grid
    ev = get_evaluator(knots, cfg.alpha, float(cfg.rho_tilde), cfg.quad)
    g, k = ev.criterion_linear(cfg.omega)
    attempts = solve_constrained(ev, cfg, lambda z: float(g @ z + k), lambda z: g)

    def loss_of(a):
        f = IntervalFunctions.from_vector(knots, a.z, cfg.alpha)
        return max_sel2(f, cfg.quad, gammas=cfg.audit_grid())[0]

    chosen = _select(attempts, cfg.constraint_tol, loss_of)
    if chosen is None:
        worst = min(attempts, key=lambda a: a.violation)
        raise OptimizationError(
            f"no feasible solution after {len(attempts)} starts; best violation {worst.violation:.3g}",
            best=IntervalFunctions.from_vector(knots, worst.z, cfg.alpha),
            violation=worst.violation,
        )
    return summarize(IntervalFunctions.from_vector(knots, chosen.z, cfg.alpha), cfg, chosen, attempts)


def summarize(f, cfg, chosen=None, attempts=()):
    audit = cfg.audit_grid()
    cmin, garg = min_coverage(f, cfg.rho_tilde, cfg.quad, gammas=audit)
    e0 = float(sel(f, 0.0, cfg.quad))
    emax, gmax = max_sel2(f, cfg.quad, gammas=audit)
    g, k = get_evaluator(f.knots, f.alpha, None, cfg.quad).criterion_linear(cfg.omega)
    return OptResult(
        f=f,
        criterion_value=float(g @ f.vector + k),
        min_coverage=cmin,
        gamma_argmin=garg,
        expected_gain=1.0 - e0 * e0,
        max_potential_loss=emax - 1.0,
        gamma_argmax_e2=gmax,
        iterations=0 if chosen is None else chosen.iterations,
        starts=[
            {"objective": a.objective, "violation": a.violation, "iterations": a.iterations, "message": a.message}
            for a in attempts
        ],
    )


@dataclass
class OmegaRow:
    omega: float
    result: OptResult = None
    error: str = None

    @property
    def gain(self):
        return self.result.expected_gain if self.result else math.nan

    @property
    def loss(self):
        return self.result.max_potential_loss if self.result else math.nan

    @property
    def ratio(self):
        return self.result.gain_loss_ratio if self.result else math.nan


TABLE1_OMEGAS = (0.05, 0.2, 0.5, 1.0)


def omega_table(cfg, omegas=TABLE1_OMEGAS, threads=1):
    """Optimize once per omega; failures are recorded per row."""
    omegas = list(omegas)
    if not omegas:
        raise DomainError("omegas must be nonempty")

    def run(omega):
        try:
            return OmegaRow(omega, optimize_interval(replace(cfg, omega=float(omega))))
        except OptimizationError as exc:
            return OmegaRow(omega, error=str(exc))

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(run, omegas))
    return [run(w) for w in omegas]
