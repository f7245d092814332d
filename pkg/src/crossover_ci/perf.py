"""Coverage probability and scaled expected length of J(b, s) by quadrature.

With G = (Theta_hat - theta)/(sigma sqrt(m)) and H the standardized carryover
estimator, (G, H) is bivariate normal with means (0, gamma), unit variances
and correlation rho_tilde.  Conditional on H = h, G ~ N(rho_tilde (h - gamma),
1 - rho_tilde^2), so coverage reduces to a single integral over h in [-d, d]
of the difference between the new and the standard conditional coverage.
"""

import csv
import io
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import ndtr

from .model import make_rng, standard_normal
from .validation import DomainError, check_nonnegative, check_rho_tilde, critical_value

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class QuadratureError(RuntimeError):
    """Raised when refining the quadrature changes a result by more than 1e-8."""


def _phi(x):
    return _INV_SQRT_2PI * np.exp(-0.5 * np.square(x))


def _lam_std(zl, zu):
    """P(zl <= Z <= zu) for standard normal Z, evaluated on the short tail."""
    upper_tail = zl > 0
    p = np.where(upper_tail, ndtr(-zl) - ndtr(-zu), ndtr(zu) - ndtr(zl))
    return np.clip(p, 0.0, 1.0)


def lambda_prob(x, y, mu, v):
    """P(x <= Z <= y) for Z ~ N(mu, v)."""
    if v <= 0:
        raise DomainError("variance must be positive")
    if x > y:
        raise DomainError("lower limit exceeds upper limit")
    sd = math.sqrt(v)
    return float(_lam_std((x - mu) / sd, (y - mu) / sd))


@dataclass(frozen=True)
class WeightSpec:
    omega: float = 0.2

    def __post_init__(self):
        check_nonnegative(self.omega, "omega")


@dataclass(frozen=True)
class QuadratureSpec:
    """Composite Gauss-Legendre rule on [-d, d] plus the gamma search grid.

    Panel edges always include every knot +-x_i, so the kink of s(|h|) at
    h = 0 and the truncation points +-d fall on panel boundaries.
    ``gamma_max`` defaults to d + 4.
    """

    panels: int = 64
    nodes_per_panel: int = 10
    gamma_step: float = 0.05
    gamma_max: float = None

    def __post_init__(self):
        if self.panels < 8:
            raise DomainError("need at least 8 panels")
        if self.nodes_per_panel < 5:
            raise DomainError("need at least 5 nodes per panel")
        if self.gamma_step <= 0:
            raise DomainError("gamma_step must be positive")

    def gamma_grid(self, d):
        gmax = d + 4.0 if self.gamma_max is None else self.gamma_max
        n = int(round(gmax / self.gamma_step))
        return np.arange(n + 1) * self.gamma_step

    def refined(self):
        return QuadratureSpec(2 * self.panels, self.nodes_per_panel, self.gamma_step, self.gamma_max)


DEFAULT_QUAD = QuadratureSpec()


@lru_cache(maxsize=64)
def quadrature_rule(knots, panels, nodes_per_panel):
    """Nodes and weights on [-d, d] with panels allotted to knot intervals by length."""
    edges = knots.symmetric
    widths = np.diff(edges)
    counts = np.maximum(1, np.round(panels * widths / widths.sum()).astype(int))
    gx, gw = np.polynomial.legendre.leggauss(nodes_per_panel)
    h, w = [], []
    for a, b, k in zip(edges[:-1], edges[1:], counts):
        sub = np.linspace(a, b, k + 1)
        for lo, hi in zip(sub[:-1], sub[1:]):
            half = 0.5 * (hi - lo)
            h.append(half * gx + 0.5 * (hi + lo))
            w.append(half * gw)
    h, w = np.concatenate(h), np.concatenate(w)
    h.setflags(write=False)
    w.setflags(write=False)
    return h, w


class PerformanceEvaluator:
    """Vectorized coverage / expected-length evaluation for a fixed knot grid.

    Works on the free-parameter vector z = (b_free, s_free) so that the
    optimizer gets exact gradients: b and s at the quadrature nodes are
    linear in z through cached basis matrices.
    """

    def __init__(self, knots, alpha=0.05, rho_tilde=None, quad=DEFAULT_QUAD):
        self.knots = knots
        self.alpha = alpha
        self.c_alpha = critical_value(alpha)
        self.rho_tilde = None if rho_tilde is None else check_rho_tilde(rho_tilde, strict=True)
        self.quad = quad
        self.h, self.w = quadrature_rule(knots, quad.panels, quad.nodes_per_panel)
        q = knots.q
        self.nb, self.ns = q - 2, q - 1
        self.B = knots.b_basis(self.h)
        S_full = knots.s_basis(np.abs(self.h))
        self.S = S_full[:, :-1]
        self.s_offset = S_full[:, -1] * self.c_alpha
        self._gamma_cache = {}

    def _split(self, z):
        z = np.asarray(z, dtype=float)
        return z[: self.nb], z[self.nb :]

    def b_s(self, z):
        bf, sf = self._split(z)
        return self.B @ bf, self.S @ sf + self.s_offset

    def _gamma_terms(self, gammas):
        key = gammas.tobytes()
        hit = self._gamma_cache.get(key)
        if hit is not None:
            return hit
        diff = self.h[None, :] - gammas[:, None]
        dens = _phi(diff) * self.w[None, :]
        terms = (dens,)
        if self.rho_tilde is not None:
            rt = self.rho_tilde
            sd = math.sqrt(1.0 - rt * rt)
            mu = rt * diff
            c = self.c_alpha
            kdag = _lam_std((-c - mu) / sd, (c - mu) / sd)
            terms = (dens, mu, sd, kdag)
        if len(self._gamma_cache) > 32:
            self._gamma_cache.clear()
        self._gamma_cache[key] = terms
        return terms

    def coverage(self, z, gammas, jac=False):
        if self.rho_tilde is None:
            raise DomainError("coverage needs rho_tilde")
        gammas = np.atleast_1d(np.asarray(gammas, dtype=float))
        dens, mu, sd, kdag = self._gamma_terms(gammas)
        b, s = self.b_s(z)
        zl = (b - s - mu) / sd
        zu = (b + s - mu) / sd
        k = _lam_std(zl, zu)
        cov = (1.0 - self.alpha) + ((k - kdag) * dens).sum(axis=1)
        cov = np.clip(cov, 0.0, 1.0)
        if not jac:
            return cov
        pu = _phi(zu) * dens / sd
        pl = _phi(zl) * dens / sd
        J = np.concatenate([(pu - pl) @ self.B, (pu + pl) @ self.S], axis=1)
        return cov, J

    def sel(self, z, gammas, jac=False):
        gammas = np.atleast_1d(np.asarray(gammas, dtype=float))
        dens = self._gamma_terms(gammas)[0]
        _, s = self.b_s(z)
        e = 1.0 + dens @ (s - self.c_alpha) / self.c_alpha
        if not jac:
            return e
        J = np.concatenate([np.zeros((gammas.size, self.nb)), dens @ self.S / self.c_alpha], axis=1)
        return e, J

    def criterion_linear(self, omega):
        """Gradient g and constant k with criterion(z) = g . z + k (it is affine in s)."""
        pos = self.h > 0
        wt = self.w[pos] * (omega + _phi(self.h[pos]))
        g_s = (2.0 / self.c_alpha) * (wt @ self.S[pos])
        const = (2.0 / self.c_alpha) * (wt @ (self.s_offset[pos] - self.c_alpha))
        return np.concatenate([np.zeros(self.nb), g_s]), float(const)

    def criterion(self, z, omega):
        g, k = self.criterion_linear(omega)
        return float(g @ np.asarray(z, dtype=float) + k)


@lru_cache(maxsize=32)
def get_evaluator(knots, alpha, rho_tilde, quad):
    return PerformanceEvaluator(knots, alpha, rho_tilde, quad)


def _scalar_or_array(values, like):
    return float(values[0]) if np.ndim(like) == 0 else values


def _checked(fn, f, quad, check):
    out = fn(quad)
    if check:
        fine = fn(quad.refined())
        err = float(np.max(np.abs(np.asarray(fine) - np.asarray(out))))
        if err > 1e-8:
            raise QuadratureError(
                f"quadrature not converged: {quad.panels} vs {2 * quad.panels} panels differ by {err:.3g}"
            )
    return out


def coverage(f, rho_tilde, gamma, quad=DEFAULT_QUAD, check=False):
    """Coverage probability of J(b, s) at standardized carryover ``gamma``."""
    g = np.atleast_1d(np.asarray(gamma, dtype=float))

    def run(qs):
        return get_evaluator(f.knots, f.alpha, float(rho_tilde), qs).coverage(f.vector, g)

    return _scalar_or_array(_checked(run, f, quad, check), gamma)


def sel(f, gamma, quad=DEFAULT_QUAD, check=False):
    """Scaled expected length e(gamma; s): expected length over the standard length."""
    g = np.atleast_1d(np.asarray(gamma, dtype=float))

    def run(qs):
        return get_evaluator(f.knots, f.alpha, None, qs).sel(f.vector, g)

    return _scalar_or_array(_checked(run, f, quad, check), gamma)


def criterion(f, weight, quad=DEFAULT_QUAD):
    """Integral of (e(gamma; s) - 1) against d(omega*gamma + step(gamma))."""
    omega = weight.omega if isinstance(weight, WeightSpec) else check_nonnegative(weight, "omega")
    return get_evaluator(f.knots, f.alpha, None, quad).criterion(f.vector, omega)


def _golden_refine(fun, grid, values, idx, tol):
    step = grid[1] - grid[0]
    g0 = grid[idx]
    # coverage and sel are even in gamma, so gamma = 0 brackets symmetrically
    try:
        res = minimize_scalar(fun, bracket=(g0 - step, g0, g0 + step), method="golden", tol=tol)
    except ValueError:
        return float(g0), float(values[idx])
    if res.fun < values[idx]:
        return abs(float(res.x)), float(res.fun)
    return float(g0), float(values[idx])


def min_coverage(f, rho_tilde, quad=DEFAULT_QUAD, gammas=None, refine=3, tol=1e-6):
    """Minimum over gamma >= 0 of the coverage and where it is reached.

    Scans ``gammas`` (default: the quadrature spec's grid on [0, d + 4]) and
    refines the ``refine`` lowest local minima by golden-section search.
    """
    grid = quad.gamma_grid(f.d) if gammas is None else np.asarray(gammas, dtype=float)
    ev = get_evaluator(f.knots, f.alpha, float(rho_tilde), quad)
    z = f.vector
    vals = ev.coverage(z, grid)
    best_g, best_v = float(grid[np.argmin(vals)]), float(vals.min())
    if refine and grid.size >= 3:
        interior = (vals[1:-1] <= vals[:-2]) & (vals[1:-1] <= vals[2:])
        cands = list(np.nonzero(interior)[0] + 1)
        if vals[0] <= vals[1]:
            cands.append(0)
        cands = sorted(cands, key=lambda i: vals[i])[:refine]
        fun = lambda g: float(ev.coverage(z, [g])[0])
        for i in cands:
            g, v = _golden_refine(fun, grid, vals, i, tol)
            if v < best_v:
                best_g, best_v = g, v
    return best_v, best_g


def max_sel2(f, quad=DEFAULT_QUAD, gammas=None, tol=1e-6):
    """Maximum over gamma >= 0 of e^2(gamma; s) and its location."""
    grid = quad.gamma_grid(f.d) if gammas is None else np.asarray(gammas, dtype=float)
    ev = get_evaluator(f.knots, f.alpha, None, quad)
    z = f.vector
    vals = -ev.sel(z, grid) ** 2
    i = int(np.argmin(vals))
    g, v = _golden_refine(lambda g: -float(ev.sel(z, [g])[0]) ** 2, grid, vals, i, tol)
    return -v, g


@dataclass(frozen=True)
class PerfCurve:
    gammas: np.ndarray
    coverage: np.ndarray
    sel2: np.ndarray

    def to_csv(self, path=None):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["gamma", "coverage", "e2"])
        for g, c, e in zip(self.gammas, self.coverage, self.sel2):
            writer.writerow([f"{g:.6g}", f"{c:.12g}", f"{e:.12g}"])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text


def perf_curve(f, rho_tilde, gammas, quad=DEFAULT_QUAD):
    gammas = np.asarray(gammas, dtype=float)
    if gammas.ndim != 1 or gammas.size == 0 or np.any(np.diff(gammas) <= 0):
        raise DomainError("gammas must be a nonempty increasing sequence")
    cov = np.asarray(coverage(f, rho_tilde, gammas, quad))
    e = np.asarray(sel(f, gammas, quad))
    return PerfCurve(gammas, cov, e**2)


def mc_coverage(f, rho_tilde, gamma, reps=10**6, seed=0, chunk=200_000):
    """Monte Carlo estimate of the coverage by drawing (G, H) directly.

    Returns (estimate, standard error).
    """
    if reps < 10**4:
        raise DomainError("reps must be at least 10^4")
    rt = check_rho_tilde(rho_tilde, strict=True)
    sd = math.sqrt(1.0 - rt * rt)
    rng = make_rng(seed)
    hits = 0
    done = 0
    while done < reps:
        n = min(chunk, reps - done)
        z = standard_normal(rng, (2, n))
        h = gamma + z[0]
        g = rt * z[0] + sd * z[1]
        lo, hi = f.ell_u(h)
        hits += int(np.count_nonzero((lo <= g) & (g <= hi)))
        done += n
    p = hits / reps
    return p, math.sqrt(p * (1.0 - p) / reps)
