"""Spline-parameterized interval functions b and s, and the interval J(b, s).

b is odd, vanishes for |x| >= d and has zero slope at +-d; it is the clamped
cubic spline through the odd extension of its knot values.  s is the natural
cubic spline through its knot values on [0, d] and equals c_alpha beyond d.
"""

import json
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.linalg import solve_banded

from .validation import (
    DomainError,
    check_alpha,
    check_finite,
    check_positive,
    check_rho_tilde,
    critical_value,
)


class CubicSpline:
    """Interpolating cubic spline in second-derivative form.

    Parameters
    ----------
    x : array_like, shape (n,)
        Strictly increasing abscissae, n >= 3.
    y : array_like, shape (n,) or (n, k)
        Ordinates.  A 2-D ``y`` builds k splines sharing the same knots,
        which is how the linear basis maps below are assembled.
    bc : {"natural", "clamped"}
        "clamped" imposes first derivatives ``slopes`` at the two ends.
    """

    def __init__(self, x, y, bc="natural", slopes=(0.0, 0.0)):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if x.ndim != 1 or x.size < 3 or np.any(np.diff(x) <= 0):
            raise DomainError("spline knots must be strictly increasing with at least 3 points")
        if y.shape[0] != x.size:
            raise DomainError("y must have one row per knot")
        if bc not in ("natural", "clamped"):
            raise DomainError(f"unknown boundary condition {bc!r}")
        self.x, self.y = x, y
        self.M = self._second_derivatives(x, y, bc, slopes)

    @staticmethod
    def _second_derivatives(x, y, bc, slopes):
        n = x.size
        h = np.diff(x)
        ab = np.zeros((3, n))
        rhs = np.zeros((n,) + y.shape[1:])
        dy = np.diff(y, axis=0) / h.reshape((-1,) + (1,) * (y.ndim - 1))
        # interior rows: h_{i-1} M_{i-1} + 2(h_{i-1}+h_i) M_i + h_i M_{i+1} = 6(dy_i - dy_{i-1})
        ab[1, 1:-1] = 2.0 * (h[:-1] + h[1:])
        ab[0, 2:] = h[1:]
        ab[2, :-2] = h[:-1]
        rhs[1:-1] = 6.0 * (dy[1:] - dy[:-1])
        if bc == "natural":
            ab[1, 0] = ab[1, -1] = 1.0
        else:
            ab[1, 0], ab[0, 1] = 2.0 * h[0], h[0]
            ab[2, -2], ab[1, -1] = h[-1], 2.0 * h[-1]
            rhs[0] = 6.0 * (dy[0] - slopes[0])
            rhs[-1] = 6.0 * (slopes[1] - dy[-1])
        return solve_banded((1, 1), ab, rhs)

    def _locate(self, t):
        t = np.asarray(t, dtype=float)
        i = np.clip(np.searchsorted(self.x, t, side="right") - 1, 0, self.x.size - 2)
        return t, i

    def __call__(self, t):
        t, i = self._locate(t)
        x, y, M = self.x, self.y, self.M
        h = x[i + 1] - x[i]
        a = x[i + 1] - t
        b = t - x[i]
        if y.ndim > 1:
            h, a, b = h[..., None], a[..., None], b[..., None]
        return (
            M[i] * a**3 / (6.0 * h)
            + M[i + 1] * b**3 / (6.0 * h)
            + (y[i] / h - M[i] * h / 6.0) * a
            + (y[i + 1] / h - M[i + 1] * h / 6.0) * b
        )

    def derivative(self, t):
        t, i = self._locate(t)
        x, y, M = self.x, self.y, self.M
        h = x[i + 1] - x[i]
        a = x[i + 1] - t
        b = t - x[i]
        if y.ndim > 1:
            h, a, b = h[..., None], a[..., None], b[..., None]
        return (
            -M[i] * a**2 / (2.0 * h)
            + M[i + 1] * b**2 / (2.0 * h)
            + (y[i + 1] - y[i]) / h
            - (M[i + 1] - M[i]) * h / 6.0
        )


@dataclass(frozen=True)
class KnotGrid:
    x: tuple

    def __post_init__(self):
        x = tuple(float(v) for v in self.x)
        if len(x) < 3:
            raise DomainError("need at least 3 knots")
        if x[0] != 0.0 or any(b <= a for a, b in zip(x, x[1:])):
            raise DomainError("knots must start at 0 and be strictly increasing")
        object.__setattr__(self, "x", x)

    @classmethod
    def uniform(cls, d, q):
        d = check_positive(d, "d")
        return cls(tuple(np.linspace(0.0, d, int(q))))

    @property
    def d(self):
        return self.x[-1]

    @property
    def q(self):
        return len(self.x)

    @property
    def array(self):
        return np.asarray(self.x)

    @property
    def symmetric(self):
        x = self.array
        return np.concatenate([-x[:0:-1], x])

    @cached_property
    def _b_basis_spline(self):
        # columns: unit odd-extended data for b(x_2), ..., b(x_{q-1})
        q = self.q
        eye = np.eye(q)[:, 1 : q - 1]
        data = np.concatenate([-eye[:0:-1], eye], axis=0)
        return CubicSpline(self.symmetric, data, bc="clamped")

    @cached_property
    def _s_basis_spline(self):
        return CubicSpline(self.array, np.eye(self.q), bc="natural")

    def b_basis(self, t):
        """Matrix mapping b_free to b(t) for a vector of points t."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.sign(t)[:, None] * self._b_basis_spline(np.abs(t))
        out[np.abs(t) >= self.d] = 0.0
        return out

    def s_basis(self, t):
        """Matrix mapping (s(x_1), ..., s(x_q)) to s(t) for t >= 0."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = self._s_basis_spline(np.minimum(t, self.d))
        out[t >= self.d] = np.eye(self.q)[-1]
        return out


@dataclass(frozen=True)
class IntervalFunctions:
    """Knot values defining b and s on [0, d].

    ``b_free`` holds b(x_2), ..., b(x_{q-1}); ``s_free`` holds
    s(x_1), ..., s(x_{q-1}).  The remaining values are fixed: b(0) = b(d) = 0
    and s(d) = c_alpha.
    """

    knots: KnotGrid
    b_free: tuple
    s_free: tuple
    alpha: float = 0.05

    def __post_init__(self):
        check_alpha(self.alpha)
        b = tuple(float(v) for v in check_finite(self.b_free, "b_free").ravel())
        s = tuple(float(v) for v in check_finite(self.s_free, "s_free").ravel())
        q = self.knots.q
        if len(b) != q - 2 or len(s) != q - 1:
            raise DomainError(f"expected {q - 2} b values and {q - 1} s values, got {len(b)} and {len(s)}")
        object.__setattr__(self, "b_free", b)
        object.__setattr__(self, "s_free", s)

    @classmethod
    def standard(cls, knots, alpha=0.05):
        """b = 0 and s = c_alpha: the usual interval from period-1 data."""
        c = critical_value(alpha)
        return cls(knots, (0.0,) * (knots.q - 2), (c,) * (knots.q - 1), alpha)

    @classmethod
    def from_vector(cls, knots, z, alpha=0.05):
        z = np.asarray(z, dtype=float)
        return cls(knots, z[: knots.q - 2], z[knots.q - 2 :], alpha)

    @property
    def vector(self):
        return np.concatenate([self.b_free, self.s_free])

    @property
    def d(self):
        return self.knots.d

    @cached_property
    def c_alpha(self):
        return critical_value(self.alpha)

    @cached_property
    def b_values(self):
        return np.concatenate([[0.0], self.b_free, [0.0]])

    @cached_property
    def s_values(self):
        return np.concatenate([self.s_free, [self.c_alpha]])

    @cached_property
    def _b_spline(self):
        v = self.b_values
        return CubicSpline(self.knots.symmetric, np.concatenate([-v[:0:-1], v]), bc="clamped")

    @cached_property
    def _s_spline(self):
        return CubicSpline(self.knots.array, self.s_values, bc="natural")

    def eval_b(self, x):
        x = check_finite(x)
        ax = np.abs(x)
        out = np.where(ax >= self.d, 0.0, np.sign(x) * self._b_spline(np.minimum(ax, self.d)))
        return out[()] if out.ndim == 0 else out

    def eval_s(self, x):
        x = check_finite(x)
        if np.any(x < 0):
            raise DomainError("s is defined on [0, inf); pass |h|")
        out = np.where(x >= self.d, self.c_alpha, self._s_spline(np.minimum(x, self.d)))
        return out[()] if out.ndim == 0 else out

    def ell_u(self, h):
        b = self.eval_b(h)
        s = self.eval_s(np.abs(h))
        return b - s, b + s

    def to_dict(self):
        return {
            "d": self.d,
            "alpha": self.alpha,
            "knots": list(self.knots.x),
            "b_free": list(self.b_free),
            "s_free": list(self.s_free),
        }

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2) + "\n"
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_dict(cls, doc):
        knots = KnotGrid(tuple(doc["knots"]))
        if "d" in doc and not math.isclose(doc["d"], knots.d, rel_tol=1e-12):
            raise DomainError("d does not match the last knot")
        return cls(knots, tuple(doc["b_free"]), tuple(doc["s_free"]), float(doc["alpha"]))

    @classmethod
    def from_json(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def eval_b(f, x):
    return f.eval_b(x)


def eval_s(f, x):
    return f.eval_s(x)


def ell_u(f, h):
    return f.ell_u(h)


@dataclass(frozen=True)
class Interval:
    lower: float
    upper: float

    def __post_init__(self):
        if self.lower > self.upper:
            raise DomainError("interval lower endpoint exceeds upper endpoint")

    def __contains__(self, value):
        return self.lower <= value <= self.upper

    @property
    def length(self):
        return self.upper - self.lower


def construct_interval(f, theta_hat, psi_hat, sigma, m, rho_tilde):
    """Interval for the treatment difference from the two estimators.

    center = theta_hat - sqrt(m) sigma b(H), half-width = sqrt(m) sigma s(|H|),
    with H = psi_hat / (sigma sqrt(m) rho_tilde).
    """
    sigma = check_positive(sigma, "sigma")
    m = check_positive(m, "m")
    rho_tilde = check_rho_tilde(rho_tilde)
    scale = math.sqrt(m) * sigma
    h = psi_hat / (scale * rho_tilde)
    center = theta_hat - scale * float(f.eval_b(h))
    half = scale * float(f.eval_s(abs(h)))
    return Interval(center - half, center + half)
