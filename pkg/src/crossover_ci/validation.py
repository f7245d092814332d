"""Input validation helpers shared by the estimators and the functional API."""

import math
from numbers import Real

import numpy as np
from scipy.special import ndtri

RHO_TILDE_MIN = 1.0 / math.sqrt(2.0)


class DomainError(ValueError):
    """Raised when an argument lies outside the domain of an operation."""


def check_finite(x, name="x"):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} must be finite")
    return arr


def check_positive(value, name):
    if not isinstance(value, Real) or not math.isfinite(value) or value <= 0:
        raise DomainError(f"{name} must be a positive finite number, got {value!r}")
    return float(value)


def check_nonnegative(value, name):
    if not isinstance(value, Real) or not math.isfinite(value) or value < 0:
        raise DomainError(f"{name} must be a nonnegative finite number, got {value!r}")
    return float(value)


def check_alpha(alpha):
    if not isinstance(alpha, Real) or not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha!r}")
    return float(alpha)


def check_rho_tilde(rho_tilde, strict=False):
    """Validate a correlation between the period-1 estimator and the carryover estimator.

    With ``strict=True`` the lower boundary 1/sqrt(2) (no between-subject
    variance) is excluded, as required by the coverage formulas.
    """
    if not isinstance(rho_tilde, Real) or not math.isfinite(rho_tilde):
        raise DomainError(f"rho_tilde must be a finite number, got {rho_tilde!r}")
    lo_ok = rho_tilde > RHO_TILDE_MIN if strict else rho_tilde >= RHO_TILDE_MIN - 1e-15
    if not lo_ok or rho_tilde >= 1.0:
        bracket = "(" if strict else "["
        raise DomainError(f"rho_tilde must lie in {bracket}1/sqrt(2), 1), got {rho_tilde!r}")
    return float(rho_tilde)


def critical_value(alpha):
    """Two-sided standard normal quantile Phi^{-1}(1 - alpha/2)."""
    return float(ndtri(1.0 - check_alpha(alpha) / 2.0))
