"""scikit-learn style front end.

``CrossoverPriorInterval.fit()`` runs the constrained optimization for the
known-variance setting and ``predict`` maps rows of (Theta_hat, Psi_hat) to
interval endpoints.  Hyperparameters follow the ``get_params``/``set_params``
convention, so the estimator clones and grid-searches like any other.
"""

import math

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .optimize import OptConfig, optimize_interval
from .perf import coverage, sel
from .validation import check_positive


class CrossoverPriorInterval(BaseEstimator):
    """Confidence interval for theta that uses the prior guess psi = 0.

    Parameters
    ----------
    alpha : float, default=0.05
        One minus the nominal coverage.
    rho_tilde : float, default=sqrt(3)/2
        Known correlation between Theta_hat and Psi_hat.
    sigma : float, default=1.0
        Known sigma = sqrt(sigma_eps^2 + sigma_s^2).
    m : float, default=1.0
        1/n1 + 1/n2.
    d : float, default=6.0
        Beyond |H| >= d the interval is the standard one.
    n_knots : int, default=9
        Evenly spaced knots on [0, d].
    omega : float, default=0.2
        Weight of the expected length away from gamma = 0.
    multistarts : int, default=2
        Random restarts in addition to the standard-interval start.
    random_state : int, default=0
        Seed for the restarts.

    Attributes
    ----------
    functions_ : IntervalFunctions
    result_ : OptResult
    """

    def __init__(
        self,
        alpha=0.05,
        rho_tilde=math.sqrt(3.0) / 2.0,
        sigma=1.0,
        m=1.0,
        d=6.0,
        n_knots=9,
        omega=0.2,
        multistarts=2,
        random_state=0,
    ):
        self.alpha = alpha
        self.rho_tilde = rho_tilde
        self.sigma = sigma
        self.m = m
        self.d = d
        self.n_knots = n_knots
        self.omega = omega
        self.multistarts = multistarts
        self.random_state = random_state

    def _config(self):
        return OptConfig(
            alpha=self.alpha,
            rho_tilde=self.rho_tilde,
            d=float(self.d),
            n_knots=int(self.n_knots),
            omega=self.omega,
            multistarts=int(self.multistarts),
            seed=int(self.random_state),
        )

    def fit(self, X=None, y=None):
        """Optimize b and s.  ``X`` and ``y`` are ignored (the known-variance problem has no data)."""
        check_positive(self.sigma, "sigma")
        check_positive(self.m, "m")
        self.config_ = self._config()
        self.result_ = optimize_interval(self.config_)
        self.functions_ = self.result_.f
        return self

    def predict(self, X):
        """Interval endpoints, shape (n_samples, 2), for rows (Theta_hat, Psi_hat)."""
        check_is_fitted(self, "functions_")
        X = check_array(X, ensure_2d=True, dtype=float)
        if X.shape[1] != 2:
            raise ValueError(f"X must have 2 columns (Theta_hat, Psi_hat), got {X.shape[1]}")
        f = self.functions_
        scale = math.sqrt(self.m) * self.sigma
        h = X[:, 1] / (scale * self.rho_tilde)
        center = X[:, 0] - scale * np.asarray(f.eval_b(h))
        half = scale * np.asarray(f.eval_s(np.abs(h)))
        return np.column_stack([center - half, center + half])

    def coverage(self, gammas):
        check_is_fitted(self, "functions_")
        return coverage(self.functions_, self.rho_tilde, gammas, self.config_.quad)

    def scaled_expected_length(self, gammas):
        check_is_fitted(self, "functions_")
        return sel(self.functions_, gammas, self.config_.quad)
