"""Two-period crossover model: designs, variance components, summary statistics.

Group 1 receives treatment A then B, group 2 receives B then A.  Index 0 of
every treatment pair refers to A.  The residual (carryover) effect of the
period-1 treatment enters period-2 responses only.
"""

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .validation import (
    DomainError,
    RHO_TILDE_MIN,
    check_nonnegative,
    check_positive,
    check_rho_tilde,
)


@dataclass(frozen=True)
class TrialDesign:
    n1: int
    n2: int
    relaxed: bool = False

    def __post_init__(self):
        floor = 1 if self.relaxed else 2
        if int(self.n1) != self.n1 or int(self.n2) != self.n2:
            raise DomainError("group sizes must be integers")
        if self.n1 < floor or self.n2 < floor:
            raise DomainError(f"each group needs at least {floor} subjects, got ({self.n1}, {self.n2})")

    @property
    def m(self):
        return 1.0 / self.n1 + 1.0 / self.n2

    @property
    def M(self):
        return self.n1 + self.n2


@dataclass(frozen=True)
class VarianceModel:
    sigma_s2: float
    sigma_eps2: float

    def __post_init__(self):
        check_nonnegative(self.sigma_s2, "sigma_s2")
        check_positive(self.sigma_eps2, "sigma_eps2")

    @classmethod
    def from_ratio(cls, ratio, sigma_eps2=1.0):
        return cls(sigma_s2=check_nonnegative(ratio, "ratio") * sigma_eps2, sigma_eps2=sigma_eps2)

    @property
    def sigma2(self):
        return self.sigma_eps2 + self.sigma_s2

    @property
    def sigma(self):
        return math.sqrt(self.sigma2)

    @property
    def rho(self):
        return self.sigma_s2 / self.sigma2

    @property
    def rho_tilde(self):
        return math.sqrt((1.0 + self.rho) / 2.0)


@dataclass(frozen=True)
class TrialParams:
    mu: float = 0.0
    pi: tuple = (0.0, 0.0)
    phi: tuple = (0.0, 0.0)
    lam: tuple = (0.0, 0.0)

    @property
    def theta(self):
        return self.phi[0] - self.phi[1]

    @property
    def psi(self):
        return (self.lam[0] - self.lam[1]) / 2.0

    @classmethod
    def from_theta_psi(cls, theta, psi, mu=0.0):
        """Parameters with treatment difference ``theta`` and differential carryover ``psi``."""
        return cls(mu=mu, phi=(theta / 2.0, -theta / 2.0), lam=(psi, -psi))


@dataclass(frozen=True)
class TrialData:
    """Responses of a two-period crossover trial.

    ``group1`` and ``group2`` are arrays of shape (n_i, 2); column k holds
    the period-(k+1) response of each subject.
    """

    group1: np.ndarray
    group2: np.ndarray

    def __post_init__(self):
        for name in ("group1", "group2"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.ndim != 2 or arr.shape[1] != 2:
                raise DomainError(f"{name} must have shape (n_subjects, 2), got {arr.shape}")
            if arr.shape[0] == 0:
                raise DomainError(f"{name} is empty")
            object.__setattr__(self, name, arr)

    @property
    def design(self):
        return TrialDesign(self.group1.shape[0], self.group2.shape[0], relaxed=True)

    def to_csv(self, path=None):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["group", "subject", "period", "response"])
        for g, arr in ((1, self.group1), (2, self.group2)):
            for j, row in enumerate(arr, start=1):
                for k in (1, 2):
                    writer.writerow([g, j, k, repr(float(row[k - 1]))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path_or_buffer):
        if isinstance(path_or_buffer, (str, bytes)) or hasattr(path_or_buffer, "__fspath__"):
            with open(path_or_buffer, encoding="utf-8", newline="") as fh:
                rows = list(csv.DictReader(fh))
        else:
            rows = list(csv.DictReader(path_or_buffer))
        if rows and set(rows[0]) != {"group", "subject", "period", "response"}:
            raise DomainError("CSV header must be group,subject,period,response")
        cells = {1: {}, 2: {}}
        for line, row in enumerate(rows, start=2):
            g, j, k = int(row["group"]), int(row["subject"]), int(row["period"])
            if g not in (1, 2) or k not in (1, 2):
                raise DomainError(f"line {line}: group and period must be 1 or 2")
            cells[g].setdefault(j, {})[k] = float(row["response"])
        groups = []
        for g in (1, 2):
            subjects = sorted(cells[g])
            if not subjects:
                raise DomainError(f"group {g} has no subjects")
            if subjects != list(range(1, len(subjects) + 1)):
                raise DomainError(f"group {g}: subject ids must be 1..n")
            for j in subjects:
                if set(cells[g][j]) != {1, 2}:
                    raise DomainError(f"group {g} subject {j} lacks a response for both periods")
            groups.append(np.array([[cells[g][j][1], cells[g][j][2]] for j in subjects]))
        return cls(*groups)


@dataclass(frozen=True)
class SummaryStats:
    A: float
    Psi_hat: float
    V: float
    W: float

    @property
    def Theta_hat(self):
        return self.A + self.Psi_hat


@dataclass(frozen=True)
class StandardizedState:
    gamma: float
    g: float
    h: float


def rho_tilde_from_ratio(ratio):
    """Correlation sqrt((1 + rho)/2) implied by the ratio sigma_s^2 / sigma_eps^2."""
    ratio = check_nonnegative(ratio, "ratio")
    return math.sqrt((1.0 + ratio / (1.0 + ratio)) / 2.0)


def ratio_from_rho_tilde(rho_tilde):
    """Inverse of :func:`rho_tilde_from_ratio`."""
    rt = check_rho_tilde(rho_tilde)
    rt2 = max(rt * rt, 0.5)
    return (2.0 * rt2 - 1.0) / (2.0 - 2.0 * rt2)


def _stats_arrays(y1, y2):
    # y1: (..., n1, 2), y2: (..., n2, 2); reductions over the subject axis
    m1 = y1.mean(axis=-2)
    m2 = y2.mean(axis=-2)
    A = (m1[..., 0] - m1[..., 1] - m2[..., 0] + m2[..., 1]) / 2.0
    psi = (m1[..., 0] + m1[..., 1] - m2[..., 0] - m2[..., 1]) / 2.0
    c1 = y1 - m1[..., None, :]
    c2 = y2 - m2[..., None, :]
    V = 0.5 * (((c1[..., 0] - c1[..., 1]) ** 2).sum(-1) + ((c2[..., 0] - c2[..., 1]) ** 2).sum(-1))
    W = 0.5 * (((c1[..., 0] + c1[..., 1]) ** 2).sum(-1) + ((c2[..., 0] + c2[..., 1]) ** 2).sum(-1))
    return A, psi, V, W


def summary_stats(data, design=None):
    """Compute A, Psi_hat, V and W from raw responses.

    If ``design`` is given the group sizes must match it, and unless the
    design is relaxed each group needs at least two subjects.
    """
    n1, n2 = data.group1.shape[0], data.group2.shape[0]
    if design is None:
        design = TrialDesign(n1, n2)
    elif (design.n1, design.n2) != (n1, n2):
        raise DomainError(f"data has group sizes ({n1}, {n2}) but design expects ({design.n1}, {design.n2})")
    A, psi, V, W = _stats_arrays(data.group1, data.group2)
    return SummaryStats(float(A), float(psi), float(V), float(W))


def make_rng(seed):
    """Counter-based generator; all normal deviates are drawn through it by inversion."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(seed))


def standard_normal(rng, size):
    """Standard normal deviates via the inverse CDF of open-interval uniforms."""
    u = (rng.integers(0, 2**53, size=size, dtype=np.int64) + 0.5) * 2.0**-53
    return ndtri(u)


def _mean_matrix(params):
    """Fixed-effect means indexed [group, period]."""
    mu, (p1, p2), (fa, fb), (la, lb) = params.mu, params.pi, params.phi, params.lam
    return np.array(
        [
            [mu + p1 + fa, mu + p2 + fb + la],
            [mu + p1 + fb, mu + p2 + fa + lb],
        ]
    )


def simulate_batch(params, design, variances, rng, size):
    """Simulate ``size`` independent trials at once.

    Returns arrays of shape (size, n1, 2) and (size, n2, 2).
    """
    means = _mean_matrix(params)
    ss, se = math.sqrt(variances.sigma_s2), math.sqrt(variances.sigma_eps2)
    out = []
    for i, n in enumerate((design.n1, design.n2)):
        z = standard_normal(rng, (size, n, 3))
        y = means[i] + ss * z[..., :1] + se * z[..., 1:]
        out.append(y)
    return out[0], out[1]


def simulate_trial(params, design, variances, seed=None):
    """Draw one trial from the random-subject-effect crossover model."""
    y1, y2 = simulate_batch(params, design, variances, make_rng(seed), 1)
    return TrialData(y1[0], y2[0])


def standardize(stats, theta, psi, sigma, m, rho_tilde):
    sigma = check_positive(sigma, "sigma")
    m = check_positive(m, "m")
    rt = check_rho_tilde(rho_tilde)
    scale = sigma * math.sqrt(m)
    return StandardizedState(
        gamma=psi / (scale * rt),
        g=(stats.Theta_hat - theta) / scale,
        h=stats.Psi_hat / (scale * rt),
    )
