"""Exact Gaussian conditional laws of the random-intercept crossover model.

The public functions work on one sequence at a time and follow the textbook
matrix formulas.  The ``*_arrays`` helpers at the bottom exploit the
compound-symmetric covariance of a subject (eigenvalues ``se2`` and
``se2 + k*ss2``) to evaluate the same quantities for all subjects at once;
the E-step, the imputation sampler and the likelihood use those.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .data import SubjectArrays, TrialData, stack_subjects
from .design import CrossoverDesign, ParameterVector, build_design_matrices, subject_covariance
from .exceptions import CovarianceError, DataError, ParameterError

PSD_TOL = 1e-10
COND_LIMIT = 1e12
MIN_SIGMA_E2 = 1e-12
LOG_2PI = np.log(2 * np.pi)


@dataclass(frozen=True)
class PosteriorSummary:
    """Law of a sequence's random effects given its completed responses."""

    b0: np.ndarray
    Sigma0: np.ndarray
    degenerate: bool = False


@dataclass(frozen=True)
class ConditionalNormal:
    """Normal law of the missing entries of one sequence given the observed ones.

    ``index`` holds the positions of the missing entries in the sequence's
    response vector, in increasing order.
    """

    mean: np.ndarray
    cov: np.ndarray
    index: np.ndarray | None = None

    def __post_init__(self):
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        cov = 0.5 * (cov + cov.T)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "mean", np.atleast_1d(np.asarray(self.mean, dtype=float)))
        if cov.shape != (self.mean.size, self.mean.size):
            raise CovarianceError("covariance shape does not match the mean")


def random_effect_posterior(
    params: ParameterVector, design: CrossoverDesign, i: int, y_complete
) -> PosteriorSummary:
    """Posterior mean and covariance of ``b_i`` given a completed ``y_i``.

    With ``sigma_s2 == 0`` the random effects are identically zero and a
    degenerate summary (zero mean, zero covariance) is returned.
    """
    dm = build_design_matrices(design)
    params.check(design.n_fixed)
    X, Z = dm.X[i], dm.Z[i]
    y = np.asarray(y_complete, dtype=float)
    if y.shape != (X.shape[0],):
        raise DataError(f"completed response must have length {X.shape[0]}")
    n_i = Z.shape[1]
    if params.sigma_s2 == 0:
        return PosteriorSummary(np.zeros(n_i), np.zeros((n_i, n_i)), degenerate=True)
    precision = Z.T @ Z / params.sigma_e2 + np.eye(n_i) / params.sigma_s2
    Sigma0 = np.linalg.inv(precision)
    b0 = Sigma0 @ Z.T @ (y - X @ params.beta) / params.sigma_e2
    return PosteriorSummary(b0, Sigma0)


def missing_conditional(
    params: ParameterVector, design: CrossoverDesign, i: int, data: TrialData
) -> ConditionalNormal:
    """Law of ``y_mis,i | y_obs,i`` by partitioning N(X_i beta, Sigma_i) per subject."""
    params.check(design.n_fixed)
    pm = design.pm
    mask = data.mask[i].reshape(-1, pm)
    if mask.all():
        raise DataError(f"sequence {i} has no missing entries")
    mu = (build_design_matrices(design).X[i] @ params.beta).reshape(-1, pm)
    y = data.values[i].reshape(-1, pm)
    block = subject_covariance(params, design.p, design.m)
    means, covs, index = [], [], []
    for k in range(mask.shape[0]):
        obs = mask[k]
        mis = ~obs
        if not mis.any():
            continue
        s11 = block[np.ix_(mis, mis)]
        if obs.any():
            s22 = block[np.ix_(obs, obs)]
            cond = np.linalg.cond(s22)
            if not np.isfinite(cond) or cond > COND_LIMIT:
                raise CovarianceError(f"observed covariance of subject {k} is singular (cond={cond:.3g})")
            s21 = block[np.ix_(obs, mis)]
            gain = scipy.linalg.cho_solve(scipy.linalg.cho_factor(s22), s21)
            means.append(mu[k, mis] + gain.T @ (y[k, obs] - mu[k, obs]))
            covs.append(s11 - s21.T @ gain)
        else:
            means.append(mu[k, mis])
            covs.append(s11)
        index.append(k * pm + np.flatnonzero(mis))
    return ConditionalNormal(
        np.concatenate(means), scipy.linalg.block_diag(*covs), np.concatenate(index)
    )


def psd_sqrt(cov: np.ndarray) -> np.ndarray:
    """Symmetric square root, clipping eigenvalues in ``[-PSD_TOL, 0)`` to zero."""
    w, v = np.linalg.eigh(0.5 * (cov + cov.T))
    if w.size and w.min() < -PSD_TOL * max(1.0, abs(w.max())):
        raise CovarianceError(f"covariance is not positive semi-definite (min eigenvalue {w.min():.3g})")
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.T


def sample_missing(cond: ConditionalNormal, rng: np.random.Generator, count: int) -> np.ndarray:
    """``count`` i.i.d. draws of the missing entries, shape (count, m_i)."""
    if count < 1:
        raise ValueError("count must be at least 1")
    root = psd_sqrt(cond.cov)
    z = rng.standard_normal((count, cond.mean.size))
    return cond.mean + z @ root


def sample_b_given_y(
    params: ParameterVector, design: CrossoverDesign, i: int, y_complete, rng: np.random.Generator
) -> np.ndarray:
    post = random_effect_posterior(params, design, i, y_complete)
    if post.degenerate:
        return np.zeros_like(post.b0)
    chol = np.linalg.cholesky(post.Sigma0)
    return post.b0 + chol @ rng.standard_normal(post.b0.size)


def sample_ymis_given_b(
    params: ParameterVector,
    design: CrossoverDesign,
    i: int,
    b,
    data: TrialData,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw the missing entries of sequence ``i`` given its random effects.

    Given ``b`` the entries are independent N(x'beta + b_subject, sigma_e2), so
    the observed responses carry no further information.
    """
    params.check(design.n_fixed)
    if params.sigma_e2 < MIN_SIGMA_E2:
        raise ParameterError("sigma_e2 too small to sample from")
    dm = build_design_matrices(design)
    b = np.asarray(b, dtype=float)
    if b.shape != (design.n_subjects[i],):
        raise DataError(f"b must have length {design.n_subjects[i]}")
    mis = ~data.mask[i]
    mean = (dm.X[i] @ params.beta + dm.Z[i] @ b)[mis]
    return mean + np.sqrt(params.sigma_e2) * rng.standard_normal(mean.size)


def observed_loglik(params: ParameterVector, design: CrossoverDesign, data: TrialData) -> float:
    """Log-density of all observed responses under the marginal model."""
    params.check(design.n_fixed)
    return loglik_arrays(stack_subjects(data), params.beta, params.sigma_e2, params.sigma_s2)


# ---------------------------------------------------------------------------
# Vectorized closed forms over subjects
# ---------------------------------------------------------------------------


def posterior_weights(se2: float, ss2: float, pm: int) -> tuple[float, float]:
    """``(omega, phi)`` with ``b0 = omega * sum(resid)`` and ``Sigma0 = phi * I``."""
    omega = ss2 / (se2 + pm * ss2)
    return omega, se2 * omega


def observed_residuals(arr: SubjectArrays, beta) -> tuple[np.ndarray, np.ndarray]:
    """Mean ``X beta`` (n, pm) and residuals with zeros at missing entries."""
    mu = arr.X @ beta
    return mu, np.where(arr.mask, arr.Y - mu, 0.0)


def missing_given_observed(resid_obs, n_obs, se2: float, ss2: float):
    """Per-subject conditional law of the missing entries.

    Missing entries of subject ``k`` are ``N(mu + shift_k, se2*I + kappa_k*J)``.
    """
    denom = se2 + n_obs * ss2
    shift = ss2 * resid_obs.sum(axis=-1) / denom
    kappa = ss2 * se2 / denom
    return shift, kappa


def subject_loglik(resid_obs, n_obs, se2: float, ss2: float) -> np.ndarray:
    """Per-subject observed-data log-likelihood; zero for fully missing subjects."""
    denom = se2 + n_obs * ss2
    quad = ((resid_obs**2).sum(axis=-1) - ss2 * resid_obs.sum(axis=-1) ** 2 / denom) / se2
    logdet = np.where(n_obs > 0, (n_obs - 1) * np.log(se2) + np.log(denom), 0.0)
    return -0.5 * (n_obs * LOG_2PI + logdet + quad)


def loglik_arrays(arr: SubjectArrays, beta, se2: float, ss2: float) -> float:
    n_obs = arr.mask.sum(axis=1)
    if n_obs.sum() == 0:
        raise DataError("no observed entries")
    _, resid = observed_residuals(arr, beta)
    return float(subject_loglik(resid, n_obs, se2, ss2).sum())
