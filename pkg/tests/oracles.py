"""Reference implementations used only by the tests.

Each one takes a deliberately different route from the package code: dense
matrices, direct partitioned inverses, generic optimisers and arbitrary
precision arithmetic.
"""

import mpmath
import numpy as np
from scipy import optimize, stats

from crossover_mcem.design import build_design_matrices


def dense_sigma(se2, ss2, n_i, pm):
    """Z D Z' + se2 I built from an explicit Z."""
    Z = np.kron(np.eye(n_i), np.ones((pm, 1)))
    return ss2 * Z @ Z.T + se2 * np.eye(n_i * pm)


def partitioned_conditional(mu, Sigma, obs, y):
    """Gaussian conditioning with an explicit inverse of the observed block."""
    obs = np.asarray(obs, bool)
    mis = ~obs
    s11 = Sigma[np.ix_(mis, mis)]
    if not obs.any():
        return mu[mis], s11
    s12 = Sigma[np.ix_(mis, obs)]
    inv22 = np.linalg.inv(Sigma[np.ix_(obs, obs)])
    mean = mu[mis] + s12 @ inv22 @ (y[obs] - mu[obs])
    return mean, s11 - s12 @ inv22 @ s12.T


def woodbury_posterior(se2, ss2, Z, resid):
    """b | y via D - D Z' V^{-1} Z D, the form without the precision matrix."""
    n_i = Z.shape[1]
    D = ss2 * np.eye(n_i)
    V = Z @ D @ Z.T + se2 * np.eye(Z.shape[0])
    Vinv = np.linalg.inv(V)
    return D @ Z.T @ Vinv @ resid, D - D @ Z.T @ Vinv @ Z @ D


def dense_loglik(beta, se2, ss2, data):
    """Observed-data log-density summed per sequence with scipy's MVN."""
    d = data.design
    dm = build_design_matrices(d)
    total = 0.0
    for i in range(d.s):
        k = data.mask[i]
        if not k.any():
            continue
        mu = dm.X[i] @ beta
        S = dense_sigma(se2, ss2, d.n_subjects[i], d.pm)
        total += stats.multivariate_normal(mu[k], S[np.ix_(k, k)]).logpdf(data.values[i][k])
    return float(total)


def numeric_ml(data, start):
    """Maximise :func:`dense_loglik` with a generic quasi-Newton optimiser."""
    q = data.design.n_fixed

    def neg(theta):
        return -dense_loglik(theta[:q], np.exp(theta[q]), np.exp(theta[q + 1]), data)

    x0 = np.concatenate([start[:q], np.log(start[q:])])
    res = optimize.minimize(neg, x0, method="BFGS", options={"gtol": 1e-8})
    res = optimize.minimize(neg, res.x, method="Nelder-Mead",
                            options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 20000})
    out = res.x.copy()
    out[q:] = np.exp(out[q:])
    return out, -res.fun


def chi2_cdf_mp(x, df, dps=40):
    with mpmath.workdps(dps):
        return float(mpmath.gammainc(mpmath.mpf(df) / 2, 0, mpmath.mpf(x) / 2, regularized=True))


def chi2_quantile_mp(prob, df, dps=40):
    with mpmath.workdps(dps):
        f = lambda x: mpmath.gammainc(mpmath.mpf(df) / 2, 0, x / 2, regularized=True) - prob
        return float(mpmath.findroot(f, (mpmath.mpf("1e-6"), mpmath.mpf(200)), solver="bisect"))
