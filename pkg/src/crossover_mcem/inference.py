"""Standard errors by multiple imputation, MCEM likelihood-ratio tests and fit summaries."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.special
from scipy.optimize import minimize_scalar

from .conditional import LOG_2PI, posterior_weights
from .data import TrialData
from .design import CrossoverDesign
from .exceptions import FitError
from .mcem import FitResult, McemConfig, Model, Restriction, restricted_fit

LRT_NEG_TOL = 0.1
MAX_LEVEL = 1 - 1e-12


def chi2_cdf(x: float, df: int) -> float:
    """Lower regularized incomplete gamma ``P(df/2, x/2)``."""
    if x <= 0:
        return 0.0
    return float(scipy.special.gammainc(df / 2, x / 2))


def chi2_sf(x: float, df: int) -> float:
    if x <= 0:
        return 1.0
    return float(scipy.special.gammaincc(df / 2, x / 2))


def chi2_quantile(prob: float, df: int) -> float:
    return float(2 * scipy.special.gammaincinv(df / 2, prob))


def wald_ci(estimate, se, level: float = 0.95):
    """Normal-theory interval ``estimate -/+ z * se``."""
    se = np.asarray(se, dtype=float)
    if np.any(se <= 0):
        raise ValueError("standard errors must be positive")
    level = min(level, MAX_LEVEL)
    z = scipy.special.ndtri(0.5 + level / 2)
    return np.asarray(estimate) - z * se, np.asarray(estimate) + z * se


# ---------------------------------------------------------------------------
# Complete-data maximum likelihood
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CompleteFit:
    estimates: np.ndarray  # (B, q + 2): beta, sigma_e2, sigma_s2
    variances: np.ndarray  # (B, q + 2): diagonal of the inverse information
    loglik: np.ndarray  # (B,)


def complete_data_ml(Y: np.ndarray, X: np.ndarray) -> CompleteFit:
    """ML fits of complete datasets ``Y`` (B, n, pm) sharing the design ``X`` (n, pm, q).

    Each subject's covariance has eigenvalue ``l1 = se2`` on contrasts and
    ``l2 = se2 + pm*ss2`` on its mean.  For a fixed ratio ``rho = l1/l2`` beta
    is weighted least squares and ``l1`` is explicit, leaving a
    one-dimensional profile over ``rho`` in (0, 1].
    """
    if Y.ndim == 2:
        Y = Y[None]
    B, n, pm = Y.shape
    xbar = X.mean(axis=1)
    Xw = X - xbar[:, None, :]
    Aw = np.einsum("kpq,kpr->qr", Xw, Xw)
    Ab = pm * xbar.T @ xbar
    ybar = Y.mean(axis=2)
    Yw = Y - ybar[..., None]
    cw = np.einsum("kpq,bkp->bq", Xw, Yw)
    cb = pm * ybar @ xbar
    yyw = (Yw**2).sum(axis=(1, 2))
    yyb = pm * (ybar**2).sum(axis=1)
    N = n * pm
    q = X.shape[2]

    est = np.empty((B, q + 2))
    var = np.empty((B, q + 2))
    ll = np.empty(B)
    for b in range(B):

        def parts(rho):
            beta = np.linalg.solve(Aw + rho * Ab, cw[b] + rho * cb[b])
            ssw = yyw[b] - 2 * beta @ cw[b] + beta @ Aw @ beta
            ssb = yyb[b] - 2 * beta @ cb[b] + beta @ Ab @ beta
            return beta, max(ssw, 0.0), max(ssb, 0.0)

        def negprof(log_rho):
            rho = np.exp(log_rho)
            _, ssw, ssb = parts(rho)
            return 0.5 * (N * np.log((ssw + rho * ssb) / N) - n * log_rho)

        res = minimize_scalar(negprof, bounds=(np.log(1e-12), 0.0), method="bounded",
                              options={"xatol": 1e-11})
        log_rho = res.x if negprof(res.x) < negprof(0.0) else 0.0
        rho = np.exp(log_rho)
        beta, ssw, ssb = parts(rho)
        l1 = (ssw + rho * ssb) / N
        l2 = l1 / rho
        cov_beta = np.linalg.inv(Aw / l1 + Ab / l2)
        info = 0.5 * n * np.array(
            [[(pm - 1) / l1**2 + 1 / l2**2, pm / l2**2], [pm / l2**2, pm**2 / l2**2]]
        )
        est[b] = np.concatenate([beta, [l1, (l2 - l1) / pm]])
        var[b] = np.concatenate([np.diag(cov_beta), np.diag(np.linalg.inv(info))])
        ll[b] = -0.5 * (N * LOG_2PI + N * np.log(l1) - n * log_rho + N)
    return CompleteFit(est, var, ll)


# ---------------------------------------------------------------------------
# Multiple imputation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MiConfig:
    b: int = 100
    burn_in: int = 1000
    m0: int = 5
    seed: int = 0

    def __post_init__(self):
        if min(self.b, self.burn_in, self.m0) < 1:
            raise ValueError("b, burn_in and m0 must all be >= 1")


@dataclass(frozen=True)
class MiResult:
    se: np.ndarray  # (q_full + 2,)
    total: np.ndarray
    within: np.ndarray
    between: np.ndarray
    names: tuple[str, ...]


def mi_total_variance(within, between, m0: int) -> np.ndarray:
    """Mean within-imputation variance plus ``(1 + 1/m0)`` times the between variance."""
    return np.mean(np.atleast_2d(within), axis=0) + (1 + 1 / m0) * np.asarray(between)


def gibbs_imputations(model: Model, params, mi: MiConfig, rng: np.random.Generator) -> np.ndarray:
    """Alternate ``b | y`` and ``y_mis | b`` draws; return ``mi.b`` completed datasets."""
    arr = model.arr
    se2, ss2 = params.sigma_e2, params.sigma_s2
    omega, phi = posterior_weights(se2, ss2, arr.pm)
    mu = arr.X @ params.beta
    miss, rows = model.miss, model.miss_rows
    sd_e, sd_b = np.sqrt(se2), np.sqrt(phi)
    Y = arr.Y.copy()
    # Step (i): starting values from the marginal laws.
    b = np.sqrt(ss2) * rng.standard_normal(arr.n)
    s0 = np.sqrt(ss2) * rng.standard_normal(arr.n)
    Y[miss] = mu[miss] + s0[rows] + sd_e * rng.standard_normal(rows.size)
    out = np.empty((mi.b,) + Y.shape)
    for sweep in range(mi.burn_in + mi.b):
        b = omega * (Y - mu).sum(axis=1) + sd_b * rng.standard_normal(arr.n)
        Y[miss] = mu[miss] + b[rows] + sd_e * rng.standard_normal(rows.size)
        if sweep >= mi.burn_in:
            out[sweep - mi.burn_in] = Y
    return out


def mi_standard_errors(
    fit: FitResult, design: CrossoverDesign, data: TrialData, mi: MiConfig = MiConfig()
) -> MiResult:
    """Standard errors of ``(beta, sigma_e2, sigma_s2)`` by multiple imputation.

    Without missing entries every imputation equals the data, so the result
    is the complete-data ML standard error and no sampling is done.
    """
    if not fit.converged:
        raise FitError("refusing to compute imputation SEs for a non-converged fit")
    basis = fit.basis
    model = Model(data, None if fit.restriction.is_empty else basis)
    X = model.arr.X
    if model.n_miss == 0:
        cf = complete_data_ml(model.arr.Y[None], X)
        within, between = cf.variances, np.zeros(cf.variances.shape[1])
        m0 = mi.m0
    else:
        params = fit.model_params()
        ests, wvars = [], []
        for r in range(mi.m0):
            rng = np.random.default_rng([mi.seed, r])
            cf = complete_data_ml(gibbs_imputations(model, params, mi, rng), X)
            ests.append(cf.estimates)
            wvars.append(cf.variances)
        est = np.vstack(ests)
        within = np.vstack(wvars)
        between = est.var(axis=0, ddof=1)
        m0 = mi.m0
    total = mi_total_variance(within, between, m0)
    q = basis.shape[1]
    # Rows of the basis have at most one non-zero, so variances map directly.
    to_full = np.zeros((basis.shape[0] + 2, q + 2))
    to_full[:-2, :q] = basis**2
    to_full[-2:, -2:] = np.eye(2)
    total_full = to_full @ total
    names = fit.column_names + ("sigma_e2", "sigma_s2")
    return MiResult(
        np.sqrt(total_full), total_full, to_full @ np.mean(within, axis=0), to_full @ between, names
    )


# ---------------------------------------------------------------------------
# Likelihood-ratio tests
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TestResult:
    statistic: float
    df: int
    p_value: float
    full_loglik: float
    reduced_loglik: float
    stat: str = "loglik"

    __test__ = False

    def rejects(self, alpha: float = 0.05) -> bool:
        return self.statistic > chi2_quantile(1 - alpha, self.df)


def lrt(full: FitResult, reduced: FitResult, df: int | None = None, stat: str = "loglik") -> TestResult:
    """MCEM likelihood-ratio test of ``reduced`` nested in ``full``.

    ``stat="loglik"`` uses observed-data log-likelihoods at both estimates;
    ``stat="q"`` uses twice the difference of the final Q-function values.
    """
    if df is None:
        df = full.n_params - reduced.n_params
    if df < 1:
        raise FitError("reduced model must have fewer parameters than the full model")
    if stat == "loglik":
        lam = 2 * (full.loglik - reduced.loglik)
    elif stat == "q":
        lam = 2 * (full.q_value - reduced.q_value)
    else:
        raise ValueError(f"unknown statistic {stat!r}")
    if lam < -LRT_NEG_TOL:
        raise FitError(f"LRT statistic {lam:.4g} < 0: fits are not nested or did not converge")
    return TestResult(float(lam), int(df), chi2_sf(lam, df), full.loglik, reduced.loglik, stat)


def coefficient_pvalues(
    fit: FitResult,
    design: CrossoverDesign,
    data: TrialData,
    config: McemConfig,
    se=None,
    stat: str = "loglik",
) -> dict[str, float]:
    """Single-coefficient p-values: drop-one-column LRTs, Wald for the intercept."""
    names = design.column_names()
    out = {}
    if se is not None and se[0] > 0:
        out[names[0]] = float(2 * scipy.special.ndtr(-abs(fit.params.beta[0]) / se[0]))
    else:
        out[names[0]] = float("nan")
    for name in names[1:]:
        reduced = restricted_fit(design, data, config, Restriction(drop=(name,)))
        out[name] = lrt(fit, reduced, df=1, stat=stat).p_value
    return out


@dataclass(frozen=True)
class FitReport:
    loglik: float
    n_params: int
    n_obs: int
    aic: float
    bic: float
    rmse: float


def fit_report(fit: FitResult, design: CrossoverDesign, data: TrialData) -> FitReport:
    """AIC, BIC and RMSE of the marginal residuals over observed entries."""
    model = Model(data)
    resid = (model.arr.Y - model.arr.X @ fit.params.beta)[model.arr.mask]
    k, n_obs = fit.n_params, resid.size
    return FitReport(
        fit.loglik,
        k,
        n_obs,
        -2 * fit.loglik + 2 * k,
        -2 * fit.loglik + k * np.log(n_obs),
        float(np.sqrt(np.mean(resid**2))),
    )
