"""Monte Carlo EM for the random-intercept crossover model with MAR responses.

Each E-step draws the missing responses from their exact conditional law,
integrates the random effects analytically, and keeps only the sufficient
statistics of the M-step:

* ``U``: per-subject average of the completed ``y - Z b0``,
* ``S``: per-subject Monte Carlo scatter of ``y - Z b0`` around ``U``,
* ``B2``: per-subject average of ``b0**2``,

together with ``phi`` (the posterior variance of a random effect at the
current parameters).  Because ``mean_k ||w_k - X beta||^2 == ||U - X beta||^2 + S``
the Q-function is available for any candidate parameter.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .conditional import (
    LOG_2PI,
    loglik_arrays,
    missing_given_observed,
    observed_residuals,
    posterior_weights,
)
from .data import TrialData, stack_subjects
from .design import CrossoverDesign, ParameterVector, _rank
from .exceptions import DesignError, FitError

VAR_FLOOR = 1e-8
INIT_FLOOR = 1e-6
CHUNK_ELEMENTS = 1_000_000


@dataclass(frozen=True)
class McemConfig:
    """MCEM tuning.

    ``c_schedule`` lists ``(first_iteration, samples)`` pairs: the default uses
    100 samples for iterations 1-20 and 1000 afterwards.  Convergence is only
    declared once the last schedule entry is active.
    """

    c_schedule: tuple[tuple[int, int], ...] = ((1, 100), (21, 1000))
    c_polish: int = 5000
    max_iter: int = 200
    tol: float = 1e-4
    tol_window: int = 3
    mc_z: float = 3.0
    seed: int = 0

    def __post_init__(self):
        sched = tuple((int(a), int(b)) for a, b in self.c_schedule)
        object.__setattr__(self, "c_schedule", sched)
        if not sched or sched[0][0] != 1:
            raise ValueError("c_schedule must start at iteration 1")
        if any(b < 1 for _, b in sched) or self.c_polish < 0:
            raise ValueError("Monte Carlo sample counts must be positive")
        if self.max_iter < 1 or self.tol_window < 1 or not self.tol > 0:
            raise ValueError("max_iter, tol_window must be >= 1 and tol > 0")

    @classmethod
    def fixed(cls, c: int, **kw) -> "McemConfig":
        kw.setdefault("c_polish", 0)
        return cls(c_schedule=((1, c),), **kw)

    def c_at(self, iteration: int) -> int:
        c = self.c_schedule[0][1]
        for start, count in self.c_schedule:
            if iteration >= start:
                c = count
        return c

    @property
    def final_phase_start(self) -> int:
        return self.c_schedule[-1][0]


@dataclass(frozen=True)
class Restriction:
    """Linear restriction on beta: dropped columns and groups of equal columns."""

    drop: tuple[str, ...] = ()
    equal: tuple[tuple[str, ...], ...] = ()

    @property
    def is_empty(self) -> bool:
        return not self.drop and not self.equal

    def basis(self, names) -> np.ndarray:
        """Matrix ``N`` with ``beta = N @ theta`` under the restriction."""
        names = list(names)
        unknown = (set(self.drop) | {c for g in self.equal for c in g}) - set(names)
        if unknown:
            raise DesignError(f"unknown coefficients in restriction: {sorted(unknown)}")
        if names[0] in self.drop or any(names[0] in g for g in self.equal):
            raise DesignError("a restriction may not remove the intercept")
        cols, used = [], set(self.drop)
        for group in self.equal:
            if used & set(group):
                raise DesignError(f"coefficient listed twice in restriction: {group}")
            used |= set(group)
        for j, name in enumerate(names):
            if name in self.drop:
                continue
            group = next((g for g in self.equal if name in g), None)
            if group is not None and name != group[0]:
                continue
            col = np.zeros(len(names))
            for member in group or (name,):
                col[names.index(member)] = 1.0
            cols.append(col)
        return np.column_stack(cols)


def hypothesis_restriction(design: CrossoverDesign, hypothesis) -> Restriction:
    """Restriction for a named null hypothesis.

    ``"treatment"``, ``"period"`` and ``"response"`` set the whole block to
    zero; ``("pair", a, b)`` equates the effects of response variates ``a`` and
    ``b`` (1-based).
    """
    names = design.column_names()
    if isinstance(hypothesis, str) and hypothesis in ("treatment", "period", "response"):
        cols = names[design.blocks()[hypothesis]]
        if not cols:
            raise DesignError(f"design has no {hypothesis} effects to test")
        return Restriction(drop=tuple(cols))
    if isinstance(hypothesis, (tuple, list)) and len(hypothesis) == 3 and hypothesis[0] == "pair":
        a, b = sorted(int(x) for x in hypothesis[1:])
        m = design.m
        if not 1 <= a < b <= m:
            raise DesignError(f"pair ({a}, {b}) is not a pair of distinct variates in 1..{m}")
        if b == m:
            return Restriction(drop=(f"response_{a}",))
        return Restriction(equal=((f"response_{a}", f"response_{b}"),))
    raise DesignError(f"unknown hypothesis {hypothesis!r}")


@dataclass(frozen=True)
class EStepSummary:
    U: np.ndarray  # (n, pm)
    S: np.ndarray  # (n,)
    B2: np.ndarray  # (n,)
    phi: float
    seq: np.ndarray
    X: np.ndarray  # (n, pm, q)
    c: int
    mcse: np.ndarray  # (q + 2,) Monte Carlo s.e. of the M-step output

    @property
    def n_seq(self) -> int:
        return int(self.seq.max()) + 1

    def xtu(self, i: int) -> np.ndarray:
        """``X_i' avg_k(y_i - Z_i b0_i)`` for sequence ``i``."""
        sel = self.seq == i
        return np.einsum("kpq,kp->q", self.X[sel], self.U[sel])

    def _q_subjects(self, params: ParameterVector) -> np.ndarray:
        se2, ss2 = params.sigma_e2, params.sigma_s2
        if ss2 <= 0:
            return np.full(self.seq.shape, -np.inf)
        pm = self.U.shape[1]
        rss = ((self.U - self.X @ params.beta) ** 2).sum(axis=1) + self.S
        q1 = -0.5 * pm * (LOG_2PI + np.log(se2)) - (pm * self.phi + rss) / (2 * se2)
        q2 = -0.5 * (LOG_2PI + np.log(ss2)) - (self.phi + self.B2) / (2 * ss2)
        return q1 + q2

    def q_sequence(self, params: ParameterVector, i: int) -> float:
        return float(self._q_subjects(params)[self.seq == i].sum())

    def q_value(self, params: ParameterVector) -> float:
        return float(self._q_subjects(params).sum())


class Model:
    """Stacked data plus cached design quantities for one (possibly reduced) fit."""

    def __init__(self, data: TrialData, basis: np.ndarray | None = None):
        self.data = data
        self.arr = arr = stack_subjects(data, basis)
        X = arr.X
        self.XtX = np.einsum("kpq,kpr->qr", X, X)
        if _rank(X.reshape(-1, arr.q)) < arr.q:
            raise FitError("design matrix is rank deficient")
        self.XtX_inv = np.linalg.inv(self.XtX)
        self.xsum = X.sum(axis=1)
        self.n_obs = arr.mask.sum(axis=1)
        self.miss = ~arr.mask
        self.miss_rows, _ = np.nonzero(self.miss)
        self.Xm = X[self.miss]
        self.miss_subjects, self.seg_starts = np.unique(self.miss_rows, return_index=True)

    @property
    def n_miss(self) -> int:
        return self.miss_rows.size

    def segment_sum(self, a: np.ndarray) -> np.ndarray:
        out = np.zeros((a.shape[0], self.arr.n))
        if a.shape[1]:
            out[:, self.miss_subjects] = np.add.reduceat(a, self.seg_starts, axis=1)
        return out

    def loglik(self, params: ParameterVector) -> float:
        return loglik_arrays(self.arr, params.beta, params.sigma_e2, params.sigma_s2)


def _estep(model: Model, params: ParameterVector, c: int, rng: np.random.Generator) -> EStepSummary:
    arr = model.arr
    n, pm, q = arr.n, arr.pm, arr.q
    se2, ss2 = params.sigma_e2, params.sigma_s2
    omega, phi = posterior_weights(se2, ss2, pm)
    mu, r_obs = observed_residuals(arr, params.beta)
    shift, kappa = missing_given_observed(r_obs, model.n_obs, se2, ss2)
    miss = model.miss
    # Reference completion: missing entries at their conditional mean.
    R0 = r_obs.copy()
    R0[miss] = shift[model.miss_rows]
    b0_ref = omega * R0.sum(axis=1)
    V_ref = R0 - b0_ref[:, None]
    W_ref = V_ref + mu
    if model.n_miss == 0:
        return EStepSummary(W_ref, np.zeros(n), b0_ref**2, phi, arr.seq, arr.X, 1, np.zeros(q + 2))

    sk = np.sqrt(kappa)[model.miss_rows]
    sd = np.sqrt(se2)
    v_m = V_ref[miss]
    vsum = V_ref.sum(axis=1)
    vv = float((V_ref**2).sum())
    sum_e = np.zeros(model.n_miss)
    sum_t = np.zeros(n)
    sum_t2 = np.zeros(n)
    sum_sq = np.zeros(n)
    mom = np.zeros((2, q + 2))
    chunk = max(1, CHUNK_ELEMENTS // (model.n_miss + n))
    done = 0
    while done < c:
        k = min(chunk, c - done)
        z0 = rng.standard_normal((k, n))
        z = rng.standard_normal((k, model.n_miss))
        e = z0[:, model.miss_rows] * sk + sd * z
        t = model.segment_sum(e)
        sq = model.segment_sum(e**2) + (pm * omega**2 - 2 * omega) * t**2
        sum_e += e.sum(axis=0)
        sum_t += t.sum(axis=0)
        sum_t2 += (t**2).sum(axis=0)
        sum_sq += sq.sum(axis=0)
        # Per-sample M-step outputs, for the Monte Carlo error of the update.
        db = (e @ model.Xm - omega * (t @ model.xsum)) @ model.XtX_inv
        h = (vv + 2 * (e @ v_m - omega * (t @ vsum)) + sq.sum(axis=1)) / (n * pm)
        g = ((b0_ref + omega * t) ** 2).sum(axis=1) / n
        per = np.column_stack([db, h, g])
        mom[0] += per.sum(axis=0)
        mom[1] += (per**2).sum(axis=0)
        done += k
    mean_t = sum_t / c
    D = np.broadcast_to(-omega * mean_t[:, None], (n, pm)).copy()
    D[miss] += sum_e / c
    U = W_ref + D
    S = np.maximum(sum_sq / c - (D**2).sum(axis=1), 0.0)
    B2 = b0_ref**2 + 2 * omega * b0_ref * mean_t + omega**2 * sum_t2 / c
    var = np.maximum(mom[1] / c - (mom[0] / c) ** 2, 0.0)
    return EStepSummary(U, S, B2, phi, arr.seq, arr.X, c, np.sqrt(var / c))


def _mstep(summary: EStepSummary) -> ParameterVector:
    X, U = summary.X, summary.U
    n, pm = U.shape
    XtX = np.einsum("kpq,kpr->qr", X, X)
    beta = np.linalg.solve(XtX, np.einsum("kpq,kp->q", X, U))
    resid = U - X @ beta
    se2 = ((resid**2).sum() + summary.S.sum() + n * pm * summary.phi) / (n * pm)
    ss2 = (n * summary.phi + summary.B2.sum()) / n
    return ParameterVector(beta, max(se2, VAR_FLOOR), max(ss2, VAR_FLOOR))


def _design_basis(design: CrossoverDesign, restriction: Restriction | None):
    if restriction is None or restriction.is_empty:
        return None
    return restriction.basis(design.column_names())


def estep(
    params: ParameterVector,
    design: CrossoverDesign,
    data: TrialData,
    c: int,
    rng: np.random.Generator,
    restriction: Restriction | None = None,
) -> EStepSummary:
    """Monte Carlo E-step with ``c`` draws per missing entry (``params`` in model coordinates)."""
    return _estep(Model(data, _design_basis(design, restriction)), params, c, rng)


def mstep(summary: EStepSummary) -> ParameterVector:
    """Closed-form maximiser of the Monte Carlo Q-function."""
    return _mstep(summary)


def _anova_init(model: Model) -> ParameterVector:
    arr = model.arr
    Xo = arr.X[arr.mask]
    yo = arr.Y[arr.mask]
    if Xo.shape[0] < arr.q or _rank(Xo) < arr.q:
        raise FitError(
            "observed design is rank deficient; more observed data or a simpler model is needed"
        )
    beta = np.linalg.lstsq(Xo, yo, rcond=None)[0]
    r = np.where(arr.mask, arr.Y - arr.X @ beta, 0.0)
    l = model.n_obs
    has = l > 0
    g, N = int(has.sum()), int(l.sum())
    means = r[has].sum(axis=1) / l[has]
    ssw = float((np.where(arr.mask[has], r[has] - means[:, None], 0.0) ** 2).sum())
    ssb = float((l[has] * (means - r[has].sum() / N) ** 2).sum())
    msw = ssw / (N - g) if N > g else 0.0
    msb = ssb / (g - 1) if g > 1 else 0.0
    n_h = g / np.sum(1.0 / l[has])
    return ParameterVector(beta, max(msw, INIT_FLOOR), max((msb - msw) / n_h, INIT_FLOOR))


def init_params(
    design: CrossoverDesign, data: TrialData, restriction: Restriction | None = None
) -> ParameterVector:
    """OLS fixed effects and one-way ANOVA variance components from observed rows."""
    return _anova_init(Model(data, _design_basis(design, restriction)))


@dataclass(frozen=True)
class FitResult:
    params: ParameterVector  # beta in full (unrestricted) coordinates
    column_names: tuple[str, ...]
    converged: bool
    n_iter: int
    loglik: float
    q_value: float
    loglik_trace: tuple[float, ...]
    param_trace: np.ndarray
    c_trace: tuple[int, ...]
    n_obs: int
    basis: np.ndarray
    restriction: Restriction = field(default_factory=Restriction)
    config: McemConfig = field(default_factory=McemConfig)

    @property
    def n_params(self) -> int:
        return self.basis.shape[1] + 2

    @property
    def theta(self) -> np.ndarray:
        """Free fixed effects in model coordinates."""
        return np.linalg.lstsq(self.basis, self.params.beta, rcond=None)[0]

    def model_params(self) -> ParameterVector:
        return ParameterVector(self.theta, self.params.sigma_e2, self.params.sigma_s2)


def _change_ok(old: np.ndarray, new: np.ndarray, noise: np.ndarray, cfg: McemConfig) -> bool:
    q = old.size - 2
    scale = old[-2] + old[-1]
    floor = np.concatenate([np.full(q, 1e-3 * np.sqrt(scale)), np.full(2, 1e-3 * scale)])
    delta = np.abs(new - old)
    return bool(np.all((delta <= cfg.tol * (np.abs(old) + floor)) | (delta <= cfg.mc_z * noise)))


def mcem_fit(
    design: CrossoverDesign,
    data: TrialData,
    config: McemConfig = McemConfig(),
    restriction: Restriction | None = None,
    init: ParameterVector | None = None,
) -> FitResult:
    """Fit by MCEM from ANOVA starting values.

    Stops when, for ``tol_window`` consecutive iterations, every parameter
    changes by less than ``tol`` relative to its size or by less than
    ``mc_z`` Monte Carlo standard errors of the change.  A converged fit is
    finished with one E/M step at ``c_polish`` samples.  Without convergence
    the iterate with the highest observed log-likelihood is returned.
    """
    restriction = restriction or Restriction()
    basis = _design_basis(design, restriction)
    model = Model(data, basis)
    basis = np.eye(design.n_fixed) if basis is None else basis
    params = init if init is not None else _anova_init(model)
    params.check(model.arr.q)
    rng = np.random.default_rng(config.seed)
    deterministic = model.n_miss == 0

    ll_trace = [model.loglik(params)]
    p_trace = [params.as_array()]
    c_trace = []
    best_ll, best = ll_trace[0], params
    prev_noise = np.zeros(model.arr.q + 2)
    stable, converged, summary = 0, False, None
    it = 0
    for it in range(1, config.max_iter + 1):
        c = 1 if deterministic else config.c_at(it)
        summary = _estep(model, params, c, rng)
        new = _mstep(summary)
        ll = model.loglik(new)
        ll_trace.append(ll)
        p_trace.append(new.as_array())
        c_trace.append(c)
        if ll > best_ll:
            best_ll, best = ll, new
        noise = np.sqrt(summary.mcse**2 + prev_noise**2)
        final_phase = deterministic or it >= config.final_phase_start
        ok = final_phase and _change_ok(params.as_array(), new.as_array(), noise, config)
        stable = stable + 1 if ok else 0
        params, prev_noise = new, summary.mcse
        if stable >= config.tol_window:
            converged = True
            break

    if converged:
        if config.c_polish > 0 and not deterministic:
            summary = _estep(model, params, config.c_polish, rng)
            params = _mstep(summary)
            ll_trace.append(model.loglik(params))
            p_trace.append(params.as_array())
            c_trace.append(config.c_polish)
        loglik = ll_trace[-1]
    else:
        params, loglik = best, best_ll
    q_value = summary.q_value(params) if summary is not None else float("nan")
    full = ParameterVector(basis @ params.beta, params.sigma_e2, params.sigma_s2)
    return FitResult(
        params=full,
        column_names=design.column_names(),
        converged=converged,
        n_iter=it,
        loglik=float(loglik),
        q_value=q_value,
        loglik_trace=tuple(float(x) for x in ll_trace),
        param_trace=np.array(p_trace),
        c_trace=tuple(c_trace),
        n_obs=int(model.n_obs.sum()),
        basis=basis,
        restriction=restriction,
        config=config,
    )


def restricted_fit(
    design: CrossoverDesign,
    data: TrialData,
    config: McemConfig,
    restriction: Restriction,
) -> FitResult:
    """Refit under a linear restriction on beta (the null model of a test)."""
    return mcem_fit(design, data, config, restriction)


def with_seed(config: McemConfig, seed: int) -> McemConfig:
    return replace(config, seed=seed)
