"""Data generation, MAR masking, replication studies and power curves."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from .data import TrialData, stack_subjects
from .design import CrossoverDesign, ParameterVector, _rank, build_design_matrices
from .exceptions import DataError, FitError
from .inference import MiConfig, lrt, mi_standard_errors, wald_ci
from .mcem import McemConfig, hypothesis_restriction, mcem_fit, restricted_fit

log = logging.getLogger(__name__)

MISS_MODES = ("element", "period-block")
MAX_REDRAWS = 50

# Two sequences AB/BA, two periods, four response variates, 50 subjects each.
SIM_DESIGN = CrossoverDesign(((1, 2), (2, 1)), 4, (50, 50))
SIM_TRUTH = ParameterVector([4.50, 0.20, 1.06, 0.46, 1.09, 0.50], 1.44, 0.49)


@dataclass(frozen=True)
class SimScenario:
    design: CrossoverDesign
    true_params: ParameterVector
    miss_prob: float = 0.15
    miss_mode: str = "element"
    reps: int = 100
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.miss_prob < 1:
            raise ValueError("miss_prob must lie in [0, 1)")
        if self.miss_mode not in MISS_MODES:
            raise ValueError(f"miss_mode must be one of {MISS_MODES}")
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        self.true_params.check(self.design.n_fixed)


def study_scenario(miss_prob=0.15, reps=100, seed=0, miss_mode="element") -> SimScenario:
    return SimScenario(SIM_DESIGN, SIM_TRUTH, miss_prob, miss_mode, reps, seed)


def _rng(seed: int, rep: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, rep, stream])


def _child_seed(seed: int, rep: int, stream: int) -> int:
    return int(np.random.SeedSequence([seed, rep, stream]).generate_state(1)[0])


def generate_dataset(scenario: SimScenario, rep_index: int) -> TrialData:
    """Complete responses ``X beta + Z b + e``; deterministic in ``(seed, rep_index)``."""
    d, truth = scenario.design, scenario.true_params
    dm = build_design_matrices(d)
    rng = _rng(scenario.seed, rep_index, 0)
    values = []
    for i in range(d.s):
        b = np.sqrt(truth.sigma_s2) * rng.standard_normal(d.n_subjects[i])
        e = np.sqrt(truth.sigma_e2) * rng.standard_normal(dm.X[i].shape[0])
        values.append(dm.X[i] @ truth.beta + dm.Z[i] @ b + e)
    masks = tuple(np.ones(v.size, bool) for v in values)
    return TrialData(d, tuple(values), masks)


def draw_mask(data: TrialData, miss_prob: float, miss_mode: str, rng: np.random.Generator):
    """Bernoulli MAR mask on top of ``data``'s mask; returns ``(data, redraws)``.

    Masks leaving the observed design rank deficient are redrawn; more than
    ``MAX_REDRAWS`` consecutive rejections raise.
    """
    if not 0 <= miss_prob < 1:
        raise ValueError("miss_prob must lie in [0, 1)")
    if miss_mode not in MISS_MODES:
        raise ValueError(f"miss_mode must be one of {MISS_MODES}")
    d = data.design
    if miss_prob == 0:
        return data, 0
    for redraws in range(MAX_REDRAWS):
        masks = []
        for i in range(d.s):
            if miss_mode == "element":
                keep = rng.random(d.pm * d.n_subjects[i]) >= miss_prob
            else:
                cells = rng.random((d.n_subjects[i], d.p)) >= miss_prob
                keep = np.repeat(cells, d.m, axis=1).ravel()
            masks.append(keep)
        out = data.with_mask(masks)
        arr = stack_subjects(out)
        if _rank(arr.X[arr.mask]) == arr.q:
            return out, redraws
    raise DataError(f"{MAX_REDRAWS} consecutive masks left the observed design rank deficient")


def apply_missingness(data: TrialData, miss_prob: float, miss_mode: str, rng) -> TrialData:
    return draw_mask(data, miss_prob, miss_mode, rng)[0]


@dataclass
class RepSummary:
    names: tuple[str, ...]
    truth: np.ndarray
    estimates: np.ndarray  # (converged reps, k)
    ses: np.ndarray
    covered: np.ndarray
    n_reps: int
    redraws: int = 0
    failures: list = field(default_factory=list)

    @property
    def n_converged(self) -> int:
        return self.estimates.shape[0]

    @property
    def convergence_rate(self) -> float:
        return self.n_converged / self.n_reps

    @property
    def mean_mle(self) -> np.ndarray:
        return self.estimates.mean(axis=0)

    @property
    def mean_se(self) -> np.ndarray:
        return self.ses.mean(axis=0)

    @property
    def bias(self) -> np.ndarray:
        return np.abs(self.mean_mle - self.truth)

    @property
    def mse(self) -> np.ndarray:
        return ((self.estimates - self.truth) ** 2).mean(axis=0)

    @property
    def ecp(self) -> np.ndarray:
        return self.covered.mean(axis=0)

    def rows(self):
        for j, name in enumerate(self.names):
            yield {
                "parameter": name,
                "true": self.truth[j],
                "mle": self.mean_mle[j],
                "se": self.mean_se[j],
                "bias": self.bias[j],
                "mse": self.mse[j],
                "ecp": self.ecp[j],
            }


def run_replications(
    scenario: SimScenario,
    mcem_config: McemConfig = McemConfig(),
    mi_config: MiConfig = MiConfig(),
    level: float = 0.95,
    progress=None,
) -> RepSummary:
    """Generate, mask, fit and impute ``scenario.reps`` datasets; aggregate bias, MSE and coverage."""
    d = scenario.design
    truth = scenario.true_params.as_array()
    names = d.column_names() + ("sigma_e2", "sigma_s2")
    est, ses, cov = [], [], []
    failures, redraws = [], 0
    for r in range(scenario.reps):
        data = generate_dataset(scenario, r)
        data, k = draw_mask(data, scenario.miss_prob, scenario.miss_mode, _rng(scenario.seed, r, 1))
        redraws += k
        try:
            fit = mcem_fit(d, data, replace(mcem_config, seed=_child_seed(scenario.seed, r, 2)))
            if not fit.converged:
                raise FitError("MCEM did not converge")
            mi = mi_standard_errors(fit, d, data, replace(mi_config, seed=_child_seed(scenario.seed, r, 3)))
        except FitError as exc:
            failures.append((r, str(exc)))
            log.warning("replication %d excluded: %s", r, exc)
            continue
        theta = fit.params.as_array()
        lo, hi = wald_ci(theta, mi.se, level)
        est.append(theta)
        ses.append(mi.se)
        cov.append((lo <= truth) & (truth <= hi))
        if progress is not None:
            progress(r)
    if not est:
        raise FitError("no replication converged")
    return RepSummary(names, truth, np.array(est), np.array(ses), np.array(cov),
                      scenario.reps, redraws, failures)


@dataclass(frozen=True)
class NormalityRecord:
    names: tuple[str, ...]
    standardized: np.ndarray  # (reps, k)
    ks: np.ndarray  # (k,) Kolmogorov-Smirnov distance to N(0, 1)


def normality_diagnostic(estimates, names=None) -> NormalityRecord:
    """Standardize each parameter's replicate estimates and measure the KS distance to N(0,1)."""
    est = np.asarray(estimates, dtype=float)
    if est.ndim == 1:
        est = est[:, None]
    if est.shape[0] < 30:
        raise ValueError("normality diagnostic needs at least 30 replications")
    sd = est.std(axis=0, ddof=1)
    if np.any(sd == 0):
        raise ValueError("constant estimates have no standardized form")
    z = (est - est.mean(axis=0)) / sd
    ks = np.array([stats.kstest(z[:, j], "norm").statistic for j in range(z.shape[1])])
    names = tuple(names) if names is not None else tuple(f"theta_{j}" for j in range(z.shape[1]))
    return NormalityRecord(names, z, ks)


def with_effect(truth: ParameterVector, design: CrossoverDesign, hypothesis, effect) -> ParameterVector:
    """True parameters with the tested effect set to ``effect`` (None keeps them).

    For ``"treatment"``/``"period"`` every coefficient of the block is set to
    ``effect``; for ``"response"`` the block is scaled by ``effect``; for
    ``("pair", a, b)`` response ``a`` is set to response ``b`` plus ``effect``.
    """
    if effect is None:
        return truth
    beta = truth.beta.copy()
    names = design.column_names()
    if isinstance(hypothesis, str) and hypothesis in ("treatment", "period"):
        beta[design.blocks()[hypothesis]] = effect
    elif hypothesis == "response":
        beta[design.blocks()["response"]] *= effect
    else:
        _, a, b = hypothesis
        gb = beta[names.index(f"response_{b}")] if b < design.m else 0.0
        beta[names.index(f"response_{a}")] = gb + effect
    return ParameterVector(beta, truth.sigma_e2, truth.sigma_s2)


@dataclass(frozen=True)
class PowerPoint:
    n_per_sequence: int
    miss_prob: float
    effect: float | None
    rejections: int
    n_valid: int

    @property
    def power(self) -> float:
        return self.rejections / self.n_valid if self.n_valid else float("nan")


def power_point(
    scenario: SimScenario,
    hypothesis,
    alpha: float = 0.05,
    mcem_config: McemConfig = McemConfig(),
    stat: str = "loglik",
    effect=None,
) -> PowerPoint:
    """Rejection count of the MCEM-LRT over ``scenario.reps`` simulated datasets."""
    d = scenario.design
    restriction = hypothesis_restriction(d, hypothesis)
    rejections = valid = 0
    for r in range(scenario.reps):
        data = generate_dataset(scenario, r)
        data, _ = draw_mask(data, scenario.miss_prob, scenario.miss_mode, _rng(scenario.seed, r, 1))
        cfg = replace(mcem_config, seed=_child_seed(scenario.seed, r, 2))
        try:
            full = mcem_fit(d, data, cfg)
            reduced = restricted_fit(d, data, cfg, restriction)
            if not (full.converged and reduced.converged):
                raise FitError("MCEM did not converge")
            test = lrt(full, reduced, stat=stat)
        except FitError as exc:
            log.warning("power replication %d excluded: %s", r, exc)
            continue
        valid += 1
        rejections += test.rejects(alpha)
    return PowerPoint(d.n_subjects[0], scenario.miss_prob, effect, rejections, valid)


def power_study(
    base: SimScenario,
    hypothesis,
    n_grid=(20, 50, 100),
    miss_grid=(0.15, 0.25, 0.35),
    effects=(None,),
    alpha: float = 0.05,
    reps: int = 1000,
    mcem_config: McemConfig = McemConfig(),
    stat: str = "loglik",
) -> list[PowerPoint]:
    """Empirical power over subjects-per-sequence x missingness x effect size."""
    out = []
    for effect in effects:
        truth = with_effect(base.true_params, base.design, hypothesis, effect)
        for n in n_grid:
            design = base.design.with_subjects((n,) * base.design.s)
            for miss in miss_grid:
                sc = replace(base, design=design, true_params=truth, miss_prob=miss, reps=reps)
                out.append(power_point(sc, hypothesis, alpha, mcem_config, stat, effect))
    return out


# ---------------------------------------------------------------------------
# Gene-expression case-study shape
# ---------------------------------------------------------------------------

# Treatment labels: 1 = placebo, 2 = 10 mg, 3 = 25 mg.
CASE_STUDY_DESIGN = CrossoverDesign(((2, 1, 3), (3, 2, 1), (1, 3, 2)), 10, (6, 6, 5))
# Cell-mean effects with period 1, placebo and gene 1 as baselines.
CASE_STUDY_EFFECTS = {
    "mu": 3.49,
    "period": (0.0, -0.002, 0.01),
    "treatment": (0.0, -0.01, 0.01),
    "gene": (0.0, -0.94, -1.59, -0.33, -0.04, -1.27, -1.47, -2.02, -0.82, -0.63),
    "sigma_e2": 0.01,
    "sigma_s2": 0.001,
}
# 0-based (sequence, subject) pairs whose third period is unobserved.
CASE_STUDY_MISSING = ((0, 1), (0, 4), (1, 1), (1, 3), (2, 1))


def synthetic_case_study(seed: int = 0, effects=CASE_STUDY_EFFECTS) -> TrialData:
    """Dataset with the gene study's shape and period-3 missingness pattern."""
    d = CASE_STUDY_DESIGN
    rng = np.random.default_rng(seed)
    per, trt, gene = (np.asarray(effects[k]) for k in ("period", "treatment", "gene"))
    values, masks = [], []
    for i in range(d.s):
        cell = np.array([effects["mu"] + per[j] + trt[d.assignment[i][j] - 1] + gene
                         for j in range(d.p)]).ravel()
        n_i = d.n_subjects[i]
        s = np.sqrt(effects["sigma_s2"]) * rng.standard_normal(n_i)
        e = np.sqrt(effects["sigma_e2"]) * rng.standard_normal((n_i, d.pm))
        values.append((cell + s[:, None] + e).ravel())
        mask = np.ones((n_i, d.pm), bool)
        for seq, k in CASE_STUDY_MISSING:
            if seq == i:
                mask[k, (d.p - 1) * d.m:] = False
        masks.append(mask.ravel())
    subjects = []
    start = 1
    for n_i in d.n_subjects:
        subjects.append(tuple(range(start, start + n_i)))
        start += n_i
    return TrialData(d, tuple(values), tuple(masks), tuple(subjects))


def degrade(data: TrialData, target: float, miss_mode: str, rng) -> TrialData:
    """Add Bernoulli missingness so the expected overall missing fraction is ``target``."""
    current = data.missing_fraction()
    if target <= current:
        return data
    return apply_missingness(data, (target - current) / (1 - current), miss_mode, rng)
