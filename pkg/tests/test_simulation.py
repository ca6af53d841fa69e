from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from crossover_mcem import CrossoverDesign, ParameterVector
from crossover_mcem.design import build_design_matrices
from crossover_mcem.exceptions import DataError, ParameterError
from crossover_mcem.inference import MiConfig
from crossover_mcem.mcem import McemConfig
from crossover_mcem.simulation import (
    CASE_STUDY_DESIGN,
    SIM_DESIGN,
    SIM_TRUTH,
    SimScenario,
    apply_missingness,
    degrade,
    draw_mask,
    generate_dataset,
    normality_diagnostic,
    power_point,
    power_study,
    run_replications,
    synthetic_case_study,
    study_scenario,
    with_effect,
)

QUICK_MI = MiConfig(b=20, burn_in=50, m0=2)


def test_generate_shape_and_determinism():
    sc = study_scenario()
    a, b = generate_dataset(sc, 3), generate_dataset(sc, 3)
    assert sum(v.size for v in a.values) == 800 and a.missing_fraction() == 0
    for x, y in zip(a.values, b.values):
        np.testing.assert_array_equal(x, y)
    assert not np.array_equal(a.values[0], generate_dataset(sc, 4).values[0])


def test_generate_entry_variance():
    sc = study_scenario(seed=77)
    dm = build_design_matrices(sc.design)
    resid = np.concatenate(
        [np.concatenate(generate_dataset(sc, r).values) - np.concatenate([x @ SIM_TRUTH.beta for x in dm.X])
         for r in range(500)]
    )
    assert abs(resid.var() - 1.93) < 0.05


def test_zero_variances_rejected():
    with pytest.raises(ParameterError):
        SimScenario(SIM_DESIGN, ParameterVector(SIM_TRUTH.beta, 0.0, 0.0))
    with pytest.raises(ValueError):
        study_scenario(miss_prob=1.0)
    with pytest.raises(ValueError):
        study_scenario(miss_mode="cluster")


def test_missingness_modes():
    data = generate_dataset(study_scenario(), 0)
    rng = np.random.default_rng(1)
    assert apply_missingness(data, 0.0, "element", rng).missing_fraction() == 0
    masked = apply_missingness(data, 0.15, "element", rng)
    lo, hi = stats.binom.interval(0.99, 800, 0.15)
    assert lo <= sum(masked.n_missing) <= hi
    d = data.design
    for _ in range(20):
        block = apply_missingness(data, 0.3, "period-block", rng)
        for k in block.mask:
            cells = k.reshape(-1, d.p, d.m)
            assert np.all(cells.all(axis=2) | (~cells).all(axis=2))


def test_mask_redraw_limit():
    d = CrossoverDesign(((1, 2), (2, 1)), 1, (1, 1))
    data = generate_dataset(SimScenario(d, ParameterVector([1.0, 0.2, 0.3], 1.0, 0.5)), 0)
    with pytest.raises(DataError, match="50 consecutive"):
        draw_mask(data, 0.99, "element", np.random.default_rng(0))


def test_replications_reproducible_and_mse_bound():
    sc = study_scenario(miss_prob=0.2, reps=4, seed=5)
    cfg = McemConfig(c_schedule=((1, 50), (11, 200)), c_polish=500)
    a = run_replications(sc, cfg, QUICK_MI)
    b = run_replications(sc, cfg, QUICK_MI)
    np.testing.assert_array_equal(a.estimates, b.estimates)
    np.testing.assert_array_equal(a.ses, b.ses)
    assert np.all(a.mse >= a.bias**2 - 1e-15)
    assert [r["parameter"] for r in a.rows()][-2:] == ["sigma_e2", "sigma_s2"]
    assert len(list(a.rows())) == 8


@pytest.fixture(scope="module")
def complete_reps():
    return run_replications(study_scenario(miss_prob=0.0, reps=500, seed=2718))


def test_complete_data_unbiased(complete_reps):
    est = complete_reps.estimates[:100]
    se = est.std(axis=0, ddof=1) / np.sqrt(100)
    assert np.all(np.abs(est.mean(axis=0) - complete_reps.truth) < 2 * se)


def test_complete_data_coverage(complete_reps):
    assert complete_reps.n_converged == 500
    ecp = complete_reps.ecp
    assert np.all((ecp[:-2] >= 0.92) & (ecp[:-2] <= 0.98))
    # Symmetric Wald intervals on variance components ignore the skew of their
    # ML estimates and run a little below nominal at 100 subjects.
    assert np.all((ecp[-2:] >= 0.88) & (ecp[-2:] <= 0.98))


def test_normality_diagnostic(complete_reps):
    small = normality_diagnostic(complete_reps.estimates[:100], complete_reps.names)
    large = normality_diagnostic(complete_reps.estimates, complete_reps.names)
    assert np.median(large.ks) < np.median(small.ks)
    assert large.standardized.shape == (500, 8)
    np.testing.assert_allclose(large.standardized.mean(axis=0), 0, atol=1e-12)
    with pytest.raises(ValueError):
        normality_diagnostic(np.ones((40, 2)))
    with pytest.raises(ValueError):
        normality_diagnostic(np.random.default_rng(0).normal(size=(10, 2)))


def test_ks_calibration_on_normals():
    rng = np.random.default_rng(123)
    crit = stats.kstwo.ppf(0.95, 200)
    hits = sum(normality_diagnostic(rng.normal(size=200)).ks[0] < crit for _ in range(200))
    assert hits >= 180


def test_with_effect():
    d = SIM_DESIGN
    assert with_effect(SIM_TRUTH, d, "treatment", 0.0).beta[2] == 0.0
    assert with_effect(SIM_TRUTH, d, "treatment", None) is SIM_TRUTH
    np.testing.assert_allclose(with_effect(SIM_TRUTH, d, "response", 2.0).beta[3:], [0.92, 2.18, 1.0])
    assert with_effect(SIM_TRUTH, d, ("pair", 1, 3), 0.0).beta[3] == 0.5
    assert with_effect(SIM_TRUTH, d, ("pair", 1, 4), 0.3).beta[3] == 0.3


def test_power_at_zero_effect_is_size():
    base = study_scenario(seed=31)
    pts = power_study(base, "treatment", n_grid=(20,), effects=(0.0,), reps=100)
    assert [p.miss_prob for p in pts] == [0.15, 0.25, 0.35]
    band = 3 * np.sqrt(0.05 * 0.95 / 100)
    for p in pts:
        assert p.n_valid >= 95
        assert abs(p.power - 0.05) <= band


def test_power_point_structure():
    sc = replace(study_scenario(reps=3, seed=1), design=SIM_DESIGN.with_subjects((10, 10)))
    pt = power_point(sc, "response", effect=1.0)
    assert pt.n_per_sequence == 10 and pt.effect == 1.0 and pt.n_valid <= 3
    assert 0 <= pt.power <= 1


def test_synthetic_case_study_shape():
    data = synthetic_case_study()
    assert data.design is CASE_STUDY_DESIGN and data.design.n == 17
    assert data.missing_fraction() == pytest.approx(50 / 510)
    assert [round(100 * k / (180 if i < 2 else 150)) for i, k in enumerate(data.n_missing)] == [11, 11, 7]
    more = degrade(data, 0.24, "element", np.random.default_rng(0))
    assert more.missing_fraction() > data.missing_fraction()
    assert np.all([np.all(a <= b) for a, b in zip(more.mask, data.mask)])
    assert degrade(data, 0.05, "element", np.random.default_rng(0)) is data
