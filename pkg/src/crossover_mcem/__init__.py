"""Monte Carlo EM for multivariate crossover trials with missing responses."""

__version__ = "0.1.0"

from .conditional import missing_conditional, observed_loglik, random_effect_posterior
from .data import TrialData
from .design import CrossoverDesign, ParameterVector, build_design_matrices, check_identifiable
from .exceptions import CovarianceError, DataError, DesignError, FitError, ParameterError
from .inference import MiConfig, complete_data_ml, lrt, mi_standard_errors, mi_total_variance
from .mcem import McemConfig, Restriction, hypothesis_restriction, mcem_fit, restricted_fit
from .simulation import SimScenario, power_study, run_replications, study_scenario

__all__ = [
    "CovarianceError",
    "CrossoverDesign",
    "DataError",
    "DesignError",
    "FitError",
    "McemConfig",
    "MiConfig",
    "ParameterError",
    "ParameterVector",
    "Restriction",
    "SimScenario",
    "TrialData",
    "build_design_matrices",
    "check_identifiable",
    "complete_data_ml",
    "hypothesis_restriction",
    "lrt",
    "mcem_fit",
    "mi_standard_errors",
    "mi_total_variance",
    "missing_conditional",
    "observed_loglik",
    "power_study",
    "random_effect_posterior",
    "restricted_fit",
    "run_replications",
    "study_scenario",
]
