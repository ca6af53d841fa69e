import numpy as np

from crossover_mcem import TrialData
from crossover_mcem.conditional import sample_b_given_y, sample_ymis_given_b
from crossover_mcem.design import build_design_matrices


def simulate(design, params, seed=0, miss=0.0):
    rng = np.random.default_rng(seed)
    dm = build_design_matrices(design)
    values, masks = [], []
    for i, n_i in enumerate(design.n_subjects):
        b = np.sqrt(params.sigma_s2) * rng.standard_normal(n_i)
        e = np.sqrt(params.sigma_e2) * rng.standard_normal(n_i * design.pm)
        values.append(dm.X[i] @ params.beta + dm.Z[i] @ b + e)
        masks.append(rng.random(n_i * design.pm) >= miss)
    return TrialData(design, tuple(values), tuple(masks))


def gibbs_chains(params, design, data, burn, keep, seed):
    """Run the public Gibbs pair; each subject of the sequence is its own chain."""
    rng = np.random.default_rng(seed)
    y = np.array(data.values[0])
    mis = ~data.mask[0]
    y[mis] = 0.0
    out = np.empty((keep, int(mis.sum())))
    for sweep in range(burn + keep):
        b = sample_b_given_y(params, design, 0, y, rng)
        y[mis] = sample_ymis_given_b(params, design, 0, b, data, rng)
        if sweep >= burn:
            out[sweep - burn] = y[mis]
    return out


# Acceptance verdict lines, echoed again in the pytest terminal summary.
ACCEPTANCE_LINES: list[str] = []
