"""Crossover designs, parameters, design matrices and the implied covariance.

Observations of one subject are ordered period-major then response variate,
``(y_1,1 .. y_1,m, y_2,1 .. y_p,m)``, and subjects are stacked one after the
other within a sequence.  Indicator columns use reference-cell coding with the
*last* period, treatment and response variate as reference levels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg

from .exceptions import DesignError, ParameterError

RANK_RTOL = 1e-10


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CrossoverDesign:
    """Treatment-sequence layout of a crossover trial.

    ``assignment[i][j]`` is the treatment label (1..t) given in period ``j`` of
    sequence ``i`` (both 0-based here).  ``n_subjects[i]`` is the number of
    subjects randomised to sequence ``i``.
    """

    assignment: tuple[tuple[int, ...], ...]
    n_responses: int
    n_subjects: tuple[int, ...]
    n_treatments: int | None = None

    def __post_init__(self):
        assignment = tuple(tuple(int(x) for x in row) for row in self.assignment)
        object.__setattr__(self, "assignment", assignment)
        object.__setattr__(self, "n_subjects", tuple(int(x) for x in self.n_subjects))
        if not assignment:
            raise DesignError("design needs at least one sequence")
        p = len(assignment[0])
        if p < 1 or any(len(row) != p for row in assignment):
            raise DesignError("every sequence must list one treatment per period")
        if len(self.n_subjects) != len(assignment):
            raise DesignError(
                f"{len(self.n_subjects)} subject counts given for {len(assignment)} sequences"
            )
        if any(n < 1 for n in self.n_subjects):
            raise DesignError("every sequence needs at least one subject")
        if self.n_responses < 1:
            raise DesignError("at least one response variate is required")
        labels = {x for row in assignment for x in row}
        t = self.n_treatments if self.n_treatments is not None else max(labels)
        object.__setattr__(self, "n_treatments", int(t))
        if min(labels) < 1 or max(labels) > t:
            raise DesignError(f"treatment labels must lie in 1..{t}")
        unused = sorted(set(range(1, t + 1)) - labels)
        if unused:
            raise DesignError(f"treatments {unused} never assigned; their effects are unidentifiable")

    @property
    def s(self) -> int:
        return len(self.assignment)

    @property
    def p(self) -> int:
        return len(self.assignment[0])

    @property
    def t(self) -> int:
        return self.n_treatments

    @property
    def m(self) -> int:
        return self.n_responses

    @property
    def pm(self) -> int:
        return self.p * self.m

    @property
    def n(self) -> int:
        return sum(self.n_subjects)

    @property
    def n_fixed(self) -> int:
        return self.p + self.t + self.m - 2

    def column_names(self) -> tuple[str, ...]:
        return (
            ("mu",)
            + tuple(f"period_{j}" for j in range(1, self.p))
            + tuple(f"treatment_{k}" for k in range(1, self.t))
            + tuple(f"response_{l}" for l in range(1, self.m))
        )

    def blocks(self) -> dict[str, slice]:
        p, t, m = self.p, self.t, self.m
        return {
            "intercept": slice(0, 1),
            "period": slice(1, p),
            "treatment": slice(p, p + t - 1),
            "response": slice(p + t - 1, p + t + m - 2),
        }

    def with_subjects(self, n_subjects) -> "CrossoverDesign":
        return CrossoverDesign(self.assignment, self.n_responses, tuple(n_subjects), self.n_treatments)


@dataclass(frozen=True)
class ParameterVector:
    """Fixed effects ``(mu, periods, treatments, responses)`` plus variance components."""

    beta: np.ndarray
    sigma_e2: float
    sigma_s2: float

    def __post_init__(self):
        object.__setattr__(self, "beta", _frozen(np.atleast_1d(self.beta)))
        object.__setattr__(self, "sigma_e2", float(self.sigma_e2))
        object.__setattr__(self, "sigma_s2", float(self.sigma_s2))
        if not self.sigma_e2 > 0:
            raise ParameterError(f"sigma_e2 must be positive, got {self.sigma_e2}")
        if not self.sigma_s2 >= 0:
            raise ParameterError(f"sigma_s2 must be non-negative, got {self.sigma_s2}")
        if not np.all(np.isfinite(self.beta)):
            raise ParameterError("beta contains non-finite values")

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.beta, [self.sigma_e2, self.sigma_s2]])

    @classmethod
    def from_array(cls, theta) -> "ParameterVector":
        theta = np.asarray(theta, dtype=float)
        return cls(theta[:-2], theta[-2], theta[-1])

    def check(self, n_fixed: int) -> "ParameterVector":
        if self.beta.shape != (n_fixed,):
            raise ParameterError(f"beta has length {self.beta.size}, design needs {n_fixed}")
        return self


@dataclass(frozen=True)
class DesignMatrices:
    X: tuple[np.ndarray, ...]
    Z: tuple[np.ndarray, ...]
    subject_X: tuple[np.ndarray, ...]
    column_names: tuple[str, ...] = field(default=())


def subject_design(design: CrossoverDesign, i: int) -> np.ndarray:
    """Fixed-effect rows (pm x q) shared by every subject of sequence ``i``."""
    p, t, m = design.p, design.t, design.m
    period = np.vstack([np.eye(p - 1), np.zeros((1, p - 1))])
    treat = np.zeros((p, t - 1))
    for j, label in enumerate(design.assignment[i]):
        if label < t:
            treat[j, label - 1] = 1.0
    resp = np.vstack([np.eye(m - 1), np.zeros((1, m - 1))])
    return np.hstack(
        [
            np.ones((p * m, 1)),
            np.kron(period, np.ones((m, 1))),
            np.kron(treat, np.ones((m, 1))),
            np.kron(np.ones((p, 1)), resp),
        ]
    )


def _rank(a: np.ndarray) -> int:
    if a.shape[1] == 0:
        return 0
    r = scipy.linalg.qr(a, mode="r", pivoting=True)[0]
    d = np.abs(np.diag(r))
    return int(np.sum(d > RANK_RTOL * d[0])) if d.size and d[0] > 0 else 0


def check_identifiable(rows: np.ndarray, design: CrossoverDesign, what: str = "design") -> None:
    """Raise naming the first column block that adds a rank deficiency."""
    cols = 0
    for name, sl in design.blocks().items():
        cols = sl.stop
        if _rank(rows[:, :cols]) < cols:
            raise DesignError(f"{what} is rank deficient: the {name} block is not identifiable")


@lru_cache(maxsize=64)
def build_design_matrices(design: CrossoverDesign) -> DesignMatrices:
    """Per-sequence fixed-effect (X) and random-effect (Z) matrices."""
    sub = [subject_design(design, i) for i in range(design.s)]
    check_identifiable(np.vstack(sub), design)
    X, Z = [], []
    for i, n_i in enumerate(design.n_subjects):
        X.append(_frozen(np.tile(sub[i], (n_i, 1))))
        Z.append(_frozen(np.kron(np.eye(n_i), np.ones((design.pm, 1)))))
    return DesignMatrices(
        tuple(X), tuple(Z), tuple(_frozen(a) for a in sub), design.column_names()
    )


def subject_covariance(params: ParameterVector, p: int, m: int) -> np.ndarray:
    """Compound-symmetric covariance of one subject's pm observations."""
    k = p * m
    return params.sigma_s2 * np.ones((k, k)) + params.sigma_e2 * np.eye(k)


def marginal_covariance(params: ParameterVector, design: CrossoverDesign, i: int) -> np.ndarray:
    """Marginal covariance of sequence ``i``: block diagonal over its subjects."""
    block = subject_covariance(params, design.p, design.m)
    return np.kron(np.eye(design.n_subjects[i]), block)
