"""Trial data with an explicit missingness mask."""

from __future__ import annotations

from dataclasses import dataclass
from numbers import Number

import numpy as np

from .design import CrossoverDesign, build_design_matrices
from .exceptions import DataError


def _label_key(label):
    if isinstance(label, Number):
        return (0, float(label), "")
    return (1, 0.0, str(label))


@dataclass(frozen=True)
class TrialData:
    """Responses of every sequence, stored per sequence in design row order.

    Missing entries hold NaN, so nothing downstream can read a value hidden by
    the mask.  ``subjects[i]`` carries the subject labels of sequence ``i``.
    """

    design: CrossoverDesign
    values: tuple[np.ndarray, ...]
    mask: tuple[np.ndarray, ...]
    subjects: tuple[tuple, ...] | None = None

    def __post_init__(self):
        d = self.design
        if len(self.values) != d.s or len(self.mask) != d.s:
            raise DataError(f"expected data for {d.s} sequences")
        values, mask = [], []
        for i, (v, k) in enumerate(zip(self.values, self.mask)):
            v = np.array(v, dtype=float).ravel()
            k = np.array(k, dtype=bool).ravel()
            size = d.pm * d.n_subjects[i]
            if v.size != size or k.size != size:
                raise DataError(f"sequence {i} needs {size} entries, got {v.size}")
            if np.any(~np.isfinite(v[k])):
                raise DataError(f"sequence {i} has non-finite observed values")
            v[~k] = np.nan
            v.setflags(write=False)
            k.setflags(write=False)
            values.append(v)
            mask.append(k)
        object.__setattr__(self, "values", tuple(values))
        object.__setattr__(self, "mask", tuple(mask))
        if self.subjects is None:
            subjects = tuple(tuple(range(n)) for n in d.n_subjects)
        else:
            subjects = tuple(tuple(s) for s in self.subjects)
            if [len(s) for s in subjects] != list(d.n_subjects):
                raise DataError("subject labels do not match the design's subject counts")
            for i, s in enumerate(subjects):
                if len(set(s)) != len(s):
                    raise DataError(f"duplicate subject labels in sequence {i}")
        object.__setattr__(self, "subjects", subjects)

    @property
    def n_missing(self) -> tuple[int, ...]:
        return tuple(int((~k).sum()) for k in self.mask)

    @property
    def n_observed(self) -> tuple[int, ...]:
        return tuple(int(k.sum()) for k in self.mask)

    def missing_fraction(self) -> float:
        return sum(self.n_missing) / sum(k.size for k in self.mask)

    def with_mask(self, mask) -> "TrialData":
        mask = tuple(np.asarray(a, bool) & b for a, b in zip(mask, self.mask))
        return TrialData(self.design, self.values, mask, self.subjects)

    def map_values(self, fn) -> "TrialData":
        vals = []
        for v, k in zip(self.values, self.mask):
            out = np.full(v.shape, np.nan)
            out[k] = fn(v[k])
            vals.append(out)
        return TrialData(self.design, tuple(vals), self.mask, self.subjects)

    def permute_subjects(self, i: int, order) -> "TrialData":
        """Reorder the subjects of sequence ``i`` (labels travel with the data)."""
        pm = self.design.pm
        order = list(order)
        idx = (np.asarray(order)[:, None] * pm + np.arange(pm)).ravel()
        values = list(self.values)
        mask = list(self.mask)
        subjects = list(self.subjects)
        values[i] = values[i][idx]
        mask[i] = mask[i][idx]
        subjects[i] = tuple(subjects[i][j] for j in order)
        return TrialData(self.design, tuple(values), tuple(mask), tuple(subjects))


@dataclass(frozen=True)
class SubjectArrays:
    """All subjects stacked in canonical order, one row of pm entries each.

    Canonical order is by sequence then subject label, so any reordering of
    subjects within a sequence maps to the same arrays.
    """

    Y: np.ndarray  # (n, pm), NaN where missing
    mask: np.ndarray  # (n, pm)
    X: np.ndarray  # (n, pm, q)
    seq: np.ndarray  # (n,)
    n_seq: int

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    @property
    def pm(self) -> int:
        return self.Y.shape[1]

    @property
    def q(self) -> int:
        return self.X.shape[2]


def stack_subjects(data: TrialData, basis: np.ndarray | None = None) -> SubjectArrays:
    """Stack ``data`` into subject-major arrays; ``basis`` maps beta to a reduced X."""
    d = data.design
    sub_x = build_design_matrices(d).subject_X
    Y, M, X, seq = [], [], [], []
    for i in range(d.s):
        order = sorted(range(d.n_subjects[i]), key=lambda j: _label_key(data.subjects[i][j]))
        y = data.values[i].reshape(d.n_subjects[i], d.pm)[order]
        k = data.mask[i].reshape(d.n_subjects[i], d.pm)[order]
        xi = sub_x[i] if basis is None else sub_x[i] @ basis
        Y.append(y)
        M.append(k)
        X.append(np.broadcast_to(xi, (d.n_subjects[i],) + xi.shape))
        seq.append(np.full(d.n_subjects[i], i))
    return SubjectArrays(
        np.vstack(Y), np.vstack(M), np.concatenate(X), np.concatenate(seq), d.s
    )
