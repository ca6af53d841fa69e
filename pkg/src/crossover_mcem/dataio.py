"""CSV datasets and JSON configuration files.

Dataset format: UTF-8 CSV with header ``sequence,subject,period,treatment,response,value``.
``period`` and ``response`` are 1-based integers, an empty ``value`` marks a
missing response, and rows absent from the file are missing as well.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import TrialData
from .design import CrossoverDesign, ParameterVector
from .exceptions import DataError, DesignError

COLUMNS = ("sequence", "subject", "period", "treatment", "response", "value")


@dataclass(frozen=True)
class DesignConfig:
    """Declared design: treatment labels (last one is the reference) and sequences."""

    treatments: tuple[str, ...]
    sequences: tuple[tuple[str, tuple[str, ...]], ...]
    responses: int

    @classmethod
    def from_dict(cls, raw: dict) -> "DesignConfig":
        try:
            seqs = raw["sequences"]
            responses = int(raw["responses"])
        except (KeyError, TypeError, ValueError) as exc:
            raise DesignError(f"design config needs 'sequences' and 'responses': {exc}") from None
        if isinstance(seqs, dict):
            seqs = list(seqs.items())
        else:
            seqs = [(str(k + 1), v) for k, v in enumerate(seqs)]
        sequences = tuple((str(k), tuple(str(x) for x in v)) for k, v in seqs)
        treatments = raw.get("treatments")
        if treatments is None:
            treatments = sorted({x for _, v in sequences for x in v})
        treatments = tuple(str(x) for x in treatments)
        unknown = {x for _, v in sequences for x in v} - set(treatments)
        if unknown:
            raise DesignError(f"sequences use undeclared treatments {sorted(unknown)}")
        return cls(treatments, sequences, responses)

    @classmethod
    def load(cls, path) -> "DesignConfig":
        return cls.from_dict(load_json(path))

    def to_dict(self) -> dict:
        return {
            "treatments": list(self.treatments),
            "sequences": {k: list(v) for k, v in self.sequences},
            "responses": self.responses,
        }

    @property
    def sequence_labels(self) -> tuple[str, ...]:
        return tuple(k for k, _ in self.sequences)

    def assignment(self) -> tuple[tuple[int, ...], ...]:
        index = {t: k + 1 for k, t in enumerate(self.treatments)}
        return tuple(tuple(index[x] for x in v) for _, v in self.sequences)

    def design(self, n_subjects) -> CrossoverDesign:
        return CrossoverDesign(self.assignment(), self.responses, tuple(n_subjects), len(self.treatments))


def load_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from None


def parse_dataset(path, config: DesignConfig) -> TrialData:
    """Read a long-format CSV into :class:`TrialData`, validating it against ``config``."""
    seq_index = {k: i for i, k in enumerate(config.sequence_labels)}
    p = len(config.sequences[0][1])
    m = config.responses
    cells: dict = {}
    subjects: list[list[str]] = [[] for _ in config.sequences]
    home: dict[str, str] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty file")
        missing_cols = [c for c in COLUMNS if c not in reader.fieldnames]
        if missing_cols:
            raise DataError(f"{path}: missing columns {missing_cols}")
        for row in reader:
            line = reader.line_num
            seq = row["sequence"].strip()
            if seq not in seq_index:
                raise DataError(f"row {line}: unknown sequence {seq!r}")
            subj = row["subject"].strip()
            if home.setdefault(subj, seq) != seq:
                raise DataError(f"row {line}: subject {subj!r} appears in sequences {home[subj]!r} and {seq!r}")
            try:
                period, resp = int(row["period"]), int(row["response"])
            except ValueError:
                raise DataError(f"row {line}: period and response must be integers") from None
            if not 1 <= period <= p or not 1 <= resp <= m:
                raise DataError(f"row {line}: period {period} / response {resp} out of range")
            expected = config.sequences[seq_index[seq]][1][period - 1]
            if row["treatment"].strip() != expected:
                raise DataError(
                    f"row {line}: treatment {row['treatment'].strip()!r} does not match the design "
                    f"({expected!r} in sequence {seq!r}, period {period})"
                )
            raw = row["value"].strip()
            try:
                value = float(raw) if raw else np.nan
            except ValueError:
                raise DataError(f"row {line}: non-numeric value {raw!r}") from None
            if raw and not np.isfinite(value):
                raise DataError(f"row {line}: non-finite value {raw!r}")
            key = (seq, subj, period, resp)
            if key in cells:
                raise DataError(f"row {line}: duplicate key {key} (first seen on row {cells[key][1]})")
            cells[key] = (value, line)
            if subj not in subjects[seq_index[seq]]:
                subjects[seq_index[seq]].append(subj)
    if not cells:
        raise DataError(f"{path}: no data rows")
    empty = [config.sequence_labels[i] for i, s in enumerate(subjects) if not s]
    if empty:
        raise DataError(f"sequences without subjects: {empty}")
    design = config.design([len(s) for s in subjects])
    values, masks = [], []
    for i, (seq, _) in enumerate(config.sequences):
        v = np.full((len(subjects[i]), p, m), np.nan)
        for k, subj in enumerate(subjects[i]):
            for j in range(p):
                for l in range(m):
                    v[k, j, l] = cells.get((seq, subj, j + 1, l + 1), (np.nan, 0))[0]
        values.append(v.ravel())
        masks.append(~np.isnan(v.ravel()))
    return TrialData(design, tuple(values), tuple(masks), tuple(tuple(s) for s in subjects))


def missing_report(data: TrialData) -> dict:
    """Missing percentages overall and per sequence."""
    d = data.design
    per = [100.0 * data.n_missing[i] / (d.pm * d.n_subjects[i]) for i in range(d.s)]
    return {"overall": 100.0 * data.missing_fraction(), "per_sequence": per}


def write_dataset(data: TrialData, config: DesignConfig, path) -> None:
    d = data.design
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for i, (seq, trts) in enumerate(config.sequences):
            v = data.values[i].reshape(d.n_subjects[i], d.p, d.m)
            k = data.mask[i].reshape(v.shape)
            for s, subj in enumerate(data.subjects[i]):
                for j in range(d.p):
                    for l in range(d.m):
                        value = repr(float(v[s, j, l])) if k[s, j, l] else ""
                        w.writerow([seq, subj, j + 1, trts[j], l + 1, value])


def scenario_from_dict(raw: dict):
    """Simulation scenario from JSON; keys default to the two-sequence, four-variate study."""
    from .simulation import SIM_DESIGN, SIM_TRUTH, SimScenario

    try:
        if "sequences" in raw:
            n = raw.get("n_per_sequence", 50)
            seqs = raw["sequences"]
            n = (n,) * len(seqs) if isinstance(n, int) else tuple(n)
            design = CrossoverDesign(tuple(tuple(x) for x in seqs), int(raw["responses"]), n)
        else:
            design = SIM_DESIGN
            if "n_per_sequence" in raw:
                design = design.with_subjects((int(raw["n_per_sequence"]),) * design.s)
        truth = ParameterVector(
            raw.get("beta", SIM_TRUTH.beta),
            raw.get("sigma_e2", SIM_TRUTH.sigma_e2),
            raw.get("sigma_s2", SIM_TRUTH.sigma_s2),
        )
        return SimScenario(
            design,
            truth,
            float(raw.get("miss_prob", 0.15)),
            raw.get("miss_mode", "element"),
            int(raw.get("reps", 100)),
            int(raw.get("seed", 0)),
        )
    except (KeyError, TypeError) as exc:
        raise DesignError(f"invalid scenario config: {exc}") from None


def write_table(rows: list[dict], columns, txt_path: Path, csv_path: Path, fmt="{:.6g}") -> None:
    """Write ``rows`` as an aligned text table and as CSV."""

    def cell(x):
        if x is None or (isinstance(x, float) and np.isnan(x)):
            return ""
        if isinstance(x, (float, np.floating)):
            return fmt.format(float(x))
        return str(x)

    body = [[cell(r.get(c)) for c in columns] for r in rows]
    widths = [max(len(c), *(len(b[k]) for b in body)) if body else len(c) for k, c in enumerate(columns)]
    with open(txt_path, "w", encoding="utf-8") as fh:
        fh.write("  ".join(c.ljust(w) for c, w in zip(columns, widths)).rstrip() + "\n")
        fh.write("  ".join("-" * w for w in widths) + "\n")
        for b in body:
            fh.write("  ".join(x.rjust(w) if k else x.ljust(w) for k, (x, w) in enumerate(zip(b, widths))).rstrip() + "\n")
    def raw(x):
        if x is None or (isinstance(x, float) and np.isnan(x)):
            return ""
        return repr(float(x)) if isinstance(x, (float, np.floating)) else x

    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([raw(r.get(c)) for c in columns])
