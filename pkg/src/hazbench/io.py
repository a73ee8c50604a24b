"""CSV ingestion and emission.

Datasets are plain CSV with a header row; the formula names the required
columns.  Numeric parsing is strict: times must be positive decimals and
the event column 0/1.  String-valued covariate columns are expanded to
indicator columns here (sorted levels, first level dropped for PH terms),
because the core treats covariates as numeric.

All floats are written with repr, so re-ingesting a written file
reconstructs the values bit-exactly and reruns produce byte-identical
output.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .data import HazardCurve, SurvDataset, TimeGrid
from .formula import ModelFormula

__all__ = [
    "read_dataset",
    "write_dataset",
    "write_curve",
    "read_curve",
    "dataset_summary",
]


class InputError(ValueError):
    """Bad user-supplied file or formula/column mismatch."""


def _fmt(x: float) -> str:
    return repr(float(x))


def read_table(path: str | Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        rows = [row for row in reader if row]
    return [h.strip() for h in header], rows


def _numeric_column(name: str, raw: list[str], path) -> np.ndarray:
    try:
        return np.array([float(v) for v in raw])
    except ValueError:
        raise InputError(f"{path}: column {name!r} is not numeric") from None


def _is_numeric(raw: list[str]) -> bool:
    try:
        for v in raw:
            float(v)
        return True
    except ValueError:
        return False


def read_dataset(path: str | Path, formula: ModelFormula) -> SurvDataset:
    """Load the columns a formula needs; expand string factors to
    indicators; build strata from the NPH columns."""
    header, rows = read_table(path)
    for col in formula.columns:
        if col not in header:
            raise InputError(f"{path}: missing required column {col!r}")
    get = {name: [row[header.index(name)].strip() for row in rows] for name in formula.columns}
    times = _numeric_column(formula.time_col, get[formula.time_col], path)
    events_raw = _numeric_column(formula.event_col, get[formula.event_col], path)
    if not np.isin(events_raw, (0.0, 1.0)).all():
        raise InputError(f"{path}: column {formula.event_col!r} must be 0/1")

    cov_cols: list[np.ndarray] = []
    cov_names: list[str] = []
    for term in formula.ph_terms:
        raw = get[term]
        if _is_numeric(raw):
            cov_cols.append(_numeric_column(term, raw, path))
            cov_names.append(term)
        else:
            levels = sorted(set(raw))
            for lev in levels[1:]:
                cov_cols.append(np.array([1.0 if v == lev else 0.0 for v in raw]))
                cov_names.append(f"{term}.{lev}")
    strata = None
    nph_values = []
    for term in formula.nph_terms:
        raw = get[term]
        if _is_numeric(raw):
            col = _numeric_column(term, raw, path)
            if not np.isin(col, (0.0, 1.0)).all():
                levels = sorted(set(raw), key=float)
                for lev in levels[1:]:
                    cov_cols.append(np.array([1.0 if v == lev else 0.0 for v in raw]))
                    cov_names.append(f"{term}.{lev}")
                nph_values.append(raw)
                continue
            cov_cols.append(col)
            cov_names.append(term)
            nph_values.append(raw)
        else:
            levels = sorted(set(raw))
            for lev in levels[1:]:
                cov_cols.append(np.array([1.0 if v == lev else 0.0 for v in raw]))
                cov_names.append(f"{term}.{lev}")
            nph_values.append(raw)
    if nph_values:
        strata = np.array([",".join(vals) for vals in zip(*nph_values)])
    covariates = np.column_stack(cov_cols) if cov_cols else None
    try:
        return SurvDataset(times, events_raw, covariates, tuple(cov_names), strata)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None


def write_dataset(data: SurvDataset, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "event", *data.covariate_names])
        for i in range(len(data)):
            writer.writerow(
                [_fmt(data.times[i]), int(data.events[i])]
                + [_fmt(v) for v in data.covariates[i]]
            )


def write_curve(curve: HazardCurve, path: str | Path) -> None:
    """Hazard-curve CSV: one row per bin with bounds where available."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_lo", "t_hi", "estimate", "lower", "upper", "kind"])
        edges = curve.grid.edges
        for j in range(curve.grid.n_bins):
            lo = "" if curve.lower is None else _fmt(curve.lower[j])
            hi = "" if curve.upper is None else _fmt(curve.upper[j])
            writer.writerow(
                [_fmt(edges[j]), _fmt(edges[j + 1]), _fmt(curve.values[j]), lo, hi, curve.kind]
            )


def read_curve(path: str | Path) -> HazardCurve:
    header, rows = read_table(path)
    if header[:3] != ["t_lo", "t_hi", "estimate"]:
        raise InputError(f"{path}: not a hazard-curve CSV")
    edges = [float(rows[0][0])] + [float(row[1]) for row in rows]
    values = np.array([float(row[2]) for row in rows])
    lower = upper = None
    if all(row[3] for row in rows):
        lower = np.array([float(row[3]) for row in rows])
    if all(row[4] for row in rows):
        upper = np.array([float(row[4]) for row in rows])
    kind = rows[0][5]
    flags = ~np.isfinite(values) if kind == "log_ratio" else None
    return HazardCurve(
        TimeGrid(np.array(edges)), values, kind=kind, lower=lower, upper=upper,
        flags=flags,
    )


def dataset_summary(data: SurvDataset) -> dict:
    """Validator numbers: size, censored share, median observed failure."""
    events = data.events == 1
    summary = {
        "n": len(data),
        "events": int(events.sum()),
        "censored_pct": round(100.0 * (1.0 - events.mean())),
        "median_event_time": float(np.median(data.times[events])) if events.any() else float("nan"),
        "min_time": float(data.times.min()),
        "max_time": float(data.times.max()),
    }
    return summary
