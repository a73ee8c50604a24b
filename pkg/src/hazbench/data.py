"""Core data model and closed-form estimators for right-censored data.

Everything downstream (kernel, spline, MCMC, benchmark) is built on the
types here: immutable datasets, time grids, occurrence/exposure tables,
and hazard curves.  The Nelson-Aalen, Kaplan-Meier, and piecewise-constant
MLE estimators double as test oracles for the smoothing and sampling
estimators.

Conventions (fixed, documented, tested):

* events at identical times are processed simultaneously, with the at-risk
  count taken before any removals;
* a censoring at an event time counts as at-risk through that time;
* a record whose time falls exactly on a grid edge belongs to the
  left-open, right-closed bin ``(t_{j-1}, t_j]``;
* missing values are rejected at validation, never imputed.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterator, NamedTuple

import numpy as np

__all__ = [
    "SurvRecord",
    "SurvDataset",
    "TimeGrid",
    "OccExpTable",
    "HazardCurve",
    "bin_occurrence_exposure",
    "nelson_aalen",
    "kaplan_meier",
    "piecewise_mle",
    "predict_hazard",
    "log_hazard_ratio",
]


class SurvRecord(NamedTuple):
    """One right-censored observation."""

    time: float
    event: int
    covariates: tuple[float, ...] = ()


@dataclass(frozen=True)
class SurvDataset:
    """Immutable collection of right-censored records.

    Parameters
    ----------
    times : array of positive, finite study times.
    events : array of 0/1 censoring indicators (1 = observed failure).
    covariates : (n, p) numeric matrix; categorical levels must be
        pre-expanded to indicator columns by the caller.
    covariate_names : names matching the covariate columns.
    strata : optional array of hashable stratum labels, one per record.
    """

    times: np.ndarray
    events: np.ndarray
    covariates: np.ndarray = None  # type: ignore[assignment]
    covariate_names: tuple[str, ...] = ()
    strata: np.ndarray | None = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        events = np.asarray(self.events)
        if times.ndim != 1:
            raise ValueError("times must be one-dimensional")
        if not np.all(np.isfinite(times)):
            raise ValueError("survival times must be finite")
        if np.any(times <= 0.0):
            raise ValueError("survival times must be > 0 (zero times rejected)")
        if events.shape != times.shape:
            raise ValueError("events must match times in length")
        if not np.isin(events, (0, 1)).all():
            raise ValueError("event indicator must be 0 or 1")
        cov = self.covariates
        if cov is None:
            cov = np.empty((times.size, 0))
        cov = np.asarray(cov, dtype=float)
        if cov.ndim == 1:
            cov = cov.reshape(-1, 1)
        if cov.shape[0] != times.size:
            raise ValueError("covariate rows must match number of records")
        if not np.all(np.isfinite(cov)):
            raise ValueError("covariates contain missing or non-finite values")
        if len(self.covariate_names) not in (0, cov.shape[1]):
            raise ValueError("covariate_names must match covariate columns")
        names = tuple(self.covariate_names) or tuple(
            f"x{i}" for i in range(cov.shape[1])
        )
        strata = self.strata
        if strata is not None:
            strata = np.asarray(strata)
            if strata.shape != times.shape:
                raise ValueError("strata must match number of records")
        for name, value in (
            ("times", times),
            ("events", events.astype(np.int8)),
            ("covariates", cov),
            ("covariate_names", names),
            ("strata", strata),
        ):
            object.__setattr__(self, name, value)
        self.times.setflags(write=False)
        self.events.setflags(write=False)
        self.covariates.setflags(write=False)

    def __len__(self) -> int:
        return self.times.size

    @property
    def n_events(self) -> int:
        return int(self.events.sum())

    @property
    def total_time(self) -> float:
        return float(self.times.sum())

    def records(self) -> Iterator[SurvRecord]:
        for i in range(len(self)):
            yield SurvRecord(
                float(self.times[i]), int(self.events[i]), tuple(self.covariates[i])
            )

    def subset(self, mask: np.ndarray) -> "SurvDataset":
        mask = np.asarray(mask)
        return SurvDataset(
            self.times[mask],
            self.events[mask],
            self.covariates[mask],
            self.covariate_names,
            None if self.strata is None else self.strata[mask],
        )

    def column(self, name: str) -> np.ndarray:
        try:
            j = self.covariate_names.index(name)
        except ValueError:
            raise KeyError(f"no covariate column named {name!r}") from None
        return self.covariates[:, j]

    def columns(self, names) -> np.ndarray:
        if not names:
            return np.empty((len(self), 0))
        return np.column_stack([self.column(n) for n in names])

    def stratum_labels(self) -> list:
        """Distinct stratum labels in sorted order (first = baseline)."""
        if self.strata is None:
            return [None]
        return sorted(set(self.strata.tolist()))

    def stratum_subsets(self) -> list[tuple[object, "SurvDataset"]]:
        if self.strata is None:
            return [(None, self)]
        return [
            (lab, self.subset(self.strata == lab)) for lab in self.stratum_labels()
        ]


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing bin edges ``t_0 < t_1 < ... < t_J``."""

    edges: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=float)
        if edges.ndim != 1 or edges.size < 2:
            raise ValueError("grid needs at least two edges")
        if not np.all(np.diff(edges) > 0):
            raise ValueError("grid edges must be strictly increasing")
        object.__setattr__(self, "edges", edges)
        self.edges.setflags(write=False)

    @classmethod
    def regular(cls, stop: float, n_bins: int, start: float = 0.0) -> "TimeGrid":
        return cls(np.linspace(start, stop, n_bins + 1))

    @property
    def n_bins(self) -> int:
        return self.edges.size - 1

    @property
    def start(self) -> float:
        return float(self.edges[0])

    @property
    def stop(self) -> float:
        return float(self.edges[-1])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def equal_width(self) -> bool:
        w = self.widths
        return bool(np.all(np.abs(w - w[0]) <= 1e-12 * abs(w[0])))

    def bin_index(self, t) -> np.ndarray:
        """Index of the left-open bin (t_{j-1}, t_j] containing each t."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.edges, t, side="left") - 1
        return np.clip(idx, 0, self.n_bins - 1)

    def __eq__(self, other):
        return isinstance(other, TimeGrid) and np.array_equal(self.edges, other.edges)

    def __hash__(self):
        return hash(self.edges.tobytes())


@dataclass(frozen=True)
class OccExpTable:
    """Occurrence/exposure sufficient statistics per (bin, stratum).

    ``events``, ``exposure``, and ``at_risk`` are (J, L) arrays; column
    order follows ``labels``.
    """

    grid: TimeGrid
    events: np.ndarray
    exposure: np.ndarray
    at_risk: np.ndarray
    labels: tuple = (None,)

    @property
    def n_strata(self) -> int:
        return self.events.shape[1]

    def stratum(self, label) -> "OccExpTable":
        j = self.labels.index(label)
        return OccExpTable(
            self.grid,
            self.events[:, j : j + 1],
            self.exposure[:, j : j + 1],
            self.at_risk[:, j : j + 1],
            (label,),
        )


_CURVE_KINDS = ("hazard", "cumulative_hazard", "survival", "log_ratio")


@dataclass(frozen=True)
class HazardCurve:
    """Function values on a time grid, with optional interval bounds.

    kind='hazard' values are per-unit-time rates constant on each bin
    (t_{j-1}, t_j].  kind='cumulative_hazard' and kind='survival' values
    are right-continuous step/point values at the right edge of each bin.
    kind='log_ratio' follows the hazard convention.

    ``samples`` optionally carries per-iteration values (MCMC draws, one
    row per kept iteration) so that derived quantities can be computed
    per-iteration instead of by bound arithmetic.  ``flags`` marks bins
    whose value is degenerate (zero exposure, zero denominator).
    """

    grid: TimeGrid
    values: np.ndarray
    kind: str = "hazard"
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    samples: np.ndarray | None = None
    flags: np.ndarray | None = None
    note: str = ""

    def __post_init__(self):
        if self.kind not in _CURVE_KINDS:
            raise ValueError(f"unknown curve kind {self.kind!r}")
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.grid.n_bins,):
            raise ValueError("values must have one entry per grid bin")
        object.__setattr__(self, "values", values)
        for name in ("lower", "upper"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.asarray(arr, dtype=float)
                if arr.shape != values.shape:
                    raise ValueError(f"{name} must match values in shape")
                object.__setattr__(self, name, arr)
        ok = ~np.asarray(self.flags, dtype=bool) if self.flags is not None else np.ones(values.shape, bool)
        ok &= np.isfinite(values)
        if self.kind == "hazard" and np.any(values[ok] < 0):
            raise ValueError("hazard values must be nonnegative")
        if self.kind == "survival":
            v = values[ok]
            if v.size and (np.any(v < -1e-12) or np.any(v > 1 + 1e-12)):
                raise ValueError("survival values must lie in [0, 1]")
            if np.any(np.diff(values) > 1e-12):
                raise ValueError("survival values must be nonincreasing")
        if self.lower is not None and np.any(self.lower[ok] > values[ok] + 1e-9):
            raise ValueError("lower bound exceeds estimate")
        if self.upper is not None and np.any(self.upper[ok] < values[ok] - 1e-9):
            raise ValueError("upper bound below estimate")

    def evaluate(self, t) -> np.ndarray:
        """Evaluate the curve at times t (kind-aware step conventions)."""
        t = np.asarray(t, dtype=float)
        edges = self.grid.edges
        if self.kind in ("hazard", "log_ratio"):
            idx = self.grid.bin_index(t)
            out = self.values[idx]
            out = np.where(t <= edges[0], self.values[0], out)
            return np.where(t > edges[-1], self.values[-1], out)
        # right-continuous step at edges: value on [t_j, t_{j+1}) is values[j-1]
        idx = np.searchsorted(edges, t, side="right") - 1
        start = 0.0 if self.kind == "cumulative_hazard" else 1.0
        padded = np.concatenate([[start], self.values])
        return padded[np.clip(idx, 0, self.values.size)]

    def scaled(self, factor: float) -> "HazardCurve":
        return replace(
            self,
            values=self.values * factor,
            lower=None if self.lower is None else self.lower * factor,
            upper=None if self.upper is None else self.upper * factor,
            samples=None if self.samples is None else self.samples * factor,
        )

    def integral(self) -> float:
        """Bin-width weighted integral (hazard-convention curves)."""
        return float(np.sum(self.values * self.grid.widths))


def bin_occurrence_exposure(data: SurvDataset, grid: TimeGrid) -> OccExpTable:
    """Tabulate events, person-time, and at-risk counts per (bin, stratum).

    Events with time in (t_{j-1}, t_j] count toward bin j; exposure is the
    overlap of each subject's [0, time] with the bin.  Totals conserve the
    number of events and total follow-up.
    """
    if len(data) == 0:
        raise ValueError("empty dataset")
    if np.max(data.times) > grid.stop + 1e-12:
        raise ValueError(
            f"record time {np.max(data.times)} beyond last grid edge {grid.stop}"
        )
    labels = tuple(data.stratum_labels())
    J = grid.n_bins
    events = np.zeros((J, len(labels)))
    exposure = np.zeros((J, len(labels)))
    at_risk = np.zeros((J, len(labels)), dtype=int)
    lo, hi = grid.edges[:-1], grid.edges[1:]
    for col, (_, sub) in enumerate(data.stratum_subsets()):
        t = sub.times[:, None]
        overlap = np.clip(np.minimum(t, hi[None, :]) - lo[None, :], 0.0, None)
        exposure[:, col] = overlap.sum(axis=0)
        ev_idx = grid.bin_index(sub.times[sub.events == 1])
        np.add.at(events[:, col], ev_idx, 1.0)
        at_risk[:, col] = (t > lo[None, :]).sum(axis=0)
    return OccExpTable(grid, events, exposure, at_risk, labels)


def _event_table(data: SurvDataset):
    """Distinct event times with event counts and at-risk counts."""
    order = np.argsort(data.times, kind="stable")
    times, events = data.times[order], data.events[order]
    ev_times = np.unique(times[events == 1])
    d = np.array([(times[events == 1] == t).sum() for t in ev_times], dtype=float)
    y = np.array([(times >= t).sum() for t in ev_times], dtype=float)
    return ev_times, d, y


def nelson_aalen(data: SurvDataset) -> HazardCurve:
    """Nelson-Aalen cumulative hazard: jump d_i / Y_i at each event time."""
    if data.n_events == 0:
        raise ValueError("Nelson-Aalen requires at least one event")
    ev_times, d, y = _event_table(data)
    jumps = d / y
    grid = TimeGrid(np.concatenate([[0.0], ev_times]))
    var = np.cumsum(d / y**2)
    cum = np.cumsum(jumps)
    se = np.sqrt(var)
    return HazardCurve(
        grid,
        cum,
        kind="cumulative_hazard",
        lower=np.maximum(cum - 1.96 * se, 0.0),
        upper=cum + 1.96 * se,
    )


def kaplan_meier(data: SurvDataset) -> HazardCurve:
    """Product-limit survival estimate; S(0)=1, drops only at event times."""
    if data.n_events == 0:
        grid = TimeGrid(np.array([0.0, float(np.max(data.times))]))
        return HazardCurve(grid, np.array([1.0]), kind="survival")
    ev_times, d, y = _event_table(data)
    surv = np.cumprod(1.0 - d / y)
    # Greenwood variance on the log scale where S > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        gw = np.cumsum(d / (y * np.maximum(y - d, np.nan)))
        se = surv * np.sqrt(gw)
    lower = np.where(surv > 0, np.clip(surv - 1.96 * se, 0.0, 1.0), 0.0)
    upper = np.where(surv > 0, np.clip(surv + 1.96 * se, 0.0, 1.0), 0.0)
    lower = np.where(np.isfinite(lower), lower, 0.0)
    upper = np.where(np.isfinite(upper), upper, surv)
    grid = TimeGrid(np.concatenate([[0.0], ev_times]))
    return HazardCurve(grid, surv, kind="survival", lower=lower, upper=upper)


def piecewise_mle(table: OccExpTable, stratum=None) -> HazardCurve:
    """Piecewise-constant hazard MLE ``h_j = d_j / R_j`` on the table grid.

    Bins with zero exposure get value 0 and are flagged, not fatal.
    """
    if stratum is None:
        if table.n_strata != 1:
            raise ValueError("table has multiple strata; pass stratum=")
        col = 0
    else:
        col = table.labels.index(stratum)
    d, r = table.events[:, col], table.exposure[:, col]
    flagged = r <= 0.0
    values = np.zeros_like(d, dtype=float)
    np.divide(d, r, out=values, where=~flagged)
    return HazardCurve(table.grid, values, kind="hazard", flags=flagged)


def predict_hazard(base: HazardCurve, beta, x) -> HazardCurve:
    """Scale a baseline hazard by exp(x'beta); bounds scale identically."""
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if beta.shape != x.shape:
        raise ValueError(f"dimension mismatch: beta {beta.shape} vs x {x.shape}")
    if base.kind != "hazard":
        raise ValueError("predict_hazard needs a kind='hazard' curve")
    return base.scaled(float(np.exp(x @ beta)))


def log_hazard_ratio(a: HazardCurve, b: HazardCurve, alpha: float = 0.05) -> HazardCurve:
    """log(a_j / b_j) on a shared grid.

    Zero-denominator bins are flagged missing (NaN).  When both curves
    carry per-iteration samples of the same shape, interval bounds come
    from per-iteration ratio quantiles rather than bound arithmetic.
    """
    if a.grid != b.grid:
        raise ValueError("curves live on different grids")
    bad = (b.values <= 0.0) | (a.values <= 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        values = np.where(bad, np.nan, np.log(a.values / b.values))
    lower = upper = samples = None
    if (
        a.samples is not None
        and b.samples is not None
        and a.samples.shape == b.samples.shape
    ):
        with np.errstate(divide="ignore", invalid="ignore"):
            samples = np.log(a.samples / b.samples)
        finite = np.isfinite(samples).all(axis=0)
        lower = np.full(values.shape, np.nan)
        upper = np.full(values.shape, np.nan)
        if finite.any():
            qs = np.quantile(samples[:, finite], [alpha / 2, 1 - alpha / 2], axis=0)
            lower[finite] = np.minimum(qs[0], values[finite])
            upper[finite] = np.maximum(qs[1], values[finite])
    return HazardCurve(
        a.grid,
        values,
        kind="log_ratio",
        lower=lower,
        upper=upper,
        samples=samples,
        flags=bad,
    )
