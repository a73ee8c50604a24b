"""MCMC bookkeeping shared by the Bayesian estimators.

Chains are stored as a dense (kept iterations x parameters) matrix with a
label for every column, plus an opaque sampler-state blob that allows a
finished chain to be continued exactly (bitwise, when the RNG state is
preserved).  Persistence is one column-labelled CSV per chain and a small
plain-text header with the seed, sampler controls, and prior settings.
"""

from __future__ import annotations

import copy
import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "MCMCControl",
    "PosteriorChains",
    "gelman_rubin",
    "autocorrelation",
    "save_chains",
    "load_chains",
]


@dataclass(frozen=True)
class MCMCControl:
    """Sampler run controls."""

    n_iter: int = 2000
    n_burn: int = 500
    n_thin: int = 1
    n_chains: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n_burn >= self.n_iter:
            raise ValueError("burn-in must be shorter than the run")
        if self.n_thin < 1:
            raise ValueError("thinning interval must be >= 1")
        if self.n_chains < 1:
            raise ValueError("need at least one chain")

    @property
    def n_kept(self) -> int:
        return (self.n_iter - self.n_burn) // self.n_thin


@dataclass
class PosteriorChains:
    """Labelled posterior samples from one chain.

    ``meta`` carries model-specific reconstruction info (bins, strata,
    priors); ``state`` carries everything needed to continue the chain.
    """

    samples: np.ndarray
    labels: tuple[str, ...]
    meta: dict = field(default_factory=dict)
    state: dict | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 2 or self.samples.shape[1] != len(self.labels):
            raise ValueError("samples must be (iterations x labelled parameters)")

    @property
    def n_kept(self) -> int:
        return self.samples.shape[0]

    def column(self, label: str) -> np.ndarray:
        try:
            j = self.labels.index(label)
        except ValueError:
            raise KeyError(f"no chain column {label!r}") from None
        return self.samples[:, j]

    def columns(self, prefix: str) -> np.ndarray:
        idx = [j for j, lab in enumerate(self.labels) if lab.startswith(prefix)]
        return self.samples[:, idx]


def gelman_rubin(chain_set: list[PosteriorChains]) -> dict[str, float]:
    """Potential scale reduction per parameter.

    Computed as sqrt((W + B/n) / W) with W the mean within-chain variance
    (ddof=0) and B the between-chain variance of the means; identical
    chains give exactly 1.  Constant parameters yield NaN.
    """
    if len(chain_set) < 2:
        raise ValueError("Gelman-Rubin needs at least two chains")
    labels = chain_set[0].labels
    n = chain_set[0].n_kept
    for ch in chain_set[1:]:
        if ch.labels != labels or ch.n_kept != n:
            raise ValueError("chains must share labels and kept length")
    stacked = np.stack([ch.samples for ch in chain_set])  # (m, n, p)
    within = stacked.var(axis=1, ddof=0).mean(axis=0)
    means = stacked.mean(axis=1)
    between = n * means.var(axis=0, ddof=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        psrf = np.sqrt(1.0 + between / (n * within))
    psrf = np.where(within > 0, psrf, np.nan)
    return dict(zip(labels, psrf.tolist()))


def autocorrelation(series: np.ndarray, max_lag: int = 20) -> np.ndarray:
    """Sample autocorrelations at lags 1..max_lag."""
    x = np.asarray(series, dtype=float)
    x = x - x.mean()
    denom = float(x @ x)
    if denom == 0.0:
        return np.zeros(max_lag)
    return np.array(
        [float(x[lag:] @ x[:-lag]) / denom for lag in range(1, max_lag + 1)]
    )


def _format(x: float) -> str:
    return repr(float(x))


def save_chains(
    out_dir: str | Path, chain_set: list[PosteriorChains], header: dict
) -> None:
    """Write chain_XX.csv (labelled columns), state_XX.json, header.txt."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "header.txt", "w") as fh:
        for key in sorted(header):
            fh.write(f"{key}={header[key]}\n")
    for i, chains in enumerate(chain_set, start=1):
        with open(out / f"chain_{i:02d}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(chains.labels)
            for row in chains.samples:
                writer.writerow([_format(v) for v in row])
        blob = {"meta": _jsonable(chains.meta)}
        if chains.state is not None:
            blob["state"] = _jsonable(chains.state)
        with open(out / f"state_{i:02d}.json", "w") as fh:
            json.dump(blob, fh, sort_keys=True)


def load_chains(in_dir: str | Path) -> tuple[list[PosteriorChains], dict]:
    """Read back what :func:`save_chains` wrote."""
    src = Path(in_dir)
    header_path = src / "header.txt"
    if not header_path.exists():
        raise FileNotFoundError(f"missing header file {header_path}")
    header = {}
    for line in header_path.read_text().splitlines():
        if "=" in line:
            key, _, value = line.partition("=")
            header[key] = value
    chain_set = []
    for path in sorted(src.glob("chain_*.csv")):
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            labels = tuple(next(reader))
            rows = [[float(v) for v in row] for row in reader]
        state_path = src / path.name.replace("chain", "state").replace(".csv", ".json")
        meta, state = {}, None
        if state_path.exists():
            blob = json.loads(state_path.read_text())
            meta = blob.get("meta", {})
            state = blob.get("state")
        samples = np.array(rows) if rows else np.empty((0, len(labels)))
        chain_set.append(PosteriorChains(samples, labels, meta, state))
    if not chain_set:
        raise FileNotFoundError(f"no chain_*.csv files under {src}")
    return chain_set, header


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return {"__ndarray__": obj.tolist()}
    if isinstance(obj, (np.integer, np.floating)):
        return obj.item()
    return copy.deepcopy(obj)


def from_jsonable(obj):
    """Inverse of the array encoding used by :func:`save_chains`."""
    if isinstance(obj, dict):
        if "__ndarray__" in obj:
            return np.asarray(obj["__ndarray__"])
        return {k: from_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [from_jsonable(v) for v in obj]
    return obj
