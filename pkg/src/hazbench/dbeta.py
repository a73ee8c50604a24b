"""Discrete-time Bayesian hazard estimation with a Markov beta prior.

Survival times must sit on the integer periods 1..K.  The per-period
failure probabilities pi_k get Beta(alpha_k, beta_k) priors, coupled
across adjacent periods by latent counts u_k.  The joint (unnormalized)
augmented prior is

    prod_k Beta(pi_k; alpha_k, beta_k) * prod_k (c pi_k pi_{k+1})^{u_k} / u_k!

so the full conditionals stay conjugate:

    pi_k | u, data ~ Beta(alpha_k + d_k + u_{k-1} + u_k,
                          beta_k + n_k - d_k)          (u_0 = u_K = 0)
    u_k | pi       ~ Poisson(c pi_k pi_{k+1})

with d_k deaths and n_k subjects at risk at the start of period k.  The
dependence intensity c >= 0 is fixed by default (c = 0 recovers exact
independent conjugate updates, the correctness oracle); an optional Gamma
hyperprior updates c from Gamma(shape + sum u, rate + sum pi_k pi_{k+1}),
treating the latent counts as Poisson observations.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .chains import MCMCControl, PosteriorChains
from .data import HazardCurve, SurvDataset, TimeGrid

__all__ = [
    "DiscreteSurvData",
    "DBetaPriors",
    "discretize",
    "fit_markov_beta",
    "survival_chains",
]


@dataclass(frozen=True)
class DiscreteSurvData:
    """Integer survival periods 1..K with per-period sufficient stats."""

    times: np.ndarray
    events: np.ndarray
    sparse: bool = False

    def __post_init__(self):
        times = np.asarray(self.times)
        events = np.asarray(self.events, dtype=np.int8)
        if times.size == 0:
            raise ValueError("empty data")
        if not np.issubdtype(times.dtype, np.integer):
            if not np.allclose(times, np.round(times)):
                raise ValueError("discrete survival times must be integers")
            times = np.round(times).astype(int)
        if np.any(times < 1):
            raise ValueError("discrete times must be >= 1 (zeroes are not allowed)")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "events", events)

    @property
    def n_periods(self) -> int:
        return int(self.times.max())

    def period_counts(self) -> tuple[np.ndarray, np.ndarray]:
        """(deaths d_k, at-risk n_k) for k = 1..K (period-start counts)."""
        K = self.n_periods
        d = np.zeros(K)
        np.add.at(d, self.times[self.events == 1] - 1, 1.0)
        n = np.array([(self.times >= k).sum() for k in range(1, K + 1)], dtype=float)
        return d, n


@dataclass(frozen=True)
class DBetaPriors:
    """Beta shapes per period (scalars broadcast) and dependence intensity.

    Small alpha/beta entries give a non-informative prior.  c_hyper, when
    set to (shape, rate), puts a Gamma hyperprior on c.
    """

    alpha: float | np.ndarray = 0.001
    beta: float | np.ndarray = 0.001
    c: float = 0.0
    c_hyper: tuple[float, float] | None = None

    def __post_init__(self):
        if np.any(np.asarray(self.alpha) <= 0) or np.any(np.asarray(self.beta) <= 0):
            raise ValueError("Beta shapes must be positive")
        if self.c < 0:
            raise ValueError("dependence intensity must be nonnegative")
        if self.c_hyper is not None and min(self.c_hyper) <= 0:
            raise ValueError("c hyperprior parameters must be positive")


def discretize(data: SurvDataset, mode: str = "ceiling") -> DiscreteSurvData:
    """Convert continuous times to integer periods by rounding or ceiling.

    Rounding can produce zero periods (an error telling the user to use
    ceiling); ceiling always yields periods >= 1.  A warning is emitted
    when there are more periods than subjects, where this estimator is
    known to get unstable.
    """
    if mode not in ("round", "ceiling"):
        raise ValueError("mode must be 'round' or 'ceiling'")
    if mode == "round":
        times = np.round(data.times).astype(int)
        if np.any(times < 1):
            raise ValueError(
                "rounding produced zero survival times; use mode='ceiling'"
            )
    else:
        times = np.ceil(data.times).astype(int)
    sparse = int(times.max()) > len(data)
    if sparse:
        warnings.warn(
            "more discrete periods than subjects; estimates may be unstable",
            stacklevel=2,
        )
    return DiscreteSurvData(times, data.events, sparse=sparse)


def _labels(K: int, random_c: bool) -> tuple[str, ...]:
    labels = [f"pi[{k}]" for k in range(1, K + 1)]
    labels += [f"u[{k}]" for k in range(1, K)]
    if random_c:
        labels.append("c")
    return tuple(labels)


def fit_markov_beta(
    data: DiscreteSurvData,
    priors: DBetaPriors = DBetaPriors(),
    ctrl: MCMCControl = MCMCControl(),
):
    """Gibbs-sample the posterior of pi_1..pi_K (and latent u, and c when
    hyperpriored).  Returns PosteriorChains with labelled columns, one per
    chain (a bare PosteriorChains when ctrl.n_chains == 1)."""
    d, n = data.period_counts()
    K = data.n_periods
    if d.sum() == 0:
        raise ValueError("need at least one event")
    alpha = np.broadcast_to(np.asarray(priors.alpha, dtype=float), (K,)).copy()
    beta = np.broadcast_to(np.asarray(priors.beta, dtype=float), (K,)).copy()
    random_c = priors.c_hyper is not None
    labels = _labels(K, random_c)
    meta = {
        "model": "dbeta",
        "n_periods": K,
        "priors": {
            "alpha": alpha,
            "beta": beta,
            "c": priors.c,
            "c_hyper": list(priors.c_hyper) if random_c else None,
        },
        "control": {
            "n_iter": ctrl.n_iter,
            "n_burn": ctrl.n_burn,
            "n_thin": ctrl.n_thin,
            "seed": ctrl.seed,
        },
    }
    results = []
    for chain_idx in range(ctrl.n_chains):
        rng = np.random.default_rng((ctrl.seed, chain_idx))
        if chain_idx == 0:
            pi = np.clip((d + 0.5) / (n + 1.0), 1e-6, 1.0 - 1e-6)
        else:
            pi = np.clip(rng.beta(alpha, beta), 1e-12, 1.0 - 1e-12)
        u = np.zeros(K - 1)
        c = priors.c if not random_c else priors.c_hyper[0] / priors.c_hyper[1]
        kept = np.empty((ctrl.n_kept, len(labels)))
        row = 0
        for i in range(1, ctrl.n_iter + 1):
            u_pad = np.concatenate([[0.0], u, [0.0]])
            a_post = alpha + d + u_pad[:-1] + u_pad[1:]
            b_post = beta + n - d
            pi = np.clip(rng.beta(a_post, b_post), 1e-300, 1.0 - 1e-16)
            if K > 1:
                mean_u = c * pi[:-1] * pi[1:]
                u = rng.poisson(mean_u).astype(float) if c > 0 else np.zeros(K - 1)
            if random_c:
                shape0, rate0 = priors.c_hyper
                link = float(np.sum(pi[:-1] * pi[1:])) if K > 1 else 0.0
                c = rng.gamma(shape0 + u.sum(), 1.0 / (rate0 + link))
            if i > ctrl.n_burn and (i - ctrl.n_burn) % ctrl.n_thin == 0:
                vec = np.concatenate([pi, u, [c]] if random_c else [pi, u])
                kept[row] = vec
                row += 1
        results.append(PosteriorChains(kept[:row], labels, dict(meta)))
    return results[0] if ctrl.n_chains == 1 else results


def survival_chains(
    chains: PosteriorChains,
    n_periods: int | None = None,
    point: str = "mean",
    alpha: float = 0.05,
) -> HazardCurve:
    """Per-iteration survival curves S(k) = prod_{j<=k} (1 - pi_j) and a
    summarized curve (posterior mean or median with quantile bounds)."""
    if point not in ("mean", "median"):
        raise ValueError("point must be 'mean' or 'median'")
    K = n_periods if n_periods is not None else int(chains.meta["n_periods"])
    pi_cols = np.column_stack([chains.column(f"pi[{k}]") for k in range(1, K + 1)])
    surv = np.cumprod(1.0 - pi_cols, axis=1)
    center = np.mean(surv, axis=0) if point == "mean" else np.median(surv, axis=0)
    lo = np.quantile(surv, alpha / 2, axis=0)
    hi = np.quantile(surv, 1 - alpha / 2, axis=0)
    grid = TimeGrid(np.arange(0, K + 1, dtype=float))
    values = np.minimum.accumulate(center)
    return HazardCurve(
        grid,
        values,
        kind="survival",
        lower=np.minimum(lo, values),
        upper=np.maximum(hi, values),
        samples=surv,
    )
