"""Bayesian multiresolution piecewise-constant hazard model.

The horizon is split into 2^M equal bins.  Per stratum, the total
cumulative hazard mass H is distributed over the bins by a dyadic tree of
split proportions: each node assigns a Beta-distributed fraction R of its
mass to its left child, so the bin increments are H times the product of
the split factors along the root-to-leaf path (and sum to H by
telescoping).  Covariates act proportionally through exp(x'beta), shared
across strata.  Each subject contributes

    [h_strat(T) exp(x'beta)]^delta * exp(-exp(x'beta) * Hcum_strat(T))

to the likelihood.  Sampling is Metropolis-within-Gibbs: random-walk
updates on logit(R), log(H), and beta, with Robbins-Monro proposal
adaptation during burn-in only (scales are frozen afterwards, so a chain
can be continued without perturbing its transition kernel).  Proposals
that produce a non-finite posterior are rejected rather than crashing the
run.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chains import MCMCControl, PosteriorChains, from_jsonable
from .data import HazardCurve, SurvDataset, TimeGrid
from .formula import ModelFormula

__all__ = [
    "MRHPriors",
    "MRHTree",
    "fit_mrh",
    "summarize_chains",
    "continue_chain",
    "MRHSummary",
]

_STATE_VERSION = 1


@dataclass(frozen=True)
class MRHPriors:
    """Hyperparameters: Beta(split_a, split_a) on every split, Gamma on the
    total mass, Normal(0, beta_var) on each PH effect."""

    split_a: float = 1.0
    h_shape: float = 0.01
    h_rate: float = 0.01
    beta_var: float = 25.0

    def __post_init__(self):
        if min(self.split_a, self.h_shape, self.h_rate, self.beta_var) <= 0:
            raise ValueError("all prior hyperparameters must be positive")


@dataclass(frozen=True)
class MRHTree:
    """Dyadic decomposition of a cumulative hazard mass.

    ``splits`` is level-major: level m (1..M) occupies the slice starting
    at 2^(m-1) - 1 and holds one left-child proportion per node.
    """

    m_levels: int
    h_total: float
    splits: np.ndarray

    def __post_init__(self):
        splits = np.asarray(self.splits, dtype=float)
        if splits.shape != (2**self.m_levels - 1,):
            raise ValueError("need 2^M - 1 split proportions")
        if self.h_total <= 0 or np.any(splits <= 0) or np.any(splits >= 1):
            raise ValueError("splits must lie in (0,1) and mass must be positive")
        object.__setattr__(self, "splits", splits)

    def increments(self) -> np.ndarray:
        """Per-bin hazard mass; sums to h_total by telescoping."""
        return self.h_total * _split_factors(self.m_levels, self.splits)


def _split_factors(m_levels: int, splits: np.ndarray) -> np.ndarray:
    n_bins = 2**m_levels
    out = np.ones(n_bins)
    for m in range(1, m_levels + 1):
        level = splits[2 ** (m - 1) - 1 : 2**m - 1]
        bins_per_child = 2 ** (m_levels - m)
        per_node = np.concatenate([level[:, None], (1.0 - level)[:, None]], axis=1)
        out *= np.repeat(per_node.ravel(), bins_per_child)
    return out


def _node_spans(m_levels: int):
    """(level, node) -> (lo, mid, hi) bin-index span of its children."""
    spans = []
    for m in range(1, m_levels + 1):
        width = 2 ** (m_levels - m + 1)
        for p in range(2 ** (m - 1)):
            lo = p * width
            spans.append((lo, lo + width // 2, lo + width))
    return spans


def _stratum_labels(data: SurvDataset, formula: ModelFormula | None):
    if formula is not None:
        if not formula.nph_terms:
            return ["all"], [np.ones(len(data), dtype=bool)]
        try:
            cols = [data.column(name) for name in formula.nph_terms]
        except KeyError:
            if data.strata is None:
                raise
            labels = data.stratum_labels()
            return [str(lab) for lab in labels], [
                data.strata == lab for lab in labels
            ]
        keys = list(zip(*[c.tolist() for c in cols]))
        labels = sorted(set(keys))
        names = [
            ",".join(f"{n}={v:g}" for n, v in zip(formula.nph_terms, key))
            for key in labels
        ]
        masks = [np.array([k == key for k in keys]) for key in labels]
        return names, masks
    if data.strata is not None:
        labels = data.stratum_labels()
        return [str(lab) for lab in labels], [data.strata == lab for lab in labels]
    return ["all"], [np.ones(len(data), dtype=bool)]


class _Stratum:
    """Sufficient statistics of one stratum on the bin grid."""

    def __init__(self, times, events, grid: TimeGrid, prior_only: bool):
        J = grid.n_bins
        lo, hi = grid.edges[:-1], grid.edges[1:]
        widths = grid.widths
        frac = np.clip((times[:, None] - lo[None, :]) / widths[None, :], 0.0, 1.0)
        self.W = frac  # (n, J): share of each bin's mass accrued per subject
        ev_bins = grid.bin_index(times[events == 1])
        self.D = np.zeros(J)
        np.add.at(self.D, ev_bins, 1.0)
        self.log_widths = np.log(widths)
        if prior_only:
            self.D = np.zeros(J)
            self.W = np.zeros_like(self.W)
        self.d_total = float(self.D.sum())

    def exposure_coeffs(self, risk: np.ndarray) -> np.ndarray:
        """c_j = sum_i exp(x_i'beta) * (bin-j mass share of subject i)."""
        return self.W.T @ risk


class _MRHSampler:
    def __init__(self, data, grid, m_levels, priors, X, strata_masks, prior_only):
        self.grid = grid
        self.m = m_levels
        self.n_bins = grid.n_bins
        self.priors = priors
        self.X = X
        self.q = X.shape[1]
        self.strata = [
            _Stratum(data.times[mask], data.events[mask], grid, prior_only)
            for mask in strata_masks
        ]
        self.X_by_stratum = [X[mask] for mask in strata_masks]
        self.spans = _node_spans(m_levels)
        self.n_splits = 2**m_levels - 1
        events_mask = data.events == 1
        if prior_only:
            self.score_x = np.zeros(self.q)
        else:
            self.score_x = X[events_mask].sum(axis=0) if self.q else np.zeros(0)
        # dynamic state, filled by init_state / load_state
        self.z = None
        self.log_h = None
        self.beta = None
        self.incr = None
        self.scales = None
        self.counts = None
        self.frozen = False
        self.post_burn = 0
        self.rng = None

    # -- state management ------------------------------------------------
    def n_slots(self) -> int:
        return len(self.strata) * (self.n_splits + 1) + self.q

    def init_state(self, rng, dispersed: bool):
        L = len(self.strata)
        if dispersed:
            a = self.priors.split_a
            self.z = [
                _logit(rng.beta(a, a, self.n_splits)) for _ in range(L)
            ]
            self.log_h = np.log(
                rng.gamma(self.priors.h_shape, 1.0 / self.priors.h_rate, L) + 1e-12
            )
            self.beta = rng.normal(0.0, np.sqrt(self.priors.beta_var), self.q)
        else:
            self.z = [np.zeros(self.n_splits) for _ in range(L)]
            crude = [
                max(s.d_total, 0.5) * self.n_bins / max(s.W.sum(), 1.0)
                for s in self.strata
            ]
            self.log_h = np.log(np.asarray(crude))
            self.beta = np.zeros(self.q)
        self.scales = np.zeros(self.n_slots())  # log proposal scales
        self.counts = np.zeros(self.n_slots())
        self.frozen = False
        self.post_burn = 0
        self.rng = rng
        self._sync()

    def _refresh(self, ell: int):
        # increments stay a pure function of (z, log_h) so that a restored
        # chain continues bitwise identically
        self.incr[ell] = np.exp(self.log_h[ell]) * _split_factors(
            self.m, _sigmoid(self.z[ell])
        )

    def _sync(self):
        self.incr = [
            np.exp(lh) * _split_factors(self.m, _sigmoid(z))
            for lh, z in zip(self.log_h, self.z)
        ]
        self.eta = [Xs @ self.beta if self.q else np.zeros(Xs.shape[0]) for Xs in self.X_by_stratum]
        self.risk = [np.exp(e) for e in self.eta]
        self.coeffs = [s.exposure_coeffs(r) for s, r in zip(self.strata, self.risk)]

    def save_state(self) -> dict:
        return {
            "version": _STATE_VERSION,
            "model": "mrh",
            "z": [z.copy() for z in self.z],
            "log_h": self.log_h.copy(),
            "beta": self.beta.copy(),
            "scales": self.scales.copy(),
            "counts": self.counts.copy(),
            "frozen": self.frozen,
            "post_burn": self.post_burn,
            "rng_state": self.rng.bit_generator.state,
        }

    def load_state(self, state: dict):
        if state.get("version") != _STATE_VERSION or state.get("model") != "mrh":
            raise ValueError("incompatible sampler state")
        self.z = [np.asarray(z, dtype=float).copy() for z in state["z"]]
        self.log_h = np.asarray(state["log_h"], dtype=float).copy()
        self.beta = np.asarray(state["beta"], dtype=float).copy()
        self.scales = np.asarray(state["scales"], dtype=float).copy()
        self.counts = np.asarray(state["counts"], dtype=float).copy()
        self.frozen = bool(state["frozen"])
        self.post_burn = int(state["post_burn"])
        self.rng = np.random.default_rng()
        self.rng.bit_generator.state = state["rng_state"]
        self._sync()

    # -- Metropolis pieces -------------------------------------------------
    def _adapt(self, slot: int, accepted: bool):
        if self.frozen:
            return
        self.counts[slot] += 1.0
        gamma = min(0.25, self.counts[slot] ** -0.5)
        self.scales[slot] += gamma * ((1.0 if accepted else 0.0) - 0.44)

    def _mh(self, slot: int, log_ratio_fun):
        step = np.exp(self.scales[slot]) * self.rng.standard_normal()
        log_u = np.log(self.rng.uniform())
        log_alpha, apply = log_ratio_fun(step)
        accepted = np.isfinite(log_alpha) and log_u < log_alpha
        if accepted:
            apply()
        self._adapt(slot, accepted)

    def split_log_ratio(self, ell: int, node: int, z_new: float) -> float:
        """Log posterior difference for moving split `node` of stratum
        `ell` from its current logit to z_new (symmetric proposal)."""
        z_old = self.z[ell][node]
        r_old, r_new = _sigmoid(z_old), _sigmoid(z_new)
        lo, mid, hi = self.spans[node]
        with np.errstate(divide="ignore", invalid="ignore"):
            a = self.priors.split_a
            prior = a * (
                np.log(r_new) + np.log1p(-r_new) - np.log(r_old) - np.log1p(-r_old)
            )
            strat = self.strata[ell]
            d_left = strat.D[lo:mid].sum()
            d_right = strat.D[mid:hi].sum()
            c_incr_left = float(self.coeffs[ell][lo:mid] @ self.incr[ell][lo:mid])
            c_incr_right = float(self.coeffs[ell][mid:hi] @ self.incr[ell][mid:hi])
            loglik = (
                d_left * (np.log(r_new) - np.log(r_old))
                + d_right * (np.log1p(-r_new) - np.log1p(-r_old))
                - (r_new / r_old - 1.0) * c_incr_left
                - ((1.0 - r_new) / (1.0 - r_old) - 1.0) * c_incr_right
            )
        return float(prior + loglik)

    def _update_split(self, ell: int, node: int, slot: int):
        def ratio(step):
            z_new = self.z[ell][node] + step

            def apply():
                self.z[ell][node] = z_new
                self._refresh(ell)

            return self.split_log_ratio(ell, node, z_new), apply

        self._mh(slot, ratio)

    def _update_mass(self, ell: int, slot: int):
        strat = self.strata[ell]

        def ratio(step):
            x_old = self.log_h[ell]
            x_new = x_old + step
            h_old, h_new = np.exp(x_old), np.exp(x_new)
            factors = _split_factors(self.m, _sigmoid(self.z[ell]))
            c_phi = float(self.coeffs[ell] @ factors)
            log_alpha = (self.priors.h_shape + strat.d_total) * (x_new - x_old) - (
                self.priors.h_rate + c_phi
            ) * (h_new - h_old)

            def apply():
                self.log_h[ell] = x_new
                self._refresh(ell)

            return float(log_alpha), apply

        self._mh(slot, ratio)

    def _update_beta(self, r: int, slot: int):
        exposures = [s.W @ inc for s, inc in zip(self.strata, self.incr)]

        def ratio(step):
            b_old = self.beta[r]
            b_new = b_old + step
            prior = -(b_new**2 - b_old**2) / (2.0 * self.priors.beta_var)
            loglik = (b_new - b_old) * self.score_x[r]
            new_eta = []
            for ell, Xs in enumerate(self.X_by_stratum):
                eta_new = self.eta[ell] + (b_new - b_old) * Xs[:, r]
                loglik -= float((np.exp(eta_new) - self.risk[ell]) @ exposures[ell])
                new_eta.append(eta_new)

            def apply():
                self.beta[r] = b_new
                self.eta = new_eta
                self.risk = [np.exp(e) for e in new_eta]
                self.coeffs = [
                    s.exposure_coeffs(rk) for s, rk in zip(self.strata, self.risk)
                ]

            return float(prior + loglik), apply

        self._mh(slot, ratio)

    def sweep(self):
        slot = 0
        for ell in range(len(self.strata)):
            for node in range(self.n_splits):
                self._update_split(ell, node, slot)
                slot += 1
            self._update_mass(ell, slot)
            slot += 1
        for r in range(self.q):
            self._update_beta(r, slot)
            slot += 1

    def param_vector(self) -> np.ndarray:
        parts = []
        for ell in range(len(self.strata)):
            parts.append([np.exp(self.log_h[ell])])
            parts.append(_sigmoid(self.z[ell]))
        parts.append(self.beta)
        return np.concatenate([np.atleast_1d(np.asarray(p, dtype=float)) for p in parts])

    def log_likelihood(self) -> float:
        """Full-data log likelihood at the current state (test hook)."""
        total = 0.0
        for ell, strat in enumerate(self.strata):
            with np.errstate(divide="ignore"):
                log_h_bins = np.log(self.incr[ell]) - strat.log_widths
            total += float(strat.D @ log_h_bins)
            total -= float(self.coeffs[ell] @ self.incr[ell])
        total += float(self.beta @ self.score_x) if self.q else 0.0
        return total

    def log_prior_split(self, ell: int, node: int) -> float:
        """Beta(a,a) log prior plus logit Jacobian at the current split."""
        r = _sigmoid(self.z[ell][node])
        return float(self.priors.split_a * (np.log(r) + np.log1p(-r)))


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-np.asarray(z, dtype=float)))


def _logit(p):
    p = np.asarray(p, dtype=float)
    return np.log(p) - np.log1p(-p)


def _chain_labels(stratum_names, m_levels, covariate_names):
    labels = []
    for name in stratum_names:
        labels.append(f"H[{name}]")
        for m in range(1, m_levels + 1):
            for p in range(2 ** (m - 1)):
                labels.append(f"R[{name}][m{m}p{p}]")
    labels.extend(f"beta[{c}]" for c in covariate_names)
    return tuple(labels)


def _build_sampler(meta):
    """Reconstruct the sampler machinery from chain metadata."""
    grid = TimeGrid(np.asarray(meta["grid_edges"], dtype=float))
    times = np.asarray(meta["times"], dtype=float)
    events = np.asarray(meta["events"])
    cov = np.asarray(meta["covariates"], dtype=float).reshape(times.size, -1)
    strata_codes = np.asarray(meta["strata_codes"])
    data = SurvDataset(times, events, cov)
    masks = [strata_codes == i for i in range(len(meta["strata"]))]
    priors = MRHPriors(**meta["priors"])
    return _MRHSampler(
        data, grid, int(meta["m_levels"]), priors, data.covariates, masks,
        bool(meta.get("prior_only", False)),
    )


def fit_mrh(
    data: SurvDataset,
    formula: ModelFormula | None,
    m_levels: int,
    priors: MRHPriors = MRHPriors(),
    ctrl: MCMCControl = MCMCControl(),
    horizon: float | None = None,
    prior_only: bool = False,
):
    """Sample the posterior of the multiresolution hazard model.

    NPH terms in the formula define the strata; PH terms enter through a
    shared beta.  The horizon defaults to the largest observed time and is
    divided into 2^m_levels equal bins.  Returns one PosteriorChains per
    chain (a bare PosteriorChains when ctrl.n_chains == 1); chain c uses
    the RNG stream (seed, c), chains beyond the first start from
    prior-dispersed states.
    """
    if horizon is None:
        horizon = float(data.times.max())
    if data.times.max() > horizon + 1e-12:
        raise ValueError("data beyond horizon gives a non-finite likelihood")
    grid = TimeGrid.regular(horizon, 2**m_levels)
    ph_terms = formula.ph_terms if formula is not None else ()
    X = data.columns(ph_terms)
    names, masks = _stratum_labels(data, formula)
    if not prior_only:
        for name, mask in zip(names, masks):
            if data.events[mask].sum() == 0:
                raise ValueError(f"stratum {name} has zero events")
    labels = _chain_labels(names, m_levels, ph_terms)
    meta = {
        "model": "mrh",
        "m_levels": m_levels,
        "grid_edges": grid.edges,
        "strata": list(names),
        "covariate_names": list(ph_terms),
        "priors": {
            "split_a": priors.split_a,
            "h_shape": priors.h_shape,
            "h_rate": priors.h_rate,
            "beta_var": priors.beta_var,
        },
        "control": {
            "n_iter": ctrl.n_iter,
            "n_burn": ctrl.n_burn,
            "n_thin": ctrl.n_thin,
            "seed": ctrl.seed,
        },
        "prior_only": prior_only,
        "times": data.times,
        "events": data.events,
        "covariates": X,
        "strata_codes": _mask_codes(masks),
    }
    results = []
    for c in range(ctrl.n_chains):
        sampler = _MRHSampler(data, grid, m_levels, priors, X, masks, prior_only)
        rng = np.random.default_rng((ctrl.seed, c))
        sampler.init_state(rng, dispersed=(c > 0))
        kept = np.empty((ctrl.n_kept, len(labels)))
        row = 0
        for i in range(1, ctrl.n_iter + 1):
            if i == ctrl.n_burn + 1:
                sampler.frozen = True
            sampler.sweep()
            if i > ctrl.n_burn:
                sampler.post_burn += 1
                if sampler.post_burn % ctrl.n_thin == 0 and row < kept.shape[0]:
                    kept[row] = sampler.param_vector()
                    row += 1
        results.append(
            PosteriorChains(kept[:row], labels, dict(meta), sampler.save_state())
        )
    return results[0] if ctrl.n_chains == 1 else results


def _mask_codes(masks):
    codes = np.zeros(masks[0].size, dtype=int)
    for i, mask in enumerate(masks):
        codes[mask] = i
    return codes


def continue_chain(chains: PosteriorChains, extra) -> PosteriorChains:
    """Append more iterations to a finished chain.

    ``extra`` is an iteration count or an MCMCControl whose n_iter is
    used.  No burn-in is repeated and proposal scales stay frozen; with
    the preserved RNG state the result is bitwise what an uninterrupted
    longer run would have produced.
    """
    if chains.state is None:
        raise ValueError("chain carries no sampler state")
    n_extra = extra.n_iter if isinstance(extra, MCMCControl) else int(extra)
    if n_extra < 0:
        raise ValueError("extra iterations must be >= 0")
    sampler = _build_sampler(from_jsonable(chains.meta))
    sampler.load_state(from_jsonable(chains.state))
    if not sampler.frozen:
        raise ValueError("cannot continue a chain that never left burn-in")
    thin = int(chains.meta["control"]["n_thin"])
    new_rows = []
    for _ in range(n_extra):
        sampler.sweep()
        sampler.post_burn += 1
        if sampler.post_burn % thin == 0:
            new_rows.append(sampler.param_vector())
    samples = (
        np.vstack([chains.samples] + [np.asarray(new_rows)])
        if new_rows
        else chains.samples.copy()
    )
    return PosteriorChains(samples, chains.labels, dict(chains.meta), sampler.save_state())


@dataclass
class MRHSummary:
    """Posterior summaries on the bin grid."""

    curves: dict[str, HazardCurve]
    log_ratios: dict[str, HazardCurve]
    beta: dict[str, tuple[float, float, float]]


def _stratum_hazard_samples(chains: PosteriorChains, name: str, grid: TimeGrid, m: int):
    h = chains.column(f"H[{name}]")
    splits = chains.columns(f"R[{name}]")
    n_kept, n_bins = h.size, grid.n_bins
    factors = np.ones((n_kept, n_bins))
    for lvl in range(1, m + 1):
        level = splits[:, 2 ** (lvl - 1) - 1 : 2**lvl - 1]
        bins_per_child = 2 ** (m - lvl)
        per_node = np.stack([level, 1.0 - level], axis=2).reshape(n_kept, -1)
        factors *= np.repeat(per_node, bins_per_child, axis=1)
    return h[:, None] * factors / grid.widths[None, :]


def summarize_chains(
    chains: PosteriorChains, alpha: float = 0.05, grid: TimeGrid | None = None
) -> MRHSummary:
    """Posterior medians and (alpha/2, 1-alpha/2) intervals.

    Hazard curves carry their per-iteration samples; log-ratio curves
    (each stratum vs the first) are computed per-iteration and then
    quantiled, not by bound arithmetic.
    """
    if chains.n_kept == 0:
        raise ValueError("empty chains")
    meta = from_jsonable(chains.meta)
    chain_grid = TimeGrid(np.asarray(meta["grid_edges"], dtype=float))
    if grid is not None and grid != chain_grid:
        raise ValueError("grid does not match the chain bins")
    m = int(meta["m_levels"])
    names = list(meta["strata"])
    curves = {}
    samples = {}
    for name in names:
        hs = _stratum_hazard_samples(chains, name, chain_grid, m)
        qs = np.quantile(hs, [alpha / 2, 0.5, 1 - alpha / 2], axis=0)
        curves[name] = HazardCurve(
            chain_grid, qs[1], kind="hazard", lower=qs[0], upper=qs[2], samples=hs
        )
        samples[name] = hs
    log_ratios = {}
    for name in names[1:]:
        lr = np.log(samples[name]) - np.log(samples[names[0]])
        qs = np.quantile(lr, [alpha / 2, 0.5, 1 - alpha / 2], axis=0)
        log_ratios[name] = HazardCurve(
            chain_grid,
            qs[1],
            kind="log_ratio",
            lower=np.minimum(qs[0], qs[1]),
            upper=np.maximum(qs[2], qs[1]),
            samples=lr,
        )
    beta = {}
    for cname in meta["covariate_names"]:
        col = chains.column(f"beta[{cname}]")
        lo, med, hi = np.quantile(col, [alpha / 2, 0.5, 1 - alpha / 2])
        beta[cname] = (float(med), float(lo), float(hi))
    return MRHSummary(curves, log_ratios, beta)
