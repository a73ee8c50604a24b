"""Multiresolution Bayesian hazard model tests.

The one-bin model is conjugate: with a Gamma(a, b) prior on the total
mass H and horizon-normalized exposure R, the posterior is exactly
Gamma(a + d, b + R).  That closed form is the primary sampler oracle.
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import stats

from hazbench.chains import MCMCControl, gelman_rubin
from hazbench.data import SurvDataset, TimeGrid, bin_occurrence_exposure, piecewise_mle
from hazbench.formula import parse_formula
from hazbench.mrh import (
    MRHPriors,
    MRHTree,
    _MRHSampler,
    _stratum_labels,
    continue_chain,
    fit_mrh,
    summarize_chains,
)
from hazbench.simulate import SimConfig, generate_dataset


def censored_data(seed=10, n=120, scale=1.0, cens=(0.5, 3.0)):
    rng = np.random.default_rng(seed)
    t = rng.exponential(scale, n)
    c = rng.uniform(*cens, n)
    return SurvDataset(np.minimum(t, c), (t <= c).astype(int))


def batch_se(x, n_batches=40):
    """Batch-means Monte Carlo standard error for a chain mean."""
    m = x.size // n_batches
    means = x[: m * n_batches].reshape(n_batches, m).mean(axis=1)
    return means.std(ddof=1) / np.sqrt(n_batches)


def quantile_se(x, q, n_batches=20):
    m = x.size // n_batches
    qs = np.quantile(x[: m * n_batches].reshape(n_batches, m), q, axis=1)
    return qs.std(ddof=1) / np.sqrt(n_batches)


class TestTree:
    def test_increments_sum_to_total(self):
        rng = np.random.default_rng(0)
        for m in (1, 2, 5):
            tree = MRHTree(m, 2.7, rng.uniform(0.1, 0.9, 2**m - 1))
            incr = tree.increments()
            assert np.all(incr > 0)
            assert incr.sum() == pytest.approx(2.7, abs=1e-12)

    def test_split_assigns_left_fraction(self):
        tree = MRHTree(1, 1.0, np.array([0.3]))
        assert_allclose(tree.increments(), [0.3, 0.7])

    def test_validation(self):
        with pytest.raises(ValueError):
            MRHTree(2, 1.0, np.array([0.5]))
        with pytest.raises(ValueError):
            MRHTree(1, 1.0, np.array([1.0]))


class TestConjugateOracle:
    def test_single_bin_matches_gamma_posterior(self):
        rng = np.random.default_rng(1)
        n = 60
        times = rng.uniform(0.01, 1.0, n)
        events = rng.integers(0, 2, n)
        data = SurvDataset(times, events)
        priors = MRHPriors(h_shape=2.0, h_rate=1.0)
        ctrl = MCMCControl(n_iter=21000, n_burn=1000, seed=7)
        chains = fit_mrh(data, None, 0, priors, ctrl, horizon=1.0)
        h = chains.column("H[all]")
        d, r = events.sum(), times.sum() / 1.0
        post = stats.gamma(2.0 + d, scale=1.0 / (1.0 + r))
        assert abs(h.mean() - post.mean()) < 2 * batch_se(h)
        for q in (0.025, 0.975):
            assert abs(np.quantile(h, q) - post.ppf(q)) < 2 * quantile_se(h, q)

    def test_m5_gives_32_bins(self):
        data = censored_data()
        chains = fit_mrh(data, None, 5, ctrl=MCMCControl(n_iter=60, n_burn=10, seed=1))
        s = summarize_chains(chains)
        assert s.curves["all"].grid.n_bins == 32

    def test_prior_only_split_means(self):
        data = censored_data()
        ctrl = MCMCControl(n_iter=9000, n_burn=1000, seed=3)
        chains = fit_mrh(data, None, 2, MRHPriors(split_a=1.0), ctrl, prior_only=True)
        for lab in chains.labels:
            if lab.startswith("R["):
                col = chains.column(lab)
                assert abs(col.mean() - 0.5) < 2 * batch_se(col)


class TestKernelArithmetic:
    def sampler(self):
        data = censored_data(seed=5)
        names, masks = _stratum_labels(data, None)
        s = _MRHSampler(
            data, TimeGrid.regular(3.0, 8), 3, MRHPriors(), data.columns(()), masks, False
        )
        s.init_state(np.random.default_rng(2), dispersed=False)
        return s

    def test_detailed_balance_antisymmetry(self):
        s = self.sampler()
        rng = np.random.default_rng(9)
        for _ in range(25):
            node = int(rng.integers(0, s.n_splits))
            z_old = float(s.z[0][node])
            z_new = float(rng.normal(scale=2.0))
            fwd = s.split_log_ratio(0, node, z_new)
            s_y = self.sampler()
            s_y.z[0][node] = z_new
            s_y._sync()
            bwd = s_y.split_log_ratio(0, node, z_old)
            assert fwd == pytest.approx(-bwd, abs=1e-9)

    def test_delta_matches_full_log_posterior_difference(self):
        s = self.sampler()
        rng = np.random.default_rng(11)
        for _ in range(10):
            node = int(rng.integers(0, s.n_splits))
            z_new = float(rng.normal(scale=1.5))
            delta = s.split_log_ratio(0, node, z_new)
            base = s.log_likelihood() + s.log_prior_split(0, node)
            s_y = self.sampler()
            s_y.z[0][node] = z_new
            s_y._sync()
            full = s_y.log_likelihood() + s_y.log_prior_split(0, node)
            assert delta == pytest.approx(full - base, abs=1e-9)

    def test_reconstructed_increments_sum_to_mass(self):
        data = censored_data(seed=6)
        chains = fit_mrh(
            data, None, 4, ctrl=MCMCControl(n_iter=300, n_burn=50, seed=4)
        )
        s = summarize_chains(chains)
        hs = s.curves["all"].samples * s.curves["all"].grid.widths[None, :]
        assert_allclose(hs.sum(axis=1), chains.column("H[all]"), atol=1e-12)


class TestPosteriorBehavior:
    def test_flattening_priors_approach_piecewise_mle(self):
        rng = np.random.default_rng(9)
        t = rng.exponential(1.0, 600)
        data = SurvDataset(np.maximum(np.minimum(t, 2.5), 1e-8), (t <= 2.5).astype(int))
        grid = TimeGrid.regular(2.5, 8)
        mle = piecewise_mle(bin_occurrence_exposure(data, grid)).values
        ctrl = MCMCControl(n_iter=6000, n_burn=1500, seed=2)
        prev = np.inf
        for a in (200.0, 20.0, 2.0):
            chains = fit_mrh(data, None, 3, MRHPriors(split_a=a), ctrl, horizon=2.5)
            est = summarize_chains(chains).curves["all"].values
            dist = float(np.max(np.abs(est - mle)))
            assert dist <= prev
            prev = dist

    def test_ph_beta_recovery_single_rep(self):
        cfg = SimConfig(scenario="PH", n=1000, reps=1, seed=77)
        data = generate_dataset(cfg, 0)
        f = parse_formula("Surv(time, event) ~ trt")
        ctrl = MCMCControl(n_iter=4000, n_burn=1000, seed=5)
        chains = fit_mrh(data, f, 5, MRHPriors(), ctrl, horizon=10.0)
        med, lo, hi = summarize_chains(chains).beta["trt"]
        assert lo < -0.5 < hi
        assert abs(med - (-0.5)) < 0.4


class TestSummaries:
    def test_degenerate_chain_bounds_collapse(self):
        data = censored_data(seed=7)
        chains = fit_mrh(data, None, 2, ctrl=MCMCControl(n_iter=40, n_burn=10, seed=1))
        frozen = chains.samples[:1].repeat(50, axis=0)
        from hazbench.chains import PosteriorChains

        degenerate = PosteriorChains(frozen, chains.labels, chains.meta)
        s = summarize_chains(degenerate)
        c = s.curves["all"]
        assert_allclose(c.lower, c.values, atol=1e-15)
        assert_allclose(c.upper, c.values, atol=1e-15)

    def test_identical_strata_log_ratio_zero(self):
        data = censored_data(seed=8)
        strata = np.repeat(["g1", "g2"], len(data))
        twin = SurvDataset(
            np.tile(data.times, 2), np.tile(data.events, 2), strata=strata
        )
        chains = fit_mrh(twin, None, 2, ctrl=MCMCControl(n_iter=60, n_burn=10, seed=2))
        # force both strata's columns identical, then the ratio must vanish
        idx1 = [i for i, l in enumerate(chains.labels) if "[g1]" in l]
        idx2 = [i for i, l in enumerate(chains.labels) if "[g2]" in l]
        chains.samples[:, idx2] = chains.samples[:, idx1]
        s = summarize_chains(chains)
        lr = s.log_ratios["g2"]
        assert_allclose(lr.values, 0.0, atol=1e-12)
        assert_allclose(lr.upper - lr.lower, 0.0, atol=1e-12)

    def test_one_bin_interval_matches_gamma_quantiles(self):
        rng = np.random.default_rng(13)
        times = rng.uniform(0.01, 1.0, 80)
        events = rng.integers(0, 2, 80)
        data = SurvDataset(times, events)
        ctrl = MCMCControl(n_iter=21000, n_burn=1000, seed=3)
        chains = fit_mrh(data, None, 0, MRHPriors(h_shape=1.0, h_rate=1.0), ctrl, horizon=1.0)
        s = summarize_chains(chains, alpha=0.05)
        post = stats.gamma(1.0 + events.sum(), scale=1.0 / (1.0 + times.sum()))
        h = chains.column("H[all]")
        # hazard curve is H per unit time on one bin of width 1
        assert s.curves["all"].lower[0] == pytest.approx(
            post.ppf(0.025), abs=3 * quantile_se(h, 0.025)
        )
        assert s.curves["all"].upper[0] == pytest.approx(
            post.ppf(0.975), abs=3 * quantile_se(h, 0.975)
        )


class TestContinuation:
    def test_bitwise_continuation(self):
        data = censored_data(seed=10)
        full = fit_mrh(data, None, 2, ctrl=MCMCControl(n_iter=1200, n_burn=200, seed=42), horizon=3.0)
        part = fit_mrh(data, None, 2, ctrl=MCMCControl(n_iter=700, n_burn=200, seed=42), horizon=3.0)
        cont = continue_chain(part, 500)
        assert cont.n_kept == full.n_kept
        assert np.array_equal(cont.samples, full.samples)

    def test_zero_extra_is_identity(self):
        data = censored_data(seed=10)
        part = fit_mrh(data, None, 2, ctrl=MCMCControl(n_iter=300, n_burn=100, seed=1), horizon=3.0)
        cont = continue_chain(part, 0)
        assert np.array_equal(cont.samples, part.samples)

    def test_no_readaptation_after_continue(self):
        data = censored_data(seed=10)
        part = fit_mrh(data, None, 2, ctrl=MCMCControl(n_iter=300, n_burn=100, seed=1), horizon=3.0)
        cont = continue_chain(part, 200)
        assert cont.state["frozen"] is True
        assert_allclose(
            np.asarray(cont.state["scales"]), np.asarray(part.state["scales"])
        )

    def test_incompatible_state_rejected(self):
        data = censored_data(seed=10)
        part = fit_mrh(data, None, 2, ctrl=MCMCControl(n_iter=200, n_burn=50, seed=1), horizon=3.0)
        part.state["version"] = 99
        with pytest.raises(ValueError, match="incompatible"):
            continue_chain(part, 10)

    def test_thinned_continuation_matches(self):
        data = censored_data(seed=11)
        full = fit_mrh(data, None, 1, ctrl=MCMCControl(n_iter=1000, n_burn=200, n_thin=4, seed=6), horizon=3.0)
        part = fit_mrh(data, None, 1, ctrl=MCMCControl(n_iter=600, n_burn=200, n_thin=4, seed=6), horizon=3.0)
        cont = continue_chain(part, 400)
        assert np.array_equal(cont.samples, full.samples)


class TestDiagnosticsAndErrors:
    def test_dispersed_short_chains_flag_nonconvergence(self):
        data = censored_data(seed=10)
        chains = fit_mrh(
            data, None, 2, ctrl=MCMCControl(n_iter=11, n_burn=1, n_chains=3, seed=7), horizon=3.0
        )
        assert gelman_rubin(chains)["H[all]"] > 1.1

    def test_long_run_multiple_chains_converge(self):
        data = censored_data(seed=10)
        chains = fit_mrh(
            data, None, 1,
            ctrl=MCMCControl(n_iter=6000, n_burn=2000, n_chains=2, seed=7),
            horizon=3.0,
        )
        stats_by_param = gelman_rubin(chains)
        finite = [v for v in stats_by_param.values() if np.isfinite(v)]
        assert max(finite) < 1.1

    def test_zero_event_stratum_rejected(self):
        times = np.array([1.0, 2.0, 1.5, 2.5])
        events = np.array([1, 1, 0, 0])
        grp = np.array([0.0, 0.0, 1.0, 1.0])
        data = SurvDataset(times, events, grp, ("grp",))
        f = parse_formula("Surv(time, event) ~ nph(grp)")
        with pytest.raises(ValueError, match="zero events"):
            fit_mrh(data, f, 2)

    def test_data_beyond_horizon_rejected(self):
        data = censored_data(seed=10)
        with pytest.raises(ValueError, match="horizon"):
            fit_mrh(data, None, 2, horizon=float(data.times.max()) / 2)

    def test_nph_strata_from_formula(self):
        cfg = SimConfig(scenario="NPH", n=200, reps=1, seed=31)
        data = generate_dataset(cfg, 0)
        f = parse_formula("Surv(time, event) ~ const(gender) + nph(trt)")
        chains = fit_mrh(data, f, 2, ctrl=MCMCControl(n_iter=80, n_burn=20, seed=2), horizon=10.0)
        s = summarize_chains(chains)
        assert set(s.curves) == {"trt=0", "trt=1"}
        assert set(s.log_ratios) == {"trt=1"}
        assert "gender" in s.beta


class TestChainShape:
    def test_row_count_and_labels(self):
        data = censored_data(seed=12)
        ctrl = MCMCControl(n_iter=1000, n_burn=100, n_thin=7, seed=1)
        chains = fit_mrh(data, None, 2, ctrl=ctrl, horizon=3.0)
        assert chains.n_kept == (1000 - 100) // 7 == ctrl.n_kept
        assert len(chains.labels) == chains.samples.shape[1]
        # every column labeled: H, three splits for M=2
        assert chains.labels[0] == "H[all]"
        assert sum(1 for lab in chains.labels if lab.startswith("R[")) == 3
