"""Chain bookkeeping, diagnostics, and persistence tests."""

import numpy as np
import pytest

from hazbench.chains import (
    MCMCControl,
    PosteriorChains,
    autocorrelation,
    gelman_rubin,
    load_chains,
    save_chains,
)


def make_chain(rng, n=500, shift=0.0):
    samples = np.column_stack([rng.normal(shift, 1.0, n), rng.normal(2.0, 0.5, n)])
    return PosteriorChains(samples, ("a", "b"))


class TestControl:
    def test_burn_shorter_than_run(self):
        with pytest.raises(ValueError):
            MCMCControl(n_iter=100, n_burn=100)

    def test_thin_positive(self):
        with pytest.raises(ValueError):
            MCMCControl(n_iter=100, n_burn=10, n_thin=0)

    def test_kept_count(self):
        assert MCMCControl(n_iter=1000, n_burn=100, n_thin=7).n_kept == (900 // 7)


class TestGelmanRubin:
    def test_identical_chains_exactly_one(self):
        rng = np.random.default_rng(0)
        c = make_chain(rng)
        twin = PosteriorChains(c.samples.copy(), c.labels)
        stats = gelman_rubin([c, twin])
        assert stats["a"] == 1.0
        assert stats["b"] == 1.0

    def test_stationary_sampler_below_threshold(self):
        rng = np.random.default_rng(1)
        chains = [make_chain(rng, n=2000) for _ in range(3)]
        assert all(v < 1.1 for v in gelman_rubin(chains).values())

    def test_shifted_chains_flag(self):
        rng = np.random.default_rng(2)
        chains = [make_chain(rng, n=100, shift=s) for s in (0.0, 5.0)]
        assert gelman_rubin(chains)["a"] > 1.1

    def test_constant_parameter_is_nan(self):
        a = PosteriorChains(np.ones((50, 1)), ("c",))
        b = PosteriorChains(np.ones((50, 1)), ("c",))
        assert np.isnan(gelman_rubin([a, b])["c"])

    def test_single_chain_rejected(self):
        with pytest.raises(ValueError):
            gelman_rubin([make_chain(np.random.default_rng(3))])


class TestAutocorrelation:
    def test_iid_near_zero(self):
        x = np.random.default_rng(4).normal(size=20000)
        assert np.all(np.abs(autocorrelation(x, 5)) < 0.05)

    def test_ar1_positive(self):
        rng = np.random.default_rng(5)
        x = np.zeros(5000)
        for i in range(1, x.size):
            x[i] = 0.9 * x[i - 1] + rng.normal()
        ac = autocorrelation(x, 3)
        assert ac[0] > 0.8 and ac[0] > ac[1] > ac[2]


class TestPersistence:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(6)
        chains = [make_chain(rng), make_chain(rng)]
        chains[0].meta = {"model": "demo", "grid": np.array([0.0, 1.0])}
        save_chains(tmp_path, chains, {"seed": 7, "n_iter": 500})
        loaded, header = load_chains(tmp_path)
        assert header["seed"] == "7"
        assert len(loaded) == 2
        assert loaded[0].labels == ("a", "b")
        assert np.array_equal(loaded[0].samples, chains[0].samples)
        assert np.array_equal(loaded[1].samples, chains[1].samples)

    def test_missing_header_detected(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_chains(tmp_path)

    def test_column_lookup(self):
        c = make_chain(np.random.default_rng(8))
        assert c.column("b").shape == (500,)
        with pytest.raises(KeyError):
            c.column("zzz")
