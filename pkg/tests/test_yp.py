"""Short/long-term hazard-ratio model tests."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from hazbench.data import SurvDataset
from hazbench.formula import parse_formula
from hazbench.simulate import SimConfig, generate_dataset
from hazbench.yp import _log_hr, fit_yp, hazard_ratio_at


def ph_two_group(rep, n=400, beta=-0.5, seed_base=55):
    rng = np.random.default_rng((seed_base, rep))
    g = (np.arange(n) % 2).astype(float)
    t = rng.exponential(1.0, n) / (0.5 * np.exp(beta * g))
    c = rng.uniform(0.5, 6.0, n)
    times = np.minimum(t, c)
    return SurvDataset(times, (t <= c).astype(int), g, ("grp",))


class TestFormula:
    def test_direct_evaluation(self):
        # theta1=0.5, theta2=2, S=0.5 -> 0.5*2 / (0.5 + 1.5*0.5) = 0.8
        hr = np.exp(_log_hr(np.log(0.5), np.log(2.0), np.array([0.5])))
        assert hr[0] == pytest.approx(0.8, abs=1e-12)

    def test_equal_thetas_collapse_to_ph(self):
        s = np.linspace(0.0, 1.0, 11)
        hr = np.exp(_log_hr(np.log(1.7), np.log(1.7), s))
        assert_allclose(hr, 1.7, atol=1e-12)

    def test_endpoints(self):
        assert np.exp(_log_hr(np.log(0.5), np.log(2.0), np.array([1.0])))[0] == pytest.approx(0.5)
        assert np.exp(_log_hr(np.log(0.5), np.log(2.0), np.array([0.0])))[0] == pytest.approx(2.0)


class TestFit:
    def test_hazard_ratio_at_zero_is_theta1(self):
        fit = fit_yp(ph_two_group(0), group_col="grp")
        hr0, lo, hi = hazard_ratio_at(fit, 0.0)
        assert hr0 == pytest.approx(fit.theta1, rel=1e-12)
        assert lo <= hr0 <= hi

    def test_hr_approaches_theta2_when_control_survival_dies(self):
        # all control subjects fail: S_C reaches 0 at the last event
        rng = np.random.default_rng(1)
        n = 200
        g = (np.arange(n) % 2).astype(float)
        t = rng.exponential(1.0, n) * np.where(g == 1, 1.6, 1.0)
        data = SurvDataset(t, np.ones(n, dtype=int), g, ("grp",))
        fit = fit_yp(data, group_col="grp")
        assert fit.s_control.values[-1] == 0.0
        assert fit.hr_values[-1] == pytest.approx(fit.theta2, rel=1e-9)

    def test_monotone_between_thetas(self):
        for rep in range(3):
            fit = fit_yp(ph_two_group(rep), group_col="grp")
            lo, hi = min(fit.theta1, fit.theta2), max(fit.theta1, fit.theta2)
            assert np.all(fit.hr_values >= lo - 1e-9)
            assert np.all(fit.hr_values <= hi + 1e-9)
            diffs = np.diff(fit.hr_values)
            assert np.all(diffs >= -1e-9) or np.all(diffs <= 1e-9)

    def test_crossing_design_sign_pattern(self):
        cfg = SimConfig(scenario="NPH", n=600, reps=5, seed=20260810)
        ok = 0
        for rep in range(5):
            data = generate_dataset(cfg, rep)
            males = data.subset(data.column("gender") == 0.0)
            fit = fit_yp(males, group_col="trt", n_band_resamples=100, seed=rep)
            ok += fit.theta1 < 1.0 < fit.theta2
        assert ok >= 4

    def test_pointwise_interval_inside_band(self):
        fit = fit_yp(ph_two_group(1), group_col="grp")
        assert np.all(fit.band_lo <= fit.pointwise_lo + 1e-12)
        assert np.all(fit.band_hi >= fit.pointwise_hi - 1e-12)

    def test_formula_entry_point(self):
        data = ph_two_group(2)
        f = parse_formula("Surv(time, event) ~ nph(grp)")
        fit = fit_yp(data, formula=f)
        assert fit.theta1 > 0

    def test_rejects_extra_covariates(self):
        data = ph_two_group(0)
        with pytest.raises(ValueError, match="exactly one"):
            fit_yp(data, formula=parse_formula("Surv(t, e) ~ a + nph(grp)"))

    def test_rejects_nonbinary_group(self):
        data = ph_two_group(0)
        bad = SurvDataset(data.times, data.events, np.arange(len(data), dtype=float), ("grp",))
        with pytest.raises(ValueError, match="two values"):
            fit_yp(bad, group_col="grp")

    def test_rejects_group_without_events(self):
        times = np.array([1.0, 2.0, 3.0, 4.0])
        events = np.array([1, 1, 0, 0])
        g = np.array([0.0, 0.0, 1.0, 1.0])
        with pytest.raises(ValueError, match="at least one event"):
            fit_yp(SurvDataset(times, events, g, ("grp",)), group_col="grp")

    def test_out_of_range_time(self):
        fit = fit_yp(ph_two_group(3), group_col="grp")
        with pytest.raises(ValueError, match="range"):
            hazard_ratio_at(fit, fit.hr.grid.stop + 1.0)


class TestPHProperties:
    def test_thetas_indistinguishable_under_ph(self):
        ok = 0
        for rep in range(10):
            fit = fit_yp(ph_two_group(rep), group_col="grp", n_band_resamples=100, seed=rep)
            se = np.sqrt(
                fit.cov_log_theta[0, 0]
                + fit.cov_log_theta[1, 1]
                - 2 * fit.cov_log_theta[0, 1]
            )
            ok += abs(np.log(fit.theta1) - np.log(fit.theta2)) < 2 * max(se, 1e-9)
        assert ok >= 9

    def test_relabel_product_near_one(self):
        for rep in range(5):
            data = ph_two_group(rep)
            flipped = SurvDataset(
                data.times, data.events, 1.0 - data.column("grp"), ("grp",)
            )
            fit = fit_yp(data, group_col="grp", n_band_resamples=100, seed=rep)
            fit2 = fit_yp(flipped, group_col="grp", n_band_resamples=100, seed=rep)
            t_mid = float(np.median(data.times[data.events == 1]))
            t_mid = min(t_mid, fit.hr.grid.stop, fit2.hr.grid.stop)
            hr = hazard_ratio_at(fit, t_mid)[0]
            hr_flip = hazard_ratio_at(fit2, t_mid)[0]
            assert 0.9 < hr * hr_flip < 1.1

    def test_deterministic_given_seed(self):
        a = fit_yp(ph_two_group(0), group_col="grp", seed=5)
        b = fit_yp(ph_two_group(0), group_col="grp", seed=5)
        assert np.array_equal(a.band_lo, b.band_lo)
        assert a.theta1 == b.theta1
