"""CSV IO, synthetic datasets, and command-line interface tests."""

import os

import numpy as np
import pytest

from hazbench.cli import main
from hazbench.data import HazardCurve, TimeGrid
from hazbench.datasets import make_cancer_like, make_trace_like
from hazbench.formula import parse_formula
from hazbench.io import (
    InputError,
    dataset_summary,
    read_curve,
    read_dataset,
    write_curve,
    write_dataset,
)


class TestDatasets:
    def test_cancer_like_summary_statistics(self):
        data = make_cancer_like()
        s = dataset_summary(data)
        assert s["n"] == 228
        assert s["censored_pct"] == 28
        assert s["median_event_time"] == 256.0
        assert s["min_time"] == 5.0 and s["max_time"] == 1022.0

    def test_cancer_like_covariates(self):
        data = make_cancer_like()
        assert data.covariate_names == ("sex", "wl_q2", "wl_q3", "wl_q4", "ecog_0", "ecog_23")
        # both sexes must carry events so the two-group fits work
        sex = data.column("sex")
        assert data.events[sex == 0].sum() > 5
        assert data.events[sex == 1].sum() > 5

    def test_trace_like_shape(self):
        data = make_trace_like()
        assert len(data) == 1877
        assert 0.35 < 1.0 - data.events.mean() < 0.65
        # all four CHF x VF cells occupied with events
        chf, vf = data.column("chf"), data.column("vf")
        for a in (0, 1):
            for b in (0, 1):
                cell = (chf == a) & (vf == b)
                assert data.events[cell].sum() >= 1


class TestIO:
    def test_dataset_round_trip(self, tmp_path):
        data = make_cancer_like()
        path = tmp_path / "d.csv"
        write_dataset(data, path)
        back = read_dataset(
            path, parse_formula("Surv(time, event) ~ sex + wl_q2"))
        assert np.array_equal(back.times, data.times)
        assert np.array_equal(back.events, data.events)
        assert np.array_equal(back.column("sex"), data.column("sex"))

    def test_curve_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        vals = rng.uniform(0.01, 1.0, 8)
        curve = HazardCurve(
            TimeGrid(np.linspace(0.0, 3.0, 9)), vals,
            lower=vals * 0.9, upper=vals * 1.1,
        )
        path = tmp_path / "c.csv"
        write_curve(curve, path)
        back = read_curve(path)
        assert np.array_equal(back.values, curve.values)
        assert np.array_equal(back.lower, curve.lower)
        assert np.array_equal(back.grid.edges, curve.grid.edges)
        assert back.kind == "hazard"

    def test_missing_column_reported_by_name(self, tmp_path):
        path = tmp_path / "d.csv"
        write_dataset(make_cancer_like(), path)
        with pytest.raises(InputError, match="delta"):
            read_dataset(path, parse_formula("Surv(time, delta) ~ sex"))

    def test_string_factor_expansion(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text(
            "time,event,arm\n1.0,1,a\n2.0,0,b\n3.0,1,c\n4.0,1,a\n"
        )
        data = read_dataset(path, parse_formula("Surv(time, event) ~ arm"))
        assert data.covariate_names == ("arm.b", "arm.c")
        assert np.array_equal(data.column("arm.b"), [0.0, 1.0, 0.0, 0.0])

    def test_nph_column_builds_strata(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("time,event,grp\n1.0,1,0\n2.0,0,1\n3.0,1,0\n4.0,1,1\n")
        data = read_dataset(path, parse_formula("Surv(time, event) ~ nph(grp)"))
        assert data.strata is not None
        assert len(set(data.strata.tolist())) == 2


class TestCLI:
    def write_cancer(self, tmp_path):
        path = tmp_path / "cancer.csv"
        write_dataset(make_cancer_like(), path)
        return str(path)

    def test_fit_kernel_and_outputs(self, tmp_path, capsys):
        data = self.write_cancer(tmp_path)
        out = tmp_path / "out"
        rc = main([
            "fit", "--data", data, "--model", "Surv(time, event) ~ nph(sex)",
            "--estimator", "kernel", "--bw", "120", "--out", str(out), "--plots",
        ])
        assert rc == 0
        printed = capsys.readouterr().out
        assert "n=228" in printed and "censored=28%" in printed
        assert "median_event_time=256" in printed
        assert (out / "hazard_sex_0.csv").exists()
        assert (out / "hazard_sex_1.csv").exists()
        assert (out / "log_ratio_sex_1_vs_sex_0.csv").exists()
        assert (out / "manifest.txt").exists()
        assert (out / "curves.svg").exists()

    def test_missing_column_exit_2(self, tmp_path):
        data = self.write_cancer(tmp_path)
        rc = main([
            "fit", "--data", data, "--model", "Surv(time, delta) ~ sex",
            "--estimator", "spline", "--out", str(tmp_path / "o"),
        ])
        assert rc == 2

    def test_bad_formula_exit_2(self, tmp_path):
        data = self.write_cancer(tmp_path)
        rc = main([
            "fit", "--data", data, "--model", "Surv(time, event) ~",
            "--estimator", "spline", "--out", str(tmp_path / "o"),
        ])
        assert rc == 2

    def test_estimator_failure_exit_3(self, tmp_path):
        path = tmp_path / "tiny.csv"
        path.write_text("time,event,grp\n1.0,1,0\n2.0,1,0\n2.5,0,1\n3.0,0,1\n")
        rc = main([
            "fit", "--data", str(path), "--model", "Surv(time, event) ~ nph(grp)",
            "--estimator", "yp", "--out", str(tmp_path / "o"),
        ])
        assert rc == 3

    def test_simulate_smoke_and_determinism(self, tmp_path):
        out1, out2 = tmp_path / "s1", tmp_path / "s2"
        for out in (out1, out2):
            rc = main([
                "simulate", "--scenario", "PH", "--n", "4", "--seed", "3",
                "--out", str(out),
            ])
            assert rc == 0
        rows = (out1 / "dataset.csv").read_text().strip().splitlines()
        assert len(rows) == 5  # header + 4 records
        assert (out1 / "dataset.csv").read_bytes() == (out2 / "dataset.csv").read_bytes()
        assert (out1 / "truth.csv").read_bytes() == (out2 / "truth.csv").read_bytes()

    def test_simulate_default_censoring(self, tmp_path):
        out = tmp_path / "sim"
        rc = main(["simulate", "--n", "1000", "--seed", "6", "--out", str(out)])
        assert rc == 0
        manifest = dict(
            line.split("=", 1) for line in (out / "manifest.txt").read_text().splitlines()
        )
        assert abs(float(manifest["censoring"]) - 0.63) < 0.05

    def test_bench_smoke(self, tmp_path):
        out = tmp_path / "bench"
        rc = main([
            "bench", "--scenario", "PH", "--n", "120", "--reps", "2",
            "--estimators", "kernel,spline", "--seed", "5", "--out", str(out),
            "--plots",
        ])
        assert rc == 0
        metrics = (out / "metrics.csv").read_text().splitlines()
        assert metrics[0] == "estimator,bin_index,t_mid,bias,rmse"
        assert len(metrics) == 1 + 2 * 32
        assert (out / "integrated.csv").exists()
        assert (out / "cloud_kernel.svg").exists()
        assert (out / "cloud_spline.svg").exists()

    def test_bench_deterministic_across_threads(self, tmp_path):
        outs = []
        for name, threads in (("a", "1"), ("b", "8")):
            out = tmp_path / name
            rc = main([
                "bench", "--n", "120", "--reps", "3", "--estimators", "kernel",
                "--seed", "7", "--threads", threads, "--out", str(out),
            ])
            assert rc == 0
            outs.append(out)
        assert (outs[0] / "metrics.csv").read_bytes() == (outs[1] / "metrics.csv").read_bytes()
        assert (outs[0] / "integrated.csv").read_bytes() == (outs[1] / "integrated.csv").read_bytes()

    def test_diagnose_clear_and_flagged(self, tmp_path, capsys):
        data = self.write_cancer(tmp_path)
        out = tmp_path / "mrh"
        rc = main([
            "fit", "--data", data, "--model", "Surv(time, event) ~ sex",
            "--estimator", "mrh", "--m", "2", "--iters", "400", "--burn", "100",
            "--chains", "2", "--seed", "9", "--out", str(out),
        ])
        assert rc == 0
        rc = main(["diagnose", "--chains", str(out / "chains")])
        assert rc == 0
        text = capsys.readouterr().out
        assert "PSRF" in text

    def test_diagnose_missing_header_exit_2(self, tmp_path):
        rc = main(["diagnose", "--chains", str(tmp_path)])
        assert rc == 2

    def test_config_file_and_flag_precedence(self, tmp_path):
        cfg = tmp_path / "conf.txt"
        cfg.write_text("n=4\nseed=11\nscenario=PH\n")
        out1 = tmp_path / "c1"
        rc = main(["simulate", "--config", str(cfg), "--out", str(out1)])
        assert rc == 0
        rows = (out1 / "dataset.csv").read_text().strip().splitlines()
        assert len(rows) == 5
        # explicit flag beats the config file
        out2 = tmp_path / "c2"
        rc = main(["simulate", "--config", str(cfg), "--n", "6", "--out", str(out2)])
        assert rc == 0
        assert len((out2 / "dataset.csv").read_text().strip().splitlines()) == 7

    def test_env_seed_fallback(self, tmp_path):
        old = os.environ.get("HAZBENCH_SEED")
        os.environ["HAZBENCH_SEED"] = "123"
        try:
            out1, out2 = tmp_path / "e1", tmp_path / "e2"
            main(["simulate", "--n", "4", "--out", str(out1)])
            main(["simulate", "--n", "4", "--seed", "123", "--out", str(out2)])
            assert (out1 / "dataset.csv").read_bytes() == (out2 / "dataset.csv").read_bytes()
        finally:
            if old is None:
                os.environ.pop("HAZBENCH_SEED")
            else:
                os.environ["HAZBENCH_SEED"] = old

    def test_fit_rerun_byte_identical(self, tmp_path):
        data = self.write_cancer(tmp_path)
        outs = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            rc = main([
                "fit", "--data", data, "--model", "Surv(time, event) ~ sex",
                "--estimator", "spline", "--seed", "2", "--out", str(out),
            ])
            assert rc == 0
            outs.append(out)
        for fname in ("hazard_average_subject.csv", "hazard_baseline.csv", "coefficients.csv"):
            assert (outs[0] / fname).read_bytes() == (outs[1] / fname).read_bytes()


class TestWorkflows:
    def test_trace_style_mrh_four_stratum_curves(self, tmp_path):
        from hazbench.datasets import make_trace_like

        path = tmp_path / "trace.csv"
        write_dataset(make_trace_like(), path)
        out = tmp_path / "out"
        rc = main([
            "fit", "--data", str(path),
            "--model", "Surv(time, event) ~ const(diabetes) + nph(chf) + nph(vf)",
            "--estimator", "mrh", "--m", "2", "--iters", "200", "--burn", "50",
            "--seed", "4", "--out", str(out),
        ])
        assert rc == 0
        curves = sorted(f.name for f in out.glob("hazard_*.csv"))
        assert curves == [
            "hazard_chf_0_vf_0.csv",
            "hazard_chf_0_vf_1.csv",
            "hazard_chf_1_vf_0.csv",
            "hazard_chf_1_vf_1.csv",
        ]
        ratios = sorted(f.name for f in out.glob("log_ratio_*.csv"))
        assert len(ratios) == 3
        coefs = (out / "coefficients.csv").read_text()
        assert "diabetes" in coefs

    def test_spline_coefficient_table_names(self, tmp_path):
        path = tmp_path / "cancer.csv"
        write_dataset(make_cancer_like(), path)
        out = tmp_path / "out"
        rc = main([
            "fit", "--data", str(path),
            "--model",
            "Surv(time, event) ~ sex + wl_q2 + wl_q3 + wl_q4 + ecog_0 + ecog_23",
            "--estimator", "spline", "--out", str(out),
        ])
        assert rc == 0
        table = (out / "coefficients.csv").read_text()
        for term in ("sex", "wl_q2", "wl_q3", "wl_q4", "ecog_0", "ecog_23"):
            assert term in table

    def test_cloud_plot_has_replicate_polylines(self, tmp_path):
        out = tmp_path / "bench"
        rc = main([
            "bench", "--n", "100", "--reps", "4", "--estimators", "kernel",
            "--seed", "2", "--out", str(out), "--plots",
        ])
        assert rc == 0
        svg = (out / "cloud_kernel.svg").read_text()
        assert svg.count("<path") >= 4  # one light polyline per replicate

    def test_presmooth_estimand_survival(self, tmp_path):
        path = tmp_path / "cancer.csv"
        write_dataset(make_cancer_like(), path)
        out = tmp_path / "out"
        rc = main([
            "fit", "--data", str(path), "--model", "Surv(time, event) ~ nph(sex)",
            "--estimator", "presmooth", "--estimand", "S", "--bw", "150",
            "--bw-presmooth", "150", "--bound", "both", "--out", str(out),
        ])
        assert rc == 0
        curve = read_curve(out / "hazard_sex_0.csv")
        assert curve.kind == "survival"
        assert np.all(np.diff(curve.values) <= 1e-12)

    def test_kernel_bandwidth_modes_cli(self, tmp_path):
        path = tmp_path / "cancer.csv"
        write_dataset(make_cancer_like(), path)
        for mode in ("local", "nearest_neighbor"):
            out = tmp_path / f"out_{mode}"
            rc = main([
                "fit", "--data", str(path), "--model", "Surv(time, event) ~ nph(sex)",
                "--estimator", "kernel", "--bw", "120", "--bw-mode", mode,
                "--nn-k", "8", "--out", str(out),
            ])
            assert rc == 0
            assert (out / "hazard_sex_0.csv").exists()

    def test_string_factor_nph_stratification(self, tmp_path):
        path = tmp_path / "d.csv"
        rows = ["time,event,arm"]
        rng = np.random.default_rng(0)
        for i in range(60):
            arm = "a" if i % 2 == 0 else "b"
            t = rng.exponential(1.0 if arm == "a" else 0.5)
            rows.append(f"{max(t, 0.01):.4f},1,{arm}")
        path.write_text("\n".join(rows) + "\n")
        out = tmp_path / "out"
        rc = main([
            "fit", "--data", str(path), "--model", "Surv(time, event) ~ nph(arm)",
            "--estimator", "kernel", "--bw", "1.0", "--out", str(out),
        ])
        assert rc == 0
        assert (out / "hazard_a.csv").exists()
        assert (out / "hazard_b.csv").exists()
