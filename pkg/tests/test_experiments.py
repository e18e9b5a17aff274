import csv
import json

import numpy as np
import pytest

from deepin.harness.config import load_config
from deepin.harness.experiments import (
    covariate_study,
    make_model,
    method_penalty,
    representation_study,
    run_benchmark,
)
from deepin.harness.config import CovariateStudyConfig, RepresentationStudyConfig
from deepin.harness.io import write_dataset
from deepin.model import PenaltyConfig
from deepin.numerics import make_rng

SMALL = {
    "data": {"setting": 1, "n": 300, "d": 10, "s0": 3, "d0": 2, "seed": 0},
    "hidden": [8],
    "test_size": 500,
    "training": {"epochs": 5, "batch_size": 50},
    "penalty": {"lam1": 0.05, "lam2": 0.05},
}


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestModels:
    def test_shapes(self):
        rng = make_rng(0)
        assert make_model("deepin", 5, [4], rng).B.shape == (5, 5)
        idx = make_model("index-model", 5, [4], rng, k=2)
        assert idx.B.shape == (2, 5)
        np.testing.assert_allclose(idx.B @ idx.B.T, np.eye(2), atol=1e-12)
        van = make_model("vanilla-dnn", 5, [4], rng)
        assert van.frozen_B and np.array_equal(van.B, np.eye(5))

    def test_method_penalties(self):
        lam = PenaltyConfig(0.1, 0.2, 0.3, 0.4)
        assert method_penalty("vanilla-dnn", lam) == PenaltyConfig()
        assert method_penalty("index-model", lam).lam1 == 0.0
        assert method_penalty("deepin", lam) == lam


class TestBenchmark:
    def test_byte_identical_reruns(self, tmp_path):
        cfg = load_config(overrides={**SMALL, "replications": 2})
        run_benchmark(cfg, tmp_path / "a")
        run_benchmark(cfg, tmp_path / "b")
        a = (tmp_path / "a" / "replications.csv").read_bytes()
        assert a == (tmp_path / "b" / "replications.csv").read_bytes()
        assert (tmp_path / "a" / "models" / "rep_1.json").exists()

    def test_workers_match_serial(self, tmp_path):
        cfg = load_config(overrides={**SMALL, "replications": 2})
        run_benchmark(cfg, tmp_path / "a")
        par = load_config(overrides={**SMALL, "replications": 2, "workers": 2})
        run_benchmark(par, tmp_path / "b")
        a = (tmp_path / "a" / "replications.csv").read_bytes()
        assert a == (tmp_path / "b" / "replications.csv").read_bytes()

    def test_summary_matches_rows(self, tmp_path):
        cfg = load_config(overrides={**SMALL, "replications": 3})
        summary = run_benchmark(cfg, tmp_path)
        rows = read_rows(tmp_path / "replications.csv")
        assert [r["seed"] for r in rows] == ["0", "1", "2"]
        for key in ("PE", "TPR", "Dims"):
            vals = np.array([float(r[key]) for r in rows])
            assert abs(summary["metrics"][key]["mean"] - vals.mean()) <= 1e-12
            assert abs(summary["metrics"][key]["sd"] - vals.std(ddof=1)) <= 1e-12
        on_disk = json.loads((tmp_path / "summary.json").read_text())
        assert on_disk["metrics"] == summary["metrics"]

    def test_failures_are_recorded(self, tmp_path):
        cfg = load_config(overrides={
            **SMALL, "replications": 2,
            "training": {"epochs": 20, "lr": 1e6, "grad_clip": None, "momentum": 0.99},
        })
        summary = run_benchmark(cfg, tmp_path)
        rows = read_rows(tmp_path / "replications.csv")
        assert summary["failures"] == 2
        assert all(r["status"] == "failed" and r["error"] for r in rows)

    def test_vanilla_fits_noiseless_linear_data(self, tmp_path):
        rng = make_rng(3)
        X = rng.standard_normal((2000, 4))
        y = X @ np.array([1.0, -0.5, 0.25, 0.0])
        write_dataset(tmp_path / "lin.csv", X, y)
        cfg = load_config(overrides={
            "data_csv": str(tmp_path / "lin.csv"), "method": "vanilla-dnn", "hidden": [16],
            "training": {"epochs": 60, "batch_size": 32}, "save_models": False,
        })
        summary = run_benchmark(cfg, tmp_path / "out")
        assert summary["failures"] == 0
        assert summary["metrics"]["PE"]["mean"] < 0.05

    def test_index_model_and_classification(self, tmp_path):
        data = {"setting": 4, "n": 300, "d": 10, "s0": 3, "d0": 2, "seed": 0}
        cfg = load_config(overrides={**SMALL, "data": data, "method": "index-model", "k": 2})
        summary = run_benchmark(cfg, tmp_path)
        row = read_rows(tmp_path / "replications.csv")[0]
        assert row["status"] == "ok" and row["ACC"] and row["AUC"] and not row["PE"]
        assert row["TPR"] == ""
        assert summary["metrics"]["Dims"]["mean"] <= 2

    def test_tuning_path(self, tmp_path):
        cfg = load_config(overrides={**SMALL, "tuning": {"lam1": [0.0, 0.05]}})
        run_benchmark(cfg, tmp_path)
        row = read_rows(tmp_path / "replications.csv")[0]
        assert row["status"] == "ok" and float(row["lam1"]) in (0.0, 0.05)


class TestStudies:
    def test_covariate_study_smoke(self, tmp_path):
        cfg = CovariateStudyConfig(n=1000, reps=2, epochs=20)
        summary = covariate_study(cfg, seed=1, out=tmp_path)
        assert summary["valid_power_reps"] + summary["failures"] == 2
        rows = read_rows(tmp_path / "tests" / "covariate_study.csv")
        assert {r["variable"] for r in rows} == {"1", "2"}

    def test_representation_study_smoke(self, tmp_path):
        cfg = RepresentationStudyConfig(n_null=400, n_power=400, reps_null=3, reps_power=2,
                                        epochs=5)
        summary = representation_study(cfg, seed=0, out=tmp_path)
        assert summary["null_reps"] == 3 and summary["power_reps"] == 2
        assert 0.0 <= summary["ks_pvalue"] <= 1.0
        assert (tmp_path / "tests" / "representation_study.json").exists()
