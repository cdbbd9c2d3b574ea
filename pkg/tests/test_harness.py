import dataclasses
import json
import os

import numpy as np
import pytest

from cluelab import __version__
from cluelab.errors import ConfigError, NumericError
from cluelab.harness import (ExperimentConfig, emit_report, parse_report, prepare_data, read_report,
                             render_report, run_experiment, sweep_alpha, sweep_mc_samples, train)

BLOBS = {"name": "blobs", "n_classes": 3, "n": 300}
SMALL = dict(dataset=BLOBS, model={"hidden_widths": [16], "activation": "relu", "dropout_rate": 0.3},
             pretrain_epochs=3, clue_epochs=3, K_train=3, K_eval=3, lr=0.05)
HETERO = dict(dataset={"name": "heteroscedastic", "n": 600},
              model={"hidden_widths": [16, 16], "activation": "relu", "dropout_rate": 0.3},
              pretrain_epochs=20, clue_epochs=20, lr=0.03, K_train=5, K_eval=10, split=[0.7, 0.1, 0.2])

PROVENANCE = {"alpha", "config_digest", "dataset", "epochs", "k_eval", "k_train", "method", "n_test", "notes",
              "seed", "task", "version"}


def metrics_of(result):
    return result.report.metrics


class TestConfig:
    def test_unknown_field(self):
        with pytest.raises(ConfigError, match="unknown config fields"):
            ExperimentConfig.from_dict({"dataset": BLOBS, "learning_rate": 0.1})

    def test_invalid_values(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(dataset=BLOBS, K_eval=0)
        with pytest.raises(ConfigError):
            ExperimentConfig(dataset=BLOBS, method="bayes")
        with pytest.raises(ConfigError):
            ExperimentConfig(dataset=BLOBS, alpha=1.5)
        with pytest.raises(ConfigError):
            ExperimentConfig.from_json("[1, 2]")

    def test_method_dataset_mismatch(self):
        with pytest.raises(ConfigError):
            run_experiment(ExperimentConfig(**{**SMALL, "method": "nll_head"}))
        with pytest.raises(ConfigError):
            run_experiment(ExperimentConfig(**{**HETERO, "method": "posthoc_temperature"}))

    def test_unknown_dataset_fields(self):
        with pytest.raises(ConfigError):
            prepare_data(ExperimentConfig(dataset={"name": "blobs", "centres": 3}))

    def test_digest_tracks_content(self):
        a = ExperimentConfig(**SMALL)
        assert a.digest() == ExperimentConfig.from_json(json.dumps(a.to_dict())).digest()
        assert a.digest() != dataclasses.replace(a, seed=1).digest()


class TestRun:
    def test_trace_and_provenance(self):
        r = run_experiment(ExperimentConfig(**SMALL))
        assert len(r.trace) == 6
        assert PROVENANCE <= set(r.report.provenance)
        assert r.report.provenance["version"] == __version__
        assert r.report.provenance["config_digest"] == ExperimentConfig(**SMALL).digest()
        assert len(r.params_digest) == 64

    def test_deterministic(self):
        a = run_experiment(ExperimentConfig(**SMALL))
        b = run_experiment(ExperimentConfig(**SMALL))
        assert a.row() == b.row()
        assert a.trace == b.trace

    def test_alpha_one_matches_baseline(self):
        clue = run_experiment(ExperimentConfig(**{**SMALL, "method": "clue", "alpha": 1.0}))
        base = run_experiment(ExperimentConfig(**{**SMALL, "method": "task_loss_only"}))
        assert clue.params_digest == base.params_digest
        assert metrics_of(clue) == metrics_of(base)

    def test_no_second_phase_is_plain_training(self):
        base = run_experiment(ExperimentConfig(**{**SMALL, "method": "task_loss_only", "clue_epochs": 0}))
        clue = run_experiment(ExperimentConfig(**{**SMALL, "method": "clue", "clue_epochs": 0}))
        assert base.params_digest == clue.params_digest
        assert metrics_of(base) == metrics_of(clue)

    @pytest.mark.parametrize("method", ["ensemble", "posthoc_isotonic", "posthoc_temperature"])
    def test_classification_methods(self, method):
        r = run_experiment(ExperimentConfig(**{**SMALL, "method": method, "members": 2}))
        m = metrics_of(r)
        assert 0.0 <= m["error"] <= 1.0 and m["ece"] is not None

    def test_isotonic_keeps_predictions(self):
        base = run_experiment(ExperimentConfig(**{**SMALL, "method": "task_loss_only"}))
        iso = run_experiment(ExperimentConfig(**{**SMALL, "method": "posthoc_isotonic"}))
        assert metrics_of(iso)["error"] == metrics_of(base)["error"]

    def test_regression_methods(self):
        cfg = {**HETERO, "pretrain_epochs": 3, "clue_epochs": 3}
        for method in ("task_loss_only", "clue", "nll_head", "ensemble"):
            m = metrics_of(run_experiment(ExperimentConfig(**{**cfg, "method": method, "members": 2})))
            assert m["mse"] > 0 and m["ence"] >= 0

    def test_numeric_abort(self):
        cfg = {**HETERO, "dataset": {"name": "heteroscedastic", "n": 200}, "lr": 50.0, "pretrain_epochs": 3}
        with pytest.raises(NumericError, match="non-finite"):
            run_experiment(ExperimentConfig(**cfg))

    def test_corruption_only_touches_test(self):
        clean = prepare_data(ExperimentConfig(**SMALL))
        noisy = prepare_data(ExperimentConfig(**SMALL, eval_corruption=1.0))
        assert np.array_equal(clean.train.features, noisy.train.features)
        assert np.array_equal(clean.val.features, noisy.val.features)
        assert not np.array_equal(clean.test.features, noisy.test.features)

    def test_csv_dataset(self, tmp_path):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(80, 2))
        rows = "\n".join(f"{a},{b},{a - b}" for a, b in x)
        (tmp_path / "d.csv").write_text("a,b,y\n" + rows + "\n")
        cfg = ExperimentConfig(**{**HETERO, "pretrain_epochs": 2, "clue_epochs": 2,
                                  "dataset": {"name": "csv", "path": "d.csv", "target_column": "y"}})
        assert run_experiment(cfg, data_dir=tmp_path).report.provenance["n_test"] == 16

    def test_boston_note(self):
        cfg = ExperimentConfig(**{**HETERO, "dataset": {"name": "boston"}, "pretrain_epochs": 1, "clue_epochs": 1})
        assert "different architecture" in run_experiment(cfg).report.provenance["notes"]


class TestSweeps:
    def test_k_sweep_without_dropout(self):
        cfg = ExperimentConfig(**{**SMALL, "model": {"hidden_widths": [16], "dropout_rate": 0.0}})
        rows = sweep_mc_samples(cfg, [1, 5, 20])
        assert [r.report.provenance["k_eval"] for r in rows] == [1, 5, 20]
        # averaging identical passes can move the last ulp
        for row in rows[1:]:
            assert metrics_of(row) == pytest.approx(metrics_of(rows[0]), rel=1e-12)
        assert len({r.params_digest for r in rows}) == 1

    def test_k_sweep_rejects_empty(self):
        with pytest.raises(ConfigError):
            sweep_mc_samples(ExperimentConfig(**SMALL), [])

    def test_alpha_sweep_rows(self):
        rows = sweep_alpha(ExperimentConfig(**SMALL), [0.0, 0.5, 1.0])
        base = run_experiment(ExperimentConfig(**{**SMALL, "method": "task_loss_only"}))
        assert [r.report.provenance["alpha"] for r in rows] == [0.0, 0.5, 1.0]
        assert metrics_of(rows[-1]) == metrics_of(base)
        assert rows[0].report.metrics["error"] is not None

    def test_some_alpha_below_one_is_better_calibrated(self):
        # variance is not bounded by 1, so the binned regression calibration error (ENCE) stands in for UCE
        for seed in range(5):
            rows = sweep_alpha(ExperimentConfig(**{**HETERO, "seed": seed}), [0.0, 0.25, 0.5, 0.75, 1.0])
            ence = [r.report.metrics["ence"] for r in rows]
            assert min(ence[:-1]) <= ence[-1]


class TestReports:
    @pytest.fixture(scope="class")
    @staticmethod
    def results():
        return sweep_mc_samples(ExperimentConfig(**SMALL), [1, 3])

    def test_json_round_trip(self, results, tmp_path):
        path = emit_report(results, "json", tmp_path / "r.json")
        parsed = read_report(path)
        assert parsed == json.loads(render_report(results, "json"))
        assert parsed[0] == {k: (None if v == "" else v) for k, v in results[0].row().items()}
        assert all(list(row) == sorted(row) for row in parsed)

    def test_csv_round_trip(self, results, tmp_path):
        path = emit_report(results, "csv", tmp_path / "r.csv")
        text = path.read_text()
        assert len(text.strip().splitlines()) == len(results) + 1
        assert read_report(path) == parse_report(render_report(results, "json"), "json")

    def test_timing_opt_in(self, results):
        assert "time_per_epoch" not in results[0].row()
        assert "time_per_epoch" in results[0].row(include_timing=True)

    def test_unwritable_path(self, results, tmp_path):
        with pytest.raises(OSError):
            emit_report(results, "json", tmp_path / "missing" / "r.json")

    def test_failed_write_leaves_nothing(self, results, tmp_path):
        target = tmp_path / "r.json"
        target.mkdir()  # os.replace onto a directory fails after the temp file is written
        with pytest.raises(OSError):
            emit_report(results, "json", target)
        assert os.listdir(tmp_path) == ["r.json"] and target.is_dir()

    def test_empty_results_rejected(self):
        with pytest.raises(ValueError):
            render_report([], "json")

    def test_unknown_format(self, results):
        with pytest.raises(ConfigError):
            render_report(results, "xml")


def test_trained_model_members():
    model = train(ExperimentConfig(**{**SMALL, "method": "ensemble", "members": 3}))
    assert len(model.members) == 3
    assert len({p.digest() for p in model.members}) == 3
