import csv

import numpy as np
import pytest

from app.errors import DriftAbortError, FirewallError
from app.harness import (
    CumulativeCurve,
    annotation_drift,
    confusion_accuracy,
    downstream_comparison,
    eval_predictor,
    export_confusion,
    generate_data,
    load_splits,
    predict,
    probe_realism,
    run_ablation,
    sweep_lambda,
    train_predictor,
)
from app.harness.experiment import evaluate_run, real_test_truth, run_training
from app.harness.gradients import GRAPHS, run_grad_checks, write_grad_checks
from app.harness.sweep import ABLATION_FILE_NAME, ABLATION_SUMMARY_FILE_NAME, SWEEP_FILE_NAME, ablation_config
from app.models import WorldConfig
from app.nets import build_refiner
from app.toyworld import held_out_truth, realize, simulate, translate


def identity(pixels):
    return pixels


def read_rows(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


class TestConfusion:
    def test_reported_study(self):
        assert confusion_accuracy([[224, 276], [207, 293]]) == pytest.approx(0.517)

    def test_diagonal_is_perfect(self):
        assert confusion_accuracy([[10, 0], [0, 7]]) == 1.0

    def test_all_zero(self):
        with pytest.raises(ValueError):
            confusion_accuracy([[0, 0], [0, 0]])

    @pytest.mark.parametrize("matrix", [[[1, 2, 3], [4, 5, 6]], [[1, -1], [0, 2]], [[1.5, 0], [0, 1]]])
    def test_invalid_matrices(self, matrix):
        with pytest.raises(ValueError):
            confusion_accuracy(matrix)

    def test_export_files(self, tmp_path, rng):
        real = rng.uniform(size=(4, 1, 8, 8))
        refined = rng.uniform(size=(4, 1, 8, 8))
        accuracy = export_confusion([[224, 276], [207, 293]], tmp_path / "confusion.csv", real, refined)
        assert accuracy == pytest.approx(0.517)
        assert read_rows(tmp_path / "confusion.csv") == [
            ["ground_truth", "selected_real", "selected_synthetic"],
            ["real", "224", "276"],
            ["synthetic", "207", "293"],
        ]
        for name in ("confusion_grid.png", "confusion_grid.pgm", "confusion_study.html"):
            assert (tmp_path / name).exists()
        assert "51.7" in (tmp_path / "confusion_study.html").read_text()

    def test_export_without_images_writes_only_csv(self, tmp_path):
        export_confusion([[1, 1], [1, 1]], tmp_path / "c.csv")
        assert [p.name for p in tmp_path.iterdir()] == ["c.csv"]


class TestCumulativeCurve:
    def test_monotone_and_values(self):
        curve = CumulativeCurve.from_errors(np.array([0.2, 0.8, 1.5, 4.0, 12.0]))
        assert list(curve.fraction_within) == sorted(curve.fraction_within)
        assert curve.at(1.0) == pytest.approx(0.4)
        assert curve.at(10.0) == pytest.approx(0.8)

    def test_empty(self):
        with pytest.raises(ValueError):
            CumulativeCurve.from_errors(np.array([]))


class TestDrift:
    def test_identity_refiner_zero_drift(self, small_world):
        report = annotation_drift(identity, simulate(small_world, 100, seed=0))
        assert report.as_tuple() == (0.0, 0.0)
        assert report.failures == 0

    def test_shift_measured(self, small_world):
        report = annotation_drift(lambda p: translate(p, 1, 0), simulate(WorldConfig(), 100, seed=0))
        assert report.mean_px == pytest.approx(1.0, abs=0.1)

    def test_too_few_images(self, small_world):
        with pytest.raises(ValueError):
            annotation_drift(identity, simulate(small_world, 10, seed=0))

    def test_oracle_failures_abort(self, small_world):
        with pytest.raises(DriftAbortError):
            annotation_drift(lambda p: np.full_like(p, 0.5), simulate(small_world, 100, seed=0))

    def test_network_refiner(self, small_world, tiny_refiner_arch):
        theta = build_refiner(tiny_refiner_arch, seed=0)
        report = annotation_drift(theta, simulate(small_world, 20, seed=0), min_size=20)
        assert report.n == 20 and np.isfinite(report.mean_px)


class TestPredictor:
    def test_real_images_rejected(self, small_world, tiny_config):
        with pytest.raises(FirewallError):
            train_predictor(realize(small_world, 4, seed=0), tiny_config.predictor)

    def test_training_reduces_loss(self, small_world, tiny_config):
        cfg = tiny_config.predictor.model_copy(update={"epochs": 5})
        params, history = train_predictor(simulate(small_world, 32, seed=0), cfg)
        assert len(history) == 5
        assert history[-1] < history[0]
        assert predict(params, simulate(small_world, 3, seed=1)).shape == (3, 4)

    def test_deterministic(self, small_world, tiny_config):
        data = simulate(small_world, 16, seed=0)
        a, _ = train_predictor(data, tiny_config.predictor)
        b, _ = train_predictor(data, tiny_config.predictor)
        assert a.equals(b)

    def test_eval_empty_test_set(self, small_world, tiny_config):
        params, _ = train_predictor(simulate(small_world, 8, seed=0), tiny_config.predictor)
        with pytest.raises(ValueError):
            eval_predictor(params, np.zeros((0, 1, 16, 16), dtype=np.float32), np.zeros((0, 4)))

    def test_eval_against_truth(self, small_world, tiny_config):
        params, _ = train_predictor(simulate(small_world, 8, seed=0), tiny_config.predictor)
        result = eval_predictor(params, realize(small_world, 6, seed=3), held_out_truth(small_world, 6, seed=3))
        assert result.pupil_errors.shape == (6,)
        assert result.mean_px >= 0 and 0 <= result.mean_deg <= 180
        assert list(result.curve_px.fraction_within) == sorted(result.curve_px.fraction_within)


class TestComparison:
    def test_downstream_comparison(self, tiny_config, tmp_path):
        splits = generate_data(tiny_config)
        theta = build_refiner(tiny_config.refiner, seed=0)
        truth = real_test_truth(splits, tiny_config)
        comparison = downstream_comparison(theta, splits.synthetic, splits.real_test, truth,
                                           tiny_config.predictor, out_path=tmp_path / "curves.csv")
        assert set(comparison.results) == {"synthetic", "refined"}
        assert np.isfinite(comparison.gain_px)
        rows = read_rows(tmp_path / "curves.csv")
        assert rows[0] == ["training_set", "unit", "threshold", "fraction_within"]
        assert {r[0] for r in rows[1:]} == {"synthetic", "refined"}

    def test_multiplied_variants(self, tiny_config):
        splits = generate_data(tiny_config)
        cfg = tiny_config.predictor.model_copy(update={"data_multiplier": 2, "epochs": 1})
        theta = build_refiner(tiny_config.refiner, seed=0)
        comparison = downstream_comparison(theta, splits.synthetic, splits.real_test,
                                           real_test_truth(splits, tiny_config), cfg, include_multiplied=True)
        assert set(comparison.results) == {"synthetic", "refined", "synthetic_x2", "refined_x2"}

    def test_realism_probe_in_unit_interval(self, tiny_config):
        splits = generate_data(tiny_config)
        theta = build_refiner(tiny_config.refiner, seed=0)
        value = probe_realism(theta, splits.synthetic_test, splits.real_test, tiny_config.discriminator,
                              tiny_config.train, steps=2)
        assert 0.0 <= value <= 1.0


class TestExperiment:
    def test_saved_splits_reload(self, tiny_config, tmp_path):
        generated = generate_data(tiny_config, tmp_path / "data")
        loaded = load_splits(tmp_path / "data")
        np.testing.assert_array_equal(loaded.real.pixels, generated.real.pixels)
        np.testing.assert_array_equal(loaded.synthetic.annotations, generated.synthetic.annotations)
        np.testing.assert_array_equal(real_test_truth(loaded, tiny_config), real_test_truth(generated, tiny_config))

    def test_train_and_evaluate(self, tiny_config):
        splits = generate_data(tiny_config)
        state = run_training(tiny_config, splits)
        metrics = evaluate_run(state.theta, tiny_config, splits)
        assert metrics.drift_mean_px >= 0.0
        assert metrics.downstream_gain_px == pytest.approx(metrics.error_synthetic_px - metrics.error_refined_px)


class TestAblationConfig:
    def test_variants(self, tiny_config):
        assert ablation_config(tiny_config, "default", 3).train.seed == 3
        assert ablation_config(tiny_config, "no-history", 0).train.use_history is False
        assert ablation_config(tiny_config, "global-adv", 0).discriminator.global_pool is True

    def test_unknown_variant(self, tiny_config):
        with pytest.raises(ValueError):
            ablation_config(tiny_config, "bogus", 0)


class TestGradChecks:
    def test_rows_and_csv(self, tmp_path):
        rows = run_grad_checks([0], graphs=("conv2d", "refiner_loss"), max_entries=6)
        assert [r.graph for r in rows] == ["conv2d", "refiner_loss"]
        assert all(r.passed for r in rows)
        out = read_rows(write_grad_checks(tmp_path / "gradcheck.csv", rows))
        assert out[0] == ["graph", "seed", "max_rel_error", "passed"]
        assert len(out) == 3

    def test_all_graphs_registered(self):
        assert {"conv2d", "resnet_block", "discriminator_loss", "refiner_loss"} <= set(GRAPHS)


@pytest.mark.slow
class TestSweeps:
    def test_sweep_lambda_csv(self, tiny_config, tmp_path):
        splits = generate_data(tiny_config)
        results = sweep_lambda(tiny_config, splits, [0.0, 0.5], tmp_path)
        assert [r["lambda"] for r in results] == [0.0, 0.5]
        rows = read_rows(tmp_path / SWEEP_FILE_NAME)
        assert rows[0] == ["lambda", "drift_px", "downstream_gain_px"]
        assert len(rows) == 3
        assert (tmp_path / "lambda_0.5" / "curves.csv").exists()

    def test_ablation_csv(self, tiny_config, tmp_path):
        splits = generate_data(tiny_config)
        rows = run_ablation(tiny_config, splits, [0, 1], tmp_path)
        assert len(rows) == 6
        assert len(read_rows(tmp_path / ABLATION_FILE_NAME)) == 7
        summary = read_rows(tmp_path / ABLATION_SUMMARY_FILE_NAME)
        assert [r[0] for r in summary[1:]] == ["default", "no-history", "global-adv"]
