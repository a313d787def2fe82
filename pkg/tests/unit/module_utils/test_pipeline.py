from dataclasses import replace

import numpy as np
import pytest

from refcal.module_utils.errors import EmptySplit, RowArgmaxMismatch, RowNotStochastic
from refcal.module_utils.metrics import auc_refinement
from refcal.module_utils.models import MetricConfig, ProbabilityBatch, TrainConfig
from refcal.module_utils.network import init_params
from refcal.module_utils.pipeline import (
    STAGE_BASELINE,
    STAGE_CALIBRATION,
    MONITOR_PER_CLASS,
    STAGE_REFINEMENT,
    class_balanced_batches,
    confusion_rows,
    evaluate,
    evaluate_robustness,
    monitor_subset,
    pitfall_transform,
    predict_proba,
    report_from_predictions,
    run_classifier_stage,
    run_stage1,
    shuffled_batches,
    train_baseline,
    train_refcal,
)
from refcal.module_utils.serialization import dump_predictions, parse_predictions


def assert_same_params(expected, actual):
    for (name, a), (other, b) in zip(expected.named_arrays(), actual.named_arrays()):
        assert name == other
        assert np.array_equal(a, b), name
    assert expected.temperature == actual.temperature


def log_rows(log):
    return [(e.epoch, e.stage, e.loss, e.val_top1, e.val_auc, e.val_ece) for e in log]


class TestBatches:
    def test_class_balanced(self):
        labels = np.array([0] * 30 + [1] * 8 + [2] * 3)
        rng = np.random.default_rng(0)

        batches = list(class_balanced_batches(labels, 12, rng))

        assert 4 == len(batches)
        for index in batches:
            assert [4, 4, 4] == np.bincount(labels[index], minlength=3).tolist()

    def test_at_least_two_per_class(self):
        labels = np.repeat(np.arange(10), 5)

        for index in class_balanced_batches(labels, 8, np.random.default_rng(1)):
            assert np.all(np.bincount(labels[index], minlength=10) >= 2)

    def test_monitor_keeps_small_split(self):
        labels = np.array([1, 0, 1, 2, 0, 2])

        assert list(range(6)) == monitor_subset(labels, np.random.default_rng(3)).tolist()

    def test_monitor_caps_large_classes(self):
        labels = np.array([0] * (MONITOR_PER_CLASS + 40) + [1] * 5)

        index = monitor_subset(labels, np.random.default_rng(3))

        assert [MONITOR_PER_CLASS, 5] == np.bincount(labels[index]).tolist()
        assert np.all(np.diff(index) > 0)

    def test_shuffled_covers_everything(self):
        batches = list(shuffled_batches(10, 4, np.random.default_rng(2)))

        assert [4, 4, 2] == [index.size for index in batches]
        assert list(range(10)) == sorted(np.concatenate(batches).tolist())


class TestTrainRefcal:
    def test_log(self, blobs, fast_config):
        _, log = train_refcal(blobs, fast_config)

        assert [(e, STAGE_REFINEMENT) for e in range(4)] + [(e, STAGE_CALIBRATION) for e in range(4)] == [
            (entry.epoch, entry.stage) for entry in log
        ]
        assert all(entry.refinement is not None for entry in log[:4])
        assert all(entry.val_top1 is not None for entry in log[4:])

    def test_encoder_frozen_in_stage2(self, blobs, fast_config):
        initial = init_params(blobs.dim, 3, hidden_dims=(8,), representation_dim=6, projection_dim=4, seed=0)
        pretrained, _ = run_stage1(initial, blobs, fast_config)

        params, _ = run_classifier_stage(
            pretrained, blobs, fast_config.stage2, 0, "final", STAGE_CALIBRATION, frozen_encoder=True
        )

        for before, after in zip(pretrained.encoder, params.encoder):
            assert np.array_equal(before.weight, after.weight)
            assert np.array_equal(before.bias, after.bias)
        assert not np.array_equal(pretrained.classifier.weight, params.classifier.weight)

    def test_stage1_changes_encoder(self, blobs, fast_config):
        skipped = replace(fast_config, stage1=replace(fast_config.stage1, epochs=0))

        with_stage1, _ = train_refcal(blobs, fast_config)
        without_stage1, log = train_refcal(blobs, skipped)

        assert all(STAGE_CALIBRATION == entry.stage for entry in log)
        assert not np.array_equal(with_stage1.encoder[0].weight, without_stage1.encoder[0].weight)

    def test_deterministic(self, blobs, fast_config):
        first, first_log = train_refcal(blobs, fast_config)
        second, second_log = train_refcal(blobs, fast_config)

        assert_same_params(first, second)
        assert log_rows(first_log) == log_rows(second_log)

    def test_stage1_loss_is_normalized(self, blobs, fast_config):
        _, log = train_refcal(blobs, fast_config)

        assert all(np.isfinite(entry.loss) and entry.loss >= 0 for entry in log if entry.stage == STAGE_REFINEMENT)


class TestTrainBaseline:
    def test_trains_encoder(self, blobs, fast_config):
        params, log = train_baseline(blobs, replace(fast_config, selection="final"))
        initial, _ = train_baseline(blobs, replace(fast_config, stage2=replace(fast_config.stage2, epochs=0)))

        assert [STAGE_BASELINE] * 4 == [entry.stage for entry in log]
        assert not np.array_equal(initial.encoder[0].weight, params.encoder[0].weight)

    @pytest.mark.parametrize(
        "overrides",
        [
            {"loss": "ls", "epsilon": 0.0},
            {"loss": "focal", "gamma": 0.0},
        ],
    )
    def test_reductions_to_nll(self, blobs, fast_values, overrides):
        _, nll_log = train_baseline(blobs, TrainConfig.from_json(fast_values))
        _, reduced_log = train_baseline(blobs, TrainConfig.from_json(dict(fast_values, **overrides)))

        assert log_rows(nll_log) == log_rows(reduced_log)


class TestModelSelection:
    def test_best_val_keeps_earliest_best(self, blobs, fast_config, mocker):
        start, _ = train_refcal(blobs, fast_config)
        reference, _ = run_classifier_stage(
            start,
            blobs,
            replace(fast_config.stage2, epochs=1),
            0,
            "final",
            STAGE_BASELINE,
            frozen_encoder=False,
        )
        mocker.patch(
            "refcal.module_utils.pipeline._validation_metrics",
            side_effect=[(0.5, None, 0.1), (0.9, None, 0.1), (0.9, None, 0.1), (0.7, None, 0.1)],
        )

        selected, log = run_classifier_stage(
            start,
            blobs,
            fast_config.stage2,
            0,
            "best_val",
            STAGE_BASELINE,
            frozen_encoder=False,
        )

        assert_same_params(reference, selected)
        assert [0.5, 0.9, 0.9, 0.7] == [entry.val_top1 for entry in log]

    def test_temperature_scaling_keeps_predictions(self, blobs, fast_values):
        plain, _ = train_refcal(blobs, TrainConfig.from_json(fast_values))
        scaled, _ = train_refcal(blobs, TrainConfig.from_json(dict(fast_values, temperature_scaling=True)))
        features, _ = blobs.subset("test")

        assert np.array_equal(plain.classifier.weight, scaled.classifier.weight)
        assert 0.05 <= scaled.temperature <= 20.0
        assert np.array_equal(
            predict_proba(plain, features).argmax(axis=1), predict_proba(scaled, features).argmax(axis=1)
        )


class TestEvaluate:
    def test_report_matches_dump(self, blobs, fast_config):
        params, _ = train_refcal(blobs, fast_config)
        report = evaluate(params, blobs, "test", MetricConfig(), "abc", 0)

        batch, _ = parse_predictions(dump_predictions(report.predictions).splitlines())
        recomputed = report_from_predictions(batch, MetricConfig(), "abc", 0)

        assert report.to_json() == recomputed.to_json()
        assert blobs.mask("test").sum() == report.predictions.size
        for value in (report.top1, report.ece, report.sce, report.ace, report.smece, report.mce):
            assert 0.0 <= value <= 1.0

    def test_deterministic(self, blobs, fast_config):
        params, _ = train_refcal(blobs, fast_config)

        assert evaluate(params, blobs, "val").to_json() == evaluate(params, blobs, "val").to_json()

    def test_empty_split(self, blobs, fast_config):
        params, _ = train_refcal(blobs, fast_config)
        everything_train = replace(blobs, split=np.full(blobs.size, "train"))

        with pytest.raises(EmptySplit):
            evaluate(params, everything_train, "test")


class TestReportFromPredictions:
    def test_four_samples(self):
        batch = ProbabilityBatch.create([[0.9, 0.1], [0.8, 0.2], [0.7, 0.3], [0.6, 0.4]], [0, 0, 1, 0])

        report = report_from_predictions(batch, MetricConfig(), "", None)

        assert 0.35 == pytest.approx(report.ece, abs=1e-12)
        assert 0.75 == report.top1
        assert 4 == report.bin_table.total

    def test_degenerate_auc(self):
        batch = ProbabilityBatch.create([[0.9, 0.1], [0.8, 0.2]], [0, 0])

        assert report_from_predictions(batch, MetricConfig(), "", None).auc is None


class TestPitfallTransform:
    def setup_method(self):
        rng = np.random.default_rng(3)
        confidences = rng.uniform(0.5, 1.0, 2000)
        predicted = rng.integers(0, 2, 2000)
        probs = np.where(predicted[:, np.newaxis] == 0, np.stack([confidences, 1 - confidences], 1), 0)
        probs = probs + np.where(predicted[:, np.newaxis] == 1, np.stack([1 - confidences, confidences], 1), 0)
        correct = rng.uniform(size=2000) < confidences
        labels = np.where(correct, predicted, 1 - predicted)
        self.batch = ProbabilityBatch.create(probs, labels)

    def test_insight_box_rows(self):
        transformed = pitfall_transform(self.batch, [[0.7, 0.3], [0.2, 0.8]])

        assert {0.7, 0.8} == set(transformed.confidences.tolist())
        assert np.array_equal(self.batch.predictions, transformed.predictions)
        assert auc_refinement(transformed) <= auc_refinement(self.batch)

    def test_identity_rows(self):
        transformed = pitfall_transform(self.batch, np.eye(2))

        assert np.all(1.0 == transformed.confidences)

    def test_confusion_rows(self):
        batch = ProbabilityBatch.create([[0.9, 0.1], [0.8, 0.2], [0.6, 0.4], [0.3, 0.7]], [0, 0, 1, 1])

        np.testing.assert_allclose(confusion_rows(batch), [[2.0 / 3.0, 1.0 / 3.0], [0.0, 1.0]])

    def test_unseen_prediction_is_one_hot(self):
        batch = ProbabilityBatch.create([[0.9, 0.05, 0.05], [0.8, 0.1, 0.1]], [0, 2])

        assert [0.0, 1.0, 0.0] == confusion_rows(batch)[1].tolist()

    def test_argmax_mismatch(self):
        with pytest.raises(RowArgmaxMismatch) as e:
            pitfall_transform(self.batch, [[0.3, 0.7], [0.2, 0.8]])

        assert 4 == e.value.exit_code

    @pytest.mark.parametrize("rows", [[[0.7, 0.2], [0.2, 0.8]], [[1.2, -0.2], [0.2, 0.8]], [[1.0, 0.0]]])
    def test_not_stochastic(self, rows):
        with pytest.raises(RowNotStochastic):
            pitfall_transform(self.batch, rows)


class TestEvaluateRobustness:
    def test_report(self, blobs, fast_config):
        params, _ = train_refcal(blobs, fast_config)

        report = evaluate_robustness(params, blobs, (1, 5), n_ood=50, seed=0)

        assert [0, 1, 5] == [result.severity for result in report.severities]
        assert evaluate(params, blobs, "test").top1 == report.severities[0].top1
        assert 0.0 <= report.ood.auroc <= 1.0
        assert 0.0 <= report.ood.fpr_at_tpr95 <= 1.0
