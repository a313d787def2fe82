"""End-to-end checks on the default scenario: K=4, n_max 2000, imbalance 0.1, seed 1234."""

import numpy as np
import pytest

from refcal.module_utils.datagen import generate_blobs
from refcal.module_utils.metrics import auc_refinement, ece
from refcal.module_utils.models import ProbabilityBatch
from refcal.module_utils.oracles import run_property_sweep
from refcal.module_utils.pipeline import (
    STAGE_REFINEMENT,
    evaluate,
    evaluate_robustness,
    pitfall_transform,
    train_baseline,
    train_refcal,
)

pytestmark = pytest.mark.slow

DECILES = 10


def decile_accuracies(batch):
    order = np.argsort(batch.confidences, kind="stable")
    return [float(batch.correct[chunk].mean()) for chunk in np.array_split(order, DECILES)]


class TestRefcalAgainstBaseline:
    def test_refinement_and_calibration(self, default_scenario, refcal_run, baseline_run):
        refcal = evaluate(refcal_run[0], default_scenario, "test")
        baseline = evaluate(baseline_run[0], default_scenario, "test")

        assert refcal.auc is not None and baseline.auc is not None
        assert refcal.auc >= baseline.auc
        assert refcal.ece <= baseline.ece + 0.02

    def test_accuracy_rises_with_confidence(self, default_scenario, refcal_run):
        batch = evaluate(refcal_run[0], default_scenario, "test").predictions

        accuracies = decile_accuracies(batch)

        for lower, upper in zip(accuracies, accuracies[1:]):
            assert upper >= lower, accuracies

    def test_stage1_reduces_losses(self, refcal_run):
        stage1 = [entry for entry in refcal_run[1] if entry.stage == STAGE_REFINEMENT]

        assert stage1[-1].loss < stage1[0].loss
        assert stage1[-1].refinement < stage1[0].refinement

    def test_deterministic(self, default_scenario, default_config, refcal_run):
        params, log = train_refcal(default_scenario, default_config)

        for (name, expected), (_, actual) in zip(refcal_run[0].named_arrays(), params.named_arrays()):
            assert np.array_equal(expected, actual), name
        assert [entry.loss for entry in refcal_run[1]] == [entry.loss for entry in log]


class TestBaseline:
    def test_balanced_accuracy(self, default_config):
        balanced = generate_blobs(4, 500, 8, imbalance_factor=1.0, seed=1234)

        params, _ = train_baseline(balanced, default_config)

        assert evaluate(params, balanced, "test").top1 > 0.9


class TestRobustness:
    def test_corruption_and_ood(self, default_scenario, refcal_run):
        report = evaluate_robustness(refcal_run[0], default_scenario, (5,), n_ood=500, seed=1234)
        clean, corrupted = report.severities

        assert corrupted.top1 <= clean.top1
        assert clean.auc is not None and corrupted.auc is not None
        assert corrupted.auc <= clean.auc
        assert report.ood.auroc > 0.9


class TestPitfallScenario:
    def test_matched_distribution(self):
        rng = np.random.default_rng(1234)
        size = 20000
        predicted = rng.integers(0, 2, size)
        # confidences average the diagonal of the rows below: 0.7 and 0.8
        confidences = np.where(predicted == 0, rng.uniform(0.5, 0.9, size), rng.uniform(0.6, 1.0, size))
        first = np.where(predicted == 0, confidences, 1.0 - confidences)
        probs = np.stack([first, 1.0 - first], axis=1)
        correct = rng.uniform(size=size) < confidences
        batch = ProbabilityBatch.create(probs, np.where(correct, predicted, 1 - predicted))

        transformed = pitfall_transform(batch, [[0.7, 0.3], [0.2, 0.8]])

        assert 2 == np.unique(transformed.confidences).size
        assert auc_refinement(transformed) <= auc_refinement(batch)
        assert ece(transformed, 15) <= ece(batch, 15) + 0.02


class TestPropertySweep:
    def test_full_sweep(self):
        report = run_property_sweep(seed=1234)

        assert report.passed, report.to_json()
