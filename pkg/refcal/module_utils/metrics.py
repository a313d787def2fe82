import logging
from typing import Sequence

import numpy as np
from sklearn.metrics import average_precision_score, roc_auc_score, roc_curve

from refcal.module_utils.errors import (
    DegenerateSplit,
    EmptyBatch,
    EmptyScores,
    NonPositiveBandwidth,
    TooFewSamples,
    UsageError,
)
from refcal.module_utils.models import BinTable, OodReport, ProbabilityBatch
from refcal.module_utils.types import FloatArray, IntArray

logger = logging.getLogger(__name__)

DEFAULT_BINS = 15
DEFAULT_ACE_RANGES = 15
DEFAULT_SMECE_BANDWIDTH = 0.05
TPR_TARGET = 0.95
# rows of the kernel matrix held in memory at once
SMECE_BLOCK = 1024


def _check_bins(bins: int) -> None:
    if bins < 1:
        raise UsageError("Number of bins must be >= 1, got {0}.".format(bins))


def _check_batch(batch: ProbabilityBatch) -> None:
    if batch.size == 0:
        raise EmptyBatch("Cannot compute calibration metrics on an empty batch.")


def bin_edges(bins: int) -> FloatArray:
    # exactly i / M
    return np.arange(bins + 1, dtype=np.float64) / bins


def bin_index(values: FloatArray, bins: int) -> IntArray:
    """Index of the bin ((i-1)/M, i/M] holding each value; exact zeros go to the first bin."""
    index = np.searchsorted(bin_edges(bins), values, side="left") - 1
    return np.clip(index, 0, bins - 1).astype(np.int64)


def _binned_gap_sum(values: FloatArray, hits: FloatArray, bins: int, total: int) -> float:
    """Sum over bins of (B_i / total) |accuracy_i - confidence_i|."""
    index = bin_index(values, bins)
    counts = np.bincount(index, minlength=bins)
    hit_sums = np.bincount(index, weights=hits, minlength=bins)
    value_sums = np.bincount(index, weights=values, minlength=bins)
    occupied = counts > 0
    gaps = np.abs(hit_sums[occupied] - value_sums[occupied]) / counts[occupied]
    return float(np.sum(counts[occupied] / float(total) * gaps))


def reliability_table(batch: ProbabilityBatch, bins: int = DEFAULT_BINS) -> BinTable:
    _check_bins(bins)
    _check_batch(batch)
    confidences = batch.confidences
    index = bin_index(confidences, bins)
    counts = np.bincount(index, minlength=bins).astype(np.int64)
    hit_sums = np.bincount(index, weights=batch.correct.astype(np.float64), minlength=bins)
    confidence_sums = np.bincount(index, weights=confidences, minlength=bins)
    safe = np.maximum(counts, 1)
    return BinTable(
        edges=bin_edges(bins),
        counts=counts,
        accuracies=np.where(counts > 0, hit_sums / safe, 0.0),
        confidences=np.where(counts > 0, confidence_sums / safe, 0.0),
    )


def ece(batch: ProbabilityBatch, bins: int = DEFAULT_BINS) -> float:
    return reliability_table(batch, bins).expected_calibration_error()


def mce(batch: ProbabilityBatch, bins: int = DEFAULT_BINS) -> float:
    return reliability_table(batch, bins).maximum_calibration_error()


def sce(batch: ProbabilityBatch, bins: int = DEFAULT_BINS) -> float:
    """Class-conditional binned calibration error averaged over every class column."""
    _check_bins(bins)
    _check_batch(batch)
    total = 0.0
    for k in range(batch.num_classes):
        hits = (batch.labels == k).astype(np.float64)
        total += _binned_gap_sum(batch.probs[:, k], hits, bins, batch.size)
    return total / batch.num_classes


def ace(batch: ProbabilityBatch, ranges: int = DEFAULT_ACE_RANGES) -> float:
    """Adaptive calibration error over equal-mass ranges of each sorted class column.

    Ranges hold floor(N/R) samples each; the last range absorbs the remainder.
    """
    if ranges < 1:
        raise UsageError("Number of ranges must be >= 1, got {0}.".format(ranges))
    _check_batch(batch)
    if batch.size < ranges:
        raise TooFewSamples("ACE with {0} ranges needs at least {0} samples, got {1}.".format(ranges, batch.size))
    width = batch.size // ranges
    starts = np.arange(ranges) * width
    stops = np.append(starts[1:], batch.size)
    total = 0.0
    for k in range(batch.num_classes):
        order = np.argsort(batch.probs[:, k], kind="stable")
        column = batch.probs[order, k]
        hits = (batch.labels[order] == k).astype(np.float64)
        for start, stop in zip(starts, stops):
            total += abs(float(np.mean(hits[start:stop])) - float(np.mean(column[start:stop])))
    return total / (batch.num_classes * ranges)


def smece(batch: ProbabilityBatch, bandwidth: float = DEFAULT_SMECE_BANDWIDTH) -> float:
    """Kernel-smoothed calibration error with normalized Gaussian weights over top-label confidences."""
    if not bandwidth > 0:
        raise NonPositiveBandwidth("smECE bandwidth must be positive, got {0}.".format(bandwidth))
    _check_batch(batch)
    confidences = batch.confidences
    correct = batch.correct.astype(np.float64)
    soft_accuracy = np.empty_like(confidences)
    for start in range(0, batch.size, SMECE_BLOCK):
        block = confidences[start : start + SMECE_BLOCK]
        gaps = block[:, np.newaxis] - confidences[np.newaxis, :]
        weights = np.exp(-(gaps**2) / (2.0 * bandwidth**2))
        soft_accuracy[start : start + SMECE_BLOCK] = (weights @ correct) / weights.sum(axis=1)
    return float(np.mean(np.abs(soft_accuracy - confidences)))


def top1(batch: ProbabilityBatch) -> float:
    _check_batch(batch)
    return float(np.mean(batch.correct))


def nll(batch: ProbabilityBatch) -> float:
    _check_batch(batch)
    picked = batch.probs[np.arange(batch.size), batch.labels]
    return float(-np.mean(np.log(np.maximum(picked, np.finfo(np.float64).tiny))))


def auc_refinement(batch: ProbabilityBatch) -> float:
    """Probability that a correct prediction is more confident than an incorrect one, ties counted as 1/2."""
    _check_batch(batch)
    correct = batch.correct
    if correct.all() or not correct.any():
        raise DegenerateSplit(
            "AUC needs both correct and incorrect predictions, got {0} correct out of {1}.".format(
                int(correct.sum()), batch.size
            )
        )
    return float(roc_auc_score(correct.astype(np.int64), batch.confidences))


def ood_metrics(id_scores: Sequence[float], ood_scores: Sequence[float]) -> OodReport:
    """Detection metrics with in-distribution as the positive class; higher score means more in-distribution."""
    inside = np.asarray(id_scores, dtype=np.float64).ravel()
    outside = np.asarray(ood_scores, dtype=np.float64).ravel()
    if inside.size == 0 or outside.size == 0:
        raise EmptyScores("Both ID and OOD score lists must be non-empty.")
    scores = np.concatenate([inside, outside])
    is_inside = np.concatenate([np.ones(inside.size, dtype=np.int64), np.zeros(outside.size, dtype=np.int64)])

    fpr, tpr, _ = roc_curve(is_inside, scores, drop_intermediate=False)
    # thresholds descend, so the first point reaching the target has the lowest FPR
    reached = int(np.flatnonzero(tpr >= TPR_TARGET)[0])
    return OodReport(
        fpr_at_tpr95=float(fpr[reached]),
        detection_error=float(np.min(0.5 * (1.0 - tpr) + 0.5 * fpr)),
        auroc=float(roc_auc_score(is_inside, scores)),
        aupr_in=float(average_precision_score(is_inside, scores)),
        aupr_out=float(average_precision_score(1 - is_inside, -scores)),
    )
