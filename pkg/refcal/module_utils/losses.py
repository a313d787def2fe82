import logging
from typing import Sequence, Tuple

import numpy as np
from scipy.special import log_softmax, logsumexp

from refcal.module_utils.embeddings import (
    negative_mask,
    positive_mask,
    similarity_matrix,
    squared_distance_matrix,
)
from refcal.module_utils.errors import (
    BoundViolation,
    EmptyNegativeSet,
    EmptyPositiveSet,
    EpsilonOutOfRange,
    LabelOutOfRange,
    NegativeGamma,
    NonPositiveTemperature,
    ShapeMismatch,
)
from refcal.module_utils.models import BoundReport, CalibrationLossSpec, EmbeddingBatch, LossValue
from refcal.module_utils.types import BoolArray, FloatArray, IntArray

logger = logging.getLogger(__name__)

BOUND_SLACK = 1e-9


def anchor_masks(labels: IntArray, need_negatives: bool) -> Tuple[BoolArray, BoolArray]:
    positives = positive_mask(labels)
    negatives = negative_mask(labels)
    empty = np.flatnonzero(~positives.any(axis=1))
    if empty.size:
        raise EmptyPositiveSet(int(empty[0]))
    if need_negatives:
        empty = np.flatnonzero(~negatives.any(axis=1))
        if empty.size:
            raise EmptyNegativeSet(int(empty[0]))
    return positives, negatives


def refinement_loss(batch: EmbeddingBatch) -> LossValue:
    """Nearest-positive minus nearest-negative half squared distance, summed over anchors.

    No gradient is exposed: the quantity is optimized through its contrastive upper bound.
    """
    positives, negatives = anchor_masks(batch.labels, need_negatives=True)
    half = 0.5 * squared_distance_matrix(batch.vectors)
    nearest_positive = np.min(np.where(positives, half, np.inf), axis=1)
    nearest_negative = np.min(np.where(negatives, half, np.inf), axis=1)
    return LossValue(value=float(np.sum(nearest_positive - nearest_negative)))


def supcon_from_vectors(vectors: FloatArray, positives: BoolArray, tau: float, want_gradient: bool) -> LossValue:
    n = vectors.shape[0]
    logits = similarity_matrix(vectors) / tau
    others = ~np.eye(n, dtype=bool)
    masked = np.where(others, logits, -np.inf)
    # logsumexp shifts by the per-anchor maximum before exponentiating
    log_denominator = logsumexp(masked, axis=1)
    log_prob = logits - log_denominator[:, np.newaxis]
    positive_counts = positives.sum(axis=1)
    per_anchor = -np.sum(np.where(positives, log_prob, 0.0), axis=1) / positive_counts
    value = float(np.sum(per_anchor))
    if not want_gradient:
        return LossValue(value=value)

    attention = np.exp(masked - log_denominator[:, np.newaxis])
    target = positives / positive_counts[:, np.newaxis]
    coefficient = (attention - target) / tau
    gradient = (coefficient + coefficient.T) @ vectors
    return LossValue(value=value, gradient=np.asarray(gradient, dtype=np.float64))


def supcon_loss(batch: EmbeddingBatch, tau: float, want_gradient: bool = False) -> LossValue:
    """Supervised contrastive loss summed over anchors, similarities divided by tau.

    The gradient is taken w.r.t. the unit embeddings; the network chains the
    normalization Jacobian in.
    """
    if not tau > 0:
        raise NonPositiveTemperature("Temperature must be positive, got {0}.".format(tau))
    positives, _ = anchor_masks(batch.labels, need_negatives=False)
    return supcon_from_vectors(batch.vectors, positives, tau, want_gradient)


def bound_chain(batch: EmbeddingBatch) -> BoundReport:
    positives, negatives = anchor_masks(batch.labels, need_negatives=True)
    similarity = similarity_matrix(batch.vectors)
    log_sizes = np.log(positives.sum(axis=1))

    lse_positive = logsumexp(np.where(positives, similarity, -np.inf), axis=1)
    lse_negative = logsumexp(np.where(negatives, similarity, -np.inf), axis=1)
    lse_all = np.logaddexp(lse_positive, lse_negative)
    jensen = float(np.sum(lse_all - lse_positive + log_sizes))
    drop_one = float(np.sum(lse_negative - lse_positive + log_sizes))

    max_negative = np.max(np.where(negatives, similarity, -np.inf), axis=1)
    max_positive = np.max(np.where(positives, similarity, -np.inf), axis=1)
    max_bound = float(np.sum(max_negative - max_positive))

    cosine = 0.5 * (2.0 - squared_distance_matrix(batch.vectors))
    via_identity = float(
        np.sum(
            np.max(np.where(negatives, cosine, -np.inf), axis=1) - np.max(np.where(positives, cosine, -np.inf), axis=1)
        )
    )

    return BoundReport(
        l_sc_tau1=supcon_from_vectors(batch.vectors, positives, 1.0, want_gradient=False).value,
        l_ref=refinement_loss(batch).value,
        chain=[jensen, drop_one, max_bound, via_identity],
    )


def bound_holds(report: BoundReport) -> bool:
    sequence = [report.l_sc_tau1] + list(report.chain) + [report.l_ref]
    ordered = all(later <= earlier + BOUND_SLACK for earlier, later in zip(sequence, sequence[1:]))
    return ordered and report.margin > 0


def verify_bound(batch: EmbeddingBatch) -> BoundReport:
    report = bound_chain(batch)
    if not bound_holds(report):
        raise BoundViolation(
            "Contrastive bound violated: L_SC={0!r}, chain={1!r}, L_ref={2!r}.".format(
                report.l_sc_tau1, report.chain, report.l_ref
            ),
            report=report,
        )
    logger.debug("Bound margin %.6g on a batch of %d", report.margin, batch.size)
    return report


def _check_logits(logits: Sequence[Sequence[float]], labels: Sequence[int]) -> Tuple[FloatArray, IntArray]:
    matrix = np.asarray(logits, dtype=np.float64)
    label_array = np.asarray(labels, dtype=np.int64)
    if matrix.ndim != 2 or label_array.shape != (matrix.shape[0],) or matrix.shape[0] == 0:
        raise ShapeMismatch(
            "Expected N x K logits and N labels, got {0} and {1}.".format(matrix.shape, label_array.shape)
        )
    if label_array.min() < 0 or label_array.max() >= matrix.shape[1]:
        raise LabelOutOfRange("Labels must lie in [0, {0}).".format(matrix.shape[1]))
    return matrix, label_array


def _one_hot(labels: IntArray, k: int) -> FloatArray:
    encoded = np.zeros((labels.shape[0], k), dtype=np.float64)
    encoded[np.arange(labels.shape[0]), labels] = 1.0
    return encoded


def nll_loss(logits: Sequence[Sequence[float]], labels: Sequence[int], want_gradient: bool = False) -> LossValue:
    matrix, label_array = _check_logits(logits, labels)
    n, k = matrix.shape
    log_probs = log_softmax(matrix, axis=1)
    value = float(-np.mean(log_probs[np.arange(n), label_array]))
    if not want_gradient:
        return LossValue(value=value)
    return LossValue(value=value, gradient=(np.exp(log_probs) - _one_hot(label_array, k)) / n)


def smoothed_targets(labels: IntArray, k: int, epsilon: float) -> FloatArray:
    targets = np.full((labels.shape[0], k), epsilon / (k - 1), dtype=np.float64)
    targets[np.arange(labels.shape[0]), labels] = 1.0 - epsilon
    return targets


def label_smoothing_loss(
    logits: Sequence[Sequence[float]], labels: Sequence[int], epsilon: float, want_gradient: bool = False
) -> LossValue:
    if not 0.0 <= epsilon < 1.0:
        raise EpsilonOutOfRange("Label smoothing epsilon must lie in [0, 1), got {0}.".format(epsilon))
    if epsilon == 0.0:
        return nll_loss(logits, labels, want_gradient)
    matrix, label_array = _check_logits(logits, labels)
    n, k = matrix.shape
    log_probs = log_softmax(matrix, axis=1)
    targets = smoothed_targets(label_array, k, epsilon)
    value = float(-np.mean(np.sum(targets * log_probs, axis=1)))
    if not want_gradient:
        return LossValue(value=value)
    return LossValue(value=value, gradient=(np.exp(log_probs) - targets) / n)


def focal_loss(
    logits: Sequence[Sequence[float]], labels: Sequence[int], gamma: float, want_gradient: bool = False
) -> LossValue:
    if gamma < 0:
        raise NegativeGamma("Focal gamma must be >= 0, got {0}.".format(gamma))
    if gamma == 0.0:
        return nll_loss(logits, labels, want_gradient)
    matrix, label_array = _check_logits(logits, labels)
    n, k = matrix.shape
    log_probs = log_softmax(matrix, axis=1)
    log_p = log_probs[np.arange(n), label_array]
    p = np.exp(log_p)
    one_minus = -np.expm1(log_p)
    modulating = one_minus**gamma
    value = float(np.mean(-modulating * log_p))
    if not want_gradient:
        return LossValue(value=value)

    # derivative of -(1-p)^gamma log p w.r.t. log p; the second term vanishes at p == 1
    reduced = np.power(one_minus, gamma - 1.0, out=np.zeros_like(one_minus), where=one_minus > 0)
    d_log_p = -modulating + gamma * reduced * p * log_p
    gradient = d_log_p[:, np.newaxis] * (_one_hot(label_array, k) - np.exp(log_probs)) / n
    return LossValue(value=value, gradient=gradient)


def calibration_loss(
    spec: CalibrationLossSpec, logits: Sequence[Sequence[float]], labels: Sequence[int], want_gradient: bool = False
) -> LossValue:
    if spec.kind == "label_smoothing":
        return label_smoothing_loss(logits, labels, float(spec.epsilon or 0.0), want_gradient)
    if spec.kind == "focal":
        return focal_loss(logits, labels, float(spec.gamma or 0.0), want_gradient)
    return nll_loss(logits, labels, want_gradient)
