"""Independent brute-force references and randomized property sweeps.

The references loop over samples in plain Python and share no code with the
vectorized implementations they check.
"""

import logging
import math
from typing import Callable, List, Sequence, Tuple

import numpy as np

from refcal.module_utils import metrics
from refcal.module_utils.embeddings import cosine_from_distance, cosine_similarity, positive_mask
from refcal.module_utils.losses import (
    bound_chain,
    bound_holds,
    focal_loss,
    label_smoothing_loss,
    nll_loss,
    supcon_from_vectors,
    supcon_loss,
)
from refcal.module_utils.models import (
    EmbeddingBatch,
    NetworkParams,
    ProbabilityBatch,
    PropertyResult,
    VerificationReport,
)
from refcal.module_utils.network import backward, encode, fit_temperature, forward_classify, forward_embed, init_params
from refcal.module_utils.types import FloatArray, IntArray, ScalarFunction

logger = logging.getLogger(__name__)

FINITE_DIFFERENCE_STEP = 1e-5
GRADIENT_TOLERANCE = 1e-4
ORACLE_TOLERANCE = 1e-10
IDENTITY_TOLERANCE = 1e-9
CALIBRATED_ECE_LIMIT = 0.02
CALIBRATED_SAMPLES = 100000
# hidden pre-activations closer to zero than this are redrawn so differences never straddle a ReLU kink
KINK_MARGIN = 1e-3
DEFAULT_SWEEP = 1000
MAX_INSTANCES = 100


def numeric_gradient(function: ScalarFunction, point: FloatArray, step: float = FINITE_DIFFERENCE_STEP) -> FloatArray:
    """Central differences of a scalar function, one coordinate at a time."""
    x = np.array(point, dtype=np.float64)
    gradient = np.zeros_like(x)
    flat = x.reshape(-1)
    flat_gradient = gradient.reshape(-1)
    for index in range(flat.size):
        original = flat[index]
        flat[index] = original + step
        upper = function(x)
        flat[index] = original - step
        lower = function(x)
        flat[index] = original
        flat_gradient[index] = (upper - lower) / (2.0 * step)
    return gradient


def relative_error(analytic: FloatArray, numeric: FloatArray) -> float:
    scale = max(float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))), 1e-8)
    return float(np.max(np.abs(analytic - numeric))) / scale


# brute-force references


def brute_bin(value: float, bins: int) -> int:
    for index in range(bins):
        if value <= (index + 1) / bins or index == bins - 1:
            return index
    return bins - 1


def brute_binned_error(values: Sequence[float], hits: Sequence[float], bins: int, total: int) -> float:
    members: List[List[int]] = [[] for _ in range(bins)]
    for position, value in enumerate(values):
        members[brute_bin(value, bins)].append(position)
    error = 0.0
    for bucket in members:
        if bucket:
            accuracy = sum(hits[i] for i in bucket) / len(bucket)
            confidence = sum(values[i] for i in bucket) / len(bucket)
            error += len(bucket) / total * abs(accuracy - confidence)
    return error


def _top_label(batch: ProbabilityBatch) -> Tuple[List[float], List[float]]:
    confidences, hits = [], []
    for row, label in zip(batch.probs.tolist(), batch.labels.tolist()):
        best = max(range(len(row)), key=lambda k: (row[k], -k))
        confidences.append(row[best])
        hits.append(1.0 if best == label else 0.0)
    return confidences, hits


def brute_ece(batch: ProbabilityBatch, bins: int) -> float:
    confidences, hits = _top_label(batch)
    return brute_binned_error(confidences, hits, bins, batch.size)


def brute_sce(batch: ProbabilityBatch, bins: int) -> float:
    labels = batch.labels.tolist()
    total = 0.0
    for k in range(batch.num_classes):
        column = batch.probs[:, k].tolist()
        hits = [1.0 if label == k else 0.0 for label in labels]
        total += brute_binned_error(column, hits, bins, batch.size)
    return total / batch.num_classes


def brute_ace(batch: ProbabilityBatch, ranges: int) -> float:
    width = batch.size // ranges
    labels = batch.labels.tolist()
    total = 0.0
    for k in range(batch.num_classes):
        column = batch.probs[:, k].tolist()
        order = sorted(range(batch.size), key=lambda i: column[i])
        for r in range(ranges):
            stop = batch.size if r == ranges - 1 else (r + 1) * width
            members = order[r * width : stop]
            accuracy = sum(1.0 for i in members if labels[i] == k) / len(members)
            confidence = sum(column[i] for i in members) / len(members)
            total += abs(accuracy - confidence)
    return total / (batch.num_classes * ranges)


def brute_smece(batch: ProbabilityBatch, bandwidth: float) -> float:
    confidences, hits = _top_label(batch)
    total = 0.0
    for c in confidences:
        weights = [math.exp(-((c - other) ** 2) / (2.0 * bandwidth**2)) for other in confidences]
        smoothed = sum(w * h for w, h in zip(weights, hits)) / sum(weights)
        total += abs(smoothed - c)
    return total / len(confidences)


def brute_auc(batch: ProbabilityBatch) -> float:
    confidences, hits = _top_label(batch)
    right = [c for c, h in zip(confidences, hits) if h]
    wrong = [c for c, h in zip(confidences, hits) if not h]
    wins = 0.0
    for a in right:
        for b in wrong:
            wins += 1.0 if a > b else 0.5 if a == b else 0.0
    return wins / (len(right) * len(wrong))


def brute_ood(id_scores: Sequence[float], ood_scores: Sequence[float]) -> Tuple[float, float, float, float]:
    """FPR at 95% TPR, detection error, AUPR-in and AUPR-out by threshold enumeration."""
    thresholds = sorted(set(id_scores) | set(ood_scores), reverse=True)
    fpr_at_target = 1.0
    detection = 0.5
    aupr_in = 0.0
    previous_recall = 0.0
    for t in thresholds:
        hits = sum(1 for s in id_scores if s >= t)
        false_alarms = sum(1 for s in ood_scores if s >= t)
        tpr = hits / len(id_scores)
        fpr = false_alarms / len(ood_scores)
        if tpr >= metrics.TPR_TARGET:
            fpr_at_target = min(fpr_at_target, fpr)
        detection = min(detection, 0.5 * (1.0 - tpr) + 0.5 * fpr)
        aupr_in += (tpr - previous_recall) * (hits / (hits + false_alarms))
        previous_recall = tpr

    aupr_out = 0.0
    previous_recall = 0.0
    for t in sorted(set(-s for s in id_scores) | set(-s for s in ood_scores), reverse=True):
        caught = sum(1 for s in ood_scores if -s >= t)
        flagged = caught + sum(1 for s in id_scores if -s >= t)
        recall = caught / len(ood_scores)
        aupr_out += (recall - previous_recall) * (caught / flagged)
        previous_recall = recall
    return fpr_at_target, detection, aupr_in, aupr_out


def brute_refinement(batch: EmbeddingBatch) -> float:
    vectors = batch.vectors.tolist()
    labels = batch.labels.tolist()
    total = 0.0
    for i, anchor in enumerate(vectors):
        positive, negative = math.inf, math.inf
        for j, other in enumerate(vectors):
            half = 0.5 * sum((a - b) ** 2 for a, b in zip(anchor, other))
            if j != i and labels[j] == labels[i]:
                positive = min(positive, half)
            elif labels[j] != labels[i]:
                negative = min(negative, half)
        total += positive - negative
    return total


def brute_supcon(batch: EmbeddingBatch, tau: float) -> float:
    vectors = batch.vectors.tolist()
    labels = batch.labels.tolist()
    total = 0.0
    for i, anchor in enumerate(vectors):
        logits = [sum(a * b for a, b in zip(anchor, other)) / tau for other in vectors]
        others = [logits[a] for a in range(len(vectors)) if a != i]
        top = max(others)
        log_denominator = top + math.log(sum(math.exp(s - top) for s in others))
        positives = [p for p in range(len(vectors)) if p != i and labels[p] == labels[i]]
        total -= sum(logits[p] - log_denominator for p in positives) / len(positives)
    return total


# random instances


def random_unit_vectors(rng: np.random.Generator, count: int, dim: int) -> FloatArray:
    vectors = rng.standard_normal((count, dim))
    return np.asarray(vectors / np.linalg.norm(vectors, axis=1, keepdims=True), dtype=np.float64)


def random_labels(rng: np.random.Generator, size: int, num_classes: int) -> IntArray:
    """Every class appears at least twice."""
    extra = rng.integers(0, num_classes, size - 2 * num_classes)
    labels = np.concatenate([np.repeat(np.arange(num_classes), 2), extra])
    return np.asarray(rng.permutation(labels), dtype=np.int64)


def random_embedding_batch(rng: np.random.Generator) -> EmbeddingBatch:
    num_classes = int(rng.integers(2, 11))
    size = int(rng.integers(max(4, 2 * num_classes), 129))
    dim = int(rng.integers(2, 65))
    return EmbeddingBatch.create(
        random_unit_vectors(rng, size, dim), random_labels(rng, size, num_classes), num_classes
    )


def random_probability_batch(rng: np.random.Generator, size: int, num_classes: int) -> ProbabilityBatch:
    probs = rng.dirichlet(np.full(num_classes, 0.7), size=size)
    labels = rng.integers(0, num_classes, size)
    return ProbabilityBatch(probs=np.asarray(probs, dtype=np.float64), labels=np.asarray(labels, dtype=np.int64))


def calibrated_batch(rng: np.random.Generator, size: int = CALIBRATED_SAMPLES) -> ProbabilityBatch:
    """Binary predictions whose confidence c ~ U(0.5, 1) is correct with probability c."""
    confidences = rng.uniform(0.5, 1.0, size)
    correct = rng.uniform(0.0, 1.0, size) < confidences
    probs = np.stack([confidences, 1.0 - confidences], axis=1)
    return ProbabilityBatch(probs=probs, labels=np.where(correct, 0, 1).astype(np.int64))


def calibrated_logits(
    rng: np.random.Generator, size: int, num_classes: int, scale: float = 1.0
) -> Tuple[FloatArray, IntArray]:
    """Logits whose softmax is the true label distribution, optionally multiplied by scale."""
    logits = 2.0 * rng.standard_normal((size, num_classes))
    probs = np.exp(logits - logits.max(axis=1, keepdims=True))
    probs /= probs.sum(axis=1, keepdims=True)
    cumulative = np.cumsum(probs, axis=1)
    draws = rng.uniform(0.0, 1.0, size)[:, np.newaxis]
    labels = np.minimum((cumulative < draws).sum(axis=1), num_classes - 1)
    return scale * logits, labels.astype(np.int64)


def kink_free_network(rng: np.random.Generator) -> Tuple[NetworkParams, FloatArray, IntArray]:
    while True:
        input_dim = int(rng.integers(2, 6))
        num_classes = int(rng.integers(2, 5))
        size = 2 * num_classes + int(rng.integers(0, 4))
        params = init_params(
            input_dim,
            num_classes,
            hidden_dims=(int(rng.integers(3, 8)),),
            representation_dim=int(rng.integers(3, 6)),
            projection_dim=int(rng.integers(2, 5)),
            seed=int(rng.integers(0, 2**31)),
        )
        for layer in params.encoder + [params.projection, params.classifier]:
            layer.bias[...] = 0.1 * rng.standard_normal(layer.bias.shape)
        inputs = rng.standard_normal((size, input_dim))
        _, _, pre_activations = encode(params, inputs)
        if all(np.min(np.abs(pre)) > KINK_MARGIN for pre in pre_activations[:-1]):
            return params, inputs, random_labels(rng, size, num_classes)


# gradient families: each returns (analytic, numeric) for one random instance

GradientCheck = Callable[[np.random.Generator], Tuple[FloatArray, FloatArray]]


def supcon_gradient_instance(rng: np.random.Generator) -> Tuple[FloatArray, FloatArray]:
    num_classes = int(rng.integers(2, 4))
    size = 2 * num_classes + int(rng.integers(0, 4))
    vectors = random_unit_vectors(rng, size, int(rng.integers(2, 6)))
    positives = positive_mask(random_labels(rng, size, num_classes))
    tau = float(rng.uniform(0.1, 1.0))
    analytic = supcon_from_vectors(vectors, positives, tau, want_gradient=True).gradient
    assert analytic is not None
    numeric = numeric_gradient(lambda z: supcon_from_vectors(z, positives, tau, want_gradient=False).value, vectors)
    return analytic, numeric


def _logit_instance(rng: np.random.Generator) -> Tuple[FloatArray, IntArray]:
    num_classes = int(rng.integers(2, 6))
    size = int(rng.integers(1, 9))
    return 2.0 * rng.standard_normal((size, num_classes)), rng.integers(0, num_classes, size)


def nll_gradient_instance(rng: np.random.Generator) -> Tuple[FloatArray, FloatArray]:
    logits, labels = _logit_instance(rng)
    analytic = nll_loss(logits, labels, want_gradient=True).gradient
    assert analytic is not None
    return analytic, numeric_gradient(lambda z: nll_loss(z, labels).value, logits)


def label_smoothing_gradient_instance(rng: np.random.Generator) -> Tuple[FloatArray, FloatArray]:
    logits, labels = _logit_instance(rng)
    epsilon = float(rng.uniform(0.01, 0.5))
    analytic = label_smoothing_loss(logits, labels, epsilon, want_gradient=True).gradient
    assert analytic is not None
    return analytic, numeric_gradient(lambda z: label_smoothing_loss(z, labels, epsilon).value, logits)


def focal_gradient_instance(rng: np.random.Generator) -> Tuple[FloatArray, FloatArray]:
    logits, labels = _logit_instance(rng)
    gamma = float(rng.uniform(0.5, 5.0))
    analytic = focal_loss(logits, labels, gamma, want_gradient=True).gradient
    assert analytic is not None
    return analytic, numeric_gradient(lambda z: focal_loss(z, labels, gamma).value, logits)


def _flatten(params: NetworkParams) -> FloatArray:
    return np.concatenate([array.ravel() for _, array in params.named_arrays()])


def _unflatten(template: NetworkParams, flat: FloatArray) -> NetworkParams:
    arrays = {}
    offset = 0
    for name, array in template.named_arrays():
        arrays[name] = flat[offset : offset + array.size].reshape(array.shape)
        offset += array.size
    return NetworkParams.from_named_arrays(arrays, template.temperature)


def network_gradient_instance(rng: np.random.Generator) -> Tuple[FloatArray, FloatArray]:
    """Both heads end to end: mean supervised contrastive loss plus NLL of the classifier."""
    params, inputs, labels = kink_free_network(rng)
    tau = float(rng.uniform(0.2, 1.0))
    size = labels.size

    def objective(flat: FloatArray) -> float:
        candidate = _unflatten(params, flat)
        contrastive = supcon_loss(forward_embed(candidate, inputs, labels), tau).value / size
        return contrastive + nll_loss(forward_classify(candidate, inputs), labels).value

    contrastive = supcon_loss(forward_embed(params, inputs, labels), tau, want_gradient=True)
    classification = nll_loss(forward_classify(params, inputs), labels, want_gradient=True)
    assert contrastive.gradient is not None and classification.gradient is not None
    through_projection = backward(params, inputs, contrastive.gradient / size, head="projection")
    through_classifier = backward(params, inputs, classification.gradient, head="classifier")
    analytic = np.concatenate(
        [
            (a + b).ravel()
            for (_, a), (_, b) in zip(through_projection.named_arrays(), through_classifier.named_arrays())
        ]
    )
    return analytic, numeric_gradient(objective, _flatten(params))


GRADIENT_FAMILIES: List[Tuple[str, GradientCheck]] = [
    ("gradient_supcon", supcon_gradient_instance),
    ("gradient_nll", nll_gradient_instance),
    ("gradient_label_smoothing", label_smoothing_gradient_instance),
    ("gradient_focal", focal_gradient_instance),
    ("gradient_network", network_gradient_instance),
]


# property sweeps


def check_cosine_identity(rng: np.random.Generator, pairs: int, dims: Sequence[int] = (2, 8, 64)) -> PropertyResult:
    worst = 0.0
    for dim in dims:
        first = random_unit_vectors(rng, pairs, dim)
        second = random_unit_vectors(rng, pairs, dim)
        for z1, z2 in zip(first, second):
            worst = max(worst, abs(cosine_similarity(z1, z2) - cosine_from_distance(z1, z2)))
    return PropertyResult(
        name="cosine_identity", passed=worst < IDENTITY_TOLERANCE, checked=pairs * len(dims), worst=worst
    )


def check_bound(rng: np.random.Generator, batches: int, fault: bool = False) -> PropertyResult:
    smallest_margin = math.inf
    passed = True
    for _ in range(batches):
        report = bound_chain(random_embedding_batch(rng))
        if fault:
            report.l_sc_tau1 = -report.l_sc_tau1
        smallest_margin = min(smallest_margin, report.margin)
        passed = passed and bound_holds(report)
    return PropertyResult(name="contrastive_bound", passed=passed, checked=batches, worst=smallest_margin)


def check_gradients(rng: np.random.Generator, instances: int, fault: bool = False) -> List[PropertyResult]:
    results = []
    for name, family in GRADIENT_FAMILIES:
        worst = 0.0
        for _ in range(instances):
            analytic, numeric = family(rng)
            if fault:
                analytic = -analytic
            worst = max(worst, relative_error(analytic, numeric))
        results.append(PropertyResult(name=name, passed=worst < GRADIENT_TOLERANCE, checked=instances, worst=worst))
    return results


def metric_discrepancies(rng: np.random.Generator) -> List[float]:
    batch = random_probability_batch(rng, int(rng.integers(20, 101)), int(rng.integers(2, 6)))
    while batch.correct.all() or not batch.correct.any():
        batch = random_probability_batch(rng, batch.size, batch.num_classes)
    bins = int(rng.integers(5, 21))
    ranges = int(rng.integers(2, 11))
    bandwidth = float(rng.uniform(0.02, 0.2))
    id_scores = rng.uniform(0.3, 1.0, int(rng.integers(5, 60))).tolist()
    ood_scores = rng.uniform(0.0, 0.8, int(rng.integers(5, 60))).tolist()
    report = metrics.ood_metrics(id_scores, ood_scores)
    fpr, detection, aupr_in, aupr_out = brute_ood(id_scores, ood_scores)
    return [
        abs(metrics.ece(batch, bins) - brute_ece(batch, bins)),
        abs(metrics.sce(batch, bins) - brute_sce(batch, bins)),
        abs(metrics.ace(batch, ranges) - brute_ace(batch, ranges)),
        abs(metrics.smece(batch, bandwidth) - brute_smece(batch, bandwidth)),
        abs(metrics.auc_refinement(batch) - brute_auc(batch)),
        abs(report.fpr_at_tpr95 - fpr),
        abs(report.detection_error - detection),
        abs(report.aupr_in - aupr_in),
        abs(report.aupr_out - aupr_out),
    ]


def check_metric_oracles(rng: np.random.Generator, inputs: int) -> PropertyResult:
    worst = 0.0
    for _ in range(inputs):
        worst = max([worst] + metric_discrepancies(rng))
    return PropertyResult(name="metric_oracles", passed=worst < ORACLE_TOLERANCE, checked=inputs, worst=worst)


def check_calibrated_simulation(rng: np.random.Generator) -> PropertyResult:
    value = metrics.ece(calibrated_batch(rng), metrics.DEFAULT_BINS)
    return PropertyResult(name="calibrated_simulation", passed=value < CALIBRATED_ECE_LIMIT, checked=1, worst=value)


def check_temperature_recovery(rng: np.random.Generator) -> PropertyResult:
    worst = 0.0
    for scale, tolerance in ((1.0, 0.05), (3.0, 0.15)):
        logits, labels = calibrated_logits(rng, 20000, 4, scale)
        worst = max(worst, abs(fit_temperature(logits, labels) - scale) / tolerance)
    return PropertyResult(name="temperature_recovery", passed=worst <= 1.0, checked=2, worst=worst)


def run_property_sweep(seed: int, batches: int = DEFAULT_SWEEP, fault: bool = False) -> VerificationReport:
    """Every property on random instances drawn from one seeded stream; fault flips analytic signs."""
    rng = np.random.default_rng(seed)
    instances = min(MAX_INSTANCES, batches)
    report = VerificationReport()
    report.properties.append(check_cosine_identity(rng, batches))
    report.properties.append(check_bound(rng, batches, fault))
    report.properties.extend(check_gradients(rng, instances, fault))
    report.properties.append(check_metric_oracles(rng, instances))
    report.properties.append(check_calibrated_simulation(rng))
    report.properties.append(check_temperature_recovery(rng))
    for result in report.properties:
        logger.debug("%s: passed=%s checked=%d worst=%.3g", result.name, result.passed, result.checked, result.worst)
    return report
