"""Training regimes, evaluation into reliability reports and the post-hoc pitfall transform."""

import logging
import math
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import softmax

from refcal.module_utils import metrics
from refcal.module_utils.datagen import corrupt, generate_ood
from refcal.module_utils.errors import DegenerateSplit, EmptySplit, RowArgmaxMismatch, RowNotStochastic
from refcal.module_utils.losses import calibration_loss, refinement_loss, supcon_loss
from refcal.module_utils.models import (
    STOCHASTIC_TOLERANCE,
    MetricConfig,
    NetworkParams,
    OptimizerState,
    ProbabilityBatch,
    ReliabilityReport,
    RobustnessReport,
    SeverityResult,
    Stage2Config,
    SyntheticDataset,
    TrainConfig,
    TrainingLogEntry,
)
from refcal.module_utils.network import (
    backward,
    fit_temperature,
    forward_classify,
    forward_embed,
    init_params,
    sgd_step,
)
from refcal.module_utils.types import FloatArray, IntArray

logger = logging.getLogger(__name__)

STAGE_REFINEMENT = "refinement"
STAGE_CALIBRATION = "calibration"
STAGE_BASELINE = "baseline"
# independent random streams derived from the run seed
SAMPLER_STREAM = 1
SHUFFLE_STREAM = 2
MONITOR_STREAM = 3
MIN_PER_CLASS = 2
MONITOR_PER_CLASS = 128

TrainingLog = List[TrainingLogEntry]


def predict_proba(params: NetworkParams, features: FloatArray) -> FloatArray:
    return np.asarray(softmax(forward_classify(params, features), axis=1), dtype=np.float64)


def class_balanced_batches(labels: IntArray, batch_size: int, rng: np.random.Generator) -> Iterator[IntArray]:
    """One epoch of batches holding the same number (at least two) of samples of every present class.

    Classes smaller than their share are drawn with replacement.
    """
    present = np.unique(labels)
    per_class = max(MIN_PER_CLASS, batch_size // present.size)
    members = [np.flatnonzero(labels == k) for k in present]
    for _ in range(math.ceil(labels.shape[0] / batch_size)):
        yield np.concatenate([rng.choice(pool, size=per_class, replace=pool.size < per_class) for pool in members])


def shuffled_batches(size: int, batch_size: int, rng: np.random.Generator) -> Iterator[IntArray]:
    order = rng.permutation(size)
    for start in range(0, size, batch_size):
        yield order[start : start + batch_size]


def monitor_subset(labels: IntArray, rng: np.random.Generator) -> IntArray:
    """Sorted training indices the stage-1 losses are logged on, at most MONITOR_PER_CLASS of every class.

    The whole training split when every class fits.
    """
    chosen = []
    for k in np.unique(labels):
        pool = np.flatnonzero(labels == k)
        if pool.size > MONITOR_PER_CLASS:
            pool = rng.choice(pool, size=MONITOR_PER_CLASS, replace=False)
        chosen.append(pool)
    return np.sort(np.concatenate(chosen))


def _training_split(dataset: SyntheticDataset) -> Tuple[FloatArray, IntArray]:
    features, labels = dataset.subset("train")
    if labels.size == 0:
        raise EmptySplit("The training split is empty.")
    return features, labels


def _validation_metrics(
    params: NetworkParams, dataset: SyntheticDataset, bins: int
) -> Tuple[Optional[float], Optional[float], Optional[float]]:
    features, labels = dataset.subset("val")
    if labels.size == 0:
        return None, None, None
    batch = ProbabilityBatch(probs=predict_proba(params, features), labels=labels)
    try:
        auc: Optional[float] = metrics.auc_refinement(batch)
    except DegenerateSplit:
        auc = None
    return metrics.top1(batch), auc, metrics.ece(batch, bins)


def run_stage1(
    params: NetworkParams, dataset: SyntheticDataset, config: TrainConfig
) -> Tuple[NetworkParams, TrainingLog]:
    """Supervised contrastive training of encoder and projection head."""
    stage = config.stage1
    features, labels = _training_split(dataset)
    rng = np.random.default_rng([config.seed, SAMPLER_STREAM])
    monitored = monitor_subset(labels, np.random.default_rng([config.seed, MONITOR_STREAM]))
    state = OptimizerState(lr=stage.lr, momentum=stage.momentum)
    log: TrainingLog = []

    def record(epoch: int) -> None:
        embedded = forward_embed(params, features[monitored], labels[monitored])
        entry = TrainingLogEntry(
            epoch=epoch,
            stage=STAGE_REFINEMENT,
            loss=supcon_loss(embedded, stage.tau).value / embedded.size,
            refinement=refinement_loss(embedded).value,
        )
        logger.debug("stage 1 epoch %d: supcon %.6f, refinement %.6f", epoch, entry.loss, entry.refinement)
        log.append(entry)

    record(0)
    for epoch in range(1, stage.epochs + 1):
        for index in class_balanced_batches(labels, stage.batch_size, rng):
            batch = forward_embed(params, features[index], labels[index])
            loss = supcon_loss(batch, stage.tau, want_gradient=True)
            assert loss.gradient is not None
            grads = backward(params, features[index], loss.gradient / index.size, head="projection")
            params = sgd_step(params, grads, state)
        record(epoch)
    return params, log


def run_classifier_stage(
    params: NetworkParams,
    dataset: SyntheticDataset,
    stage: Stage2Config,
    seed: int,
    selection: str,
    stage_name: str,
    frozen_encoder: bool,
    bins: int = metrics.DEFAULT_BINS,
) -> Tuple[NetworkParams, TrainingLog]:
    """Minibatch training of the classifier (and the encoder unless frozen) with the calibration loss.

    Epoch 0 is the starting point. Under best_val selection the epoch with the
    highest validation Top-1 wins, the earliest one on ties.
    """
    features, labels = _training_split(dataset)
    rng = np.random.default_rng([seed, SHUFFLE_STREAM])
    state = OptimizerState(lr=stage.lr, momentum=stage.momentum)
    log: TrainingLog = []
    best: Optional[Tuple[float, NetworkParams]] = None

    for epoch in range(stage.epochs + 1):
        if epoch:
            for index in shuffled_batches(labels.size, stage.batch_size, rng):
                logits = forward_classify(params, features[index])
                loss = calibration_loss(stage.loss, logits, labels[index], want_gradient=True)
                assert loss.gradient is not None
                grads = backward(
                    params, features[index], loss.gradient, head="classifier", frozen_encoder=frozen_encoder
                )
                params = sgd_step(params, grads, state)
        train_loss = calibration_loss(stage.loss, forward_classify(params, features), labels).value
        val_top1, val_auc, val_ece = _validation_metrics(params, dataset, bins)
        log.append(
            TrainingLogEntry(
                epoch=epoch, stage=stage_name, loss=train_loss, val_top1=val_top1, val_auc=val_auc, val_ece=val_ece
            )
        )
        logger.debug("%s epoch %d: loss %.6f, val top1 %s", stage_name, epoch, train_loss, val_top1)
        if val_top1 is not None and (best is None or val_top1 > best[0]):
            best = (val_top1, params)

    if selection == "best_val":
        if best is None:
            logger.warning("No validation split, keeping the final-epoch parameters.")
        else:
            params = best[1]

    if stage.apply_temperature_scaling:
        val_features, val_labels = dataset.subset("val")
        temperature = fit_temperature(forward_classify(params, val_features), val_labels)
        params = params.with_temperature(temperature)
        logger.info("Temperature scaling fitted T=%.4f on %d validation samples", temperature, val_labels.size)
    return params, log


def _initial_params(dataset: SyntheticDataset, config: TrainConfig) -> NetworkParams:
    architecture = config.architecture
    return init_params(
        input_dim=dataset.dim,
        num_classes=dataset.meta.num_classes,
        hidden_dims=architecture.hidden_dims,
        representation_dim=architecture.representation_dim,
        projection_dim=architecture.projection_dim,
        seed=config.seed,
    )


def train_refcal(dataset: SyntheticDataset, config: TrainConfig) -> Tuple[NetworkParams, TrainingLog]:
    config.validate()
    params = _initial_params(dataset, config)
    log: TrainingLog = []
    if config.stage1.epochs > 0:
        params, log = run_stage1(params, dataset, config)
    else:
        logger.info("Stage 1 skipped, the classifier is trained on a random frozen encoder.")
    params, stage2_log = run_classifier_stage(
        params, dataset, config.stage2, config.seed, config.selection, STAGE_CALIBRATION, frozen_encoder=True
    )
    return params, log + stage2_log


def train_baseline(dataset: SyntheticDataset, config: TrainConfig) -> Tuple[NetworkParams, TrainingLog]:
    config.validate()
    return run_classifier_stage(
        _initial_params(dataset, config),
        dataset,
        config.stage2,
        config.seed,
        config.selection,
        STAGE_BASELINE,
        frozen_encoder=False,
    )


def report_from_predictions(
    batch: ProbabilityBatch, metric_config: MetricConfig, config_fingerprint: str, seed: Optional[int]
) -> ReliabilityReport:
    try:
        auc: Optional[float] = metrics.auc_refinement(batch)
    except DegenerateSplit as e:
        logger.warning("%s AUC is reported as null.", e.message)
        auc = None
    ranges = metric_config.ace_ranges
    if batch.size < ranges:
        logger.warning("Only %d samples, computing ACE over %d ranges instead of %d.", batch.size, batch.size, ranges)
        ranges = batch.size
    table = metrics.reliability_table(batch, metric_config.bins)
    return ReliabilityReport(
        top1=metrics.top1(batch),
        auc=auc,
        ece=table.expected_calibration_error(),
        sce=metrics.sce(batch, metric_config.bins),
        ace=metrics.ace(batch, ranges),
        smece=metrics.smece(batch, metric_config.smece_bandwidth),
        mce=table.maximum_calibration_error(),
        nll=metrics.nll(batch),
        bin_table=table,
        config_fingerprint=config_fingerprint,
        seed=seed,
        predictions=batch,
    )


def evaluate(
    params: NetworkParams,
    dataset: SyntheticDataset,
    split: str,
    metric_config: Optional[MetricConfig] = None,
    config_fingerprint: str = "",
    seed: Optional[int] = None,
) -> ReliabilityReport:
    features, labels = dataset.subset(split)
    if labels.size == 0:
        raise EmptySplit("The {0} split is empty.".format(split))
    batch = ProbabilityBatch.create(predict_proba(params, features), labels)
    return report_from_predictions(batch, metric_config or MetricConfig(), config_fingerprint, seed)


def confusion_rows(batch: ProbabilityBatch) -> FloatArray:
    """Row k: distribution of true labels among samples predicted as k, one-hot when k is never predicted."""
    k = batch.num_classes
    counts = np.zeros((k, k), dtype=np.float64)
    np.add.at(counts, (batch.predictions, batch.labels), 1.0)
    totals = counts.sum(axis=1)
    rows = np.eye(k, dtype=np.float64)
    seen = totals > 0
    rows[seen] = counts[seen] / totals[seen, np.newaxis]
    return rows


def validate_confusion_rows(rows: FloatArray, num_classes: int) -> None:
    if rows.shape != (num_classes, num_classes):
        raise RowNotStochastic("Expected {0} confusion rows of length {0}, got {1}.".format(num_classes, rows.shape))
    for index, row in enumerate(rows):
        if np.any(row < 0) or abs(float(row.sum()) - 1.0) > STOCHASTIC_TOLERANCE:
            raise RowNotStochastic("Confusion row {0} is not a probability vector.".format(index), row=index)
        if int(np.argmax(row)) != index:
            raise RowArgmaxMismatch(
                "Confusion row {0} peaks at class {1}, replacing would change the prediction.".format(
                    index, int(np.argmax(row))
                ),
                row=index,
            )


def pitfall_transform(predictions: ProbabilityBatch, rows: Sequence[Sequence[float]]) -> ProbabilityBatch:
    """Replace each probability vector by the confusion row of its predicted class."""
    matrix = np.asarray(rows, dtype=np.float64)
    validate_confusion_rows(matrix, predictions.num_classes)
    return ProbabilityBatch(probs=matrix[predictions.predictions], labels=predictions.labels.copy())


def _severity_result(params: NetworkParams, dataset: SyntheticDataset, severity: int, bins: int) -> SeverityResult:
    features, labels = dataset.subset("test")
    if labels.size == 0:
        raise EmptySplit("The test split is empty.")
    batch = ProbabilityBatch(probs=predict_proba(params, features), labels=labels)
    try:
        auc: Optional[float] = metrics.auc_refinement(batch)
    except DegenerateSplit:
        auc = None
    return SeverityResult(severity=severity, top1=metrics.top1(batch), auc=auc, ece=metrics.ece(batch, bins))


def evaluate_robustness(
    params: NetworkParams,
    dataset: SyntheticDataset,
    severities: Sequence[int] = (1, 2, 3, 4, 5),
    n_ood: int = 500,
    seed: int = 0,
    metric_config: Optional[MetricConfig] = None,
) -> RobustnessReport:
    """Test-split metrics under each corruption severity (0 is the clean split) and OOD detection by max softmax."""
    bins = (metric_config or MetricConfig()).bins
    results = [_severity_result(params, dataset, 0, bins)]
    for severity in severities:
        results.append(_severity_result(params, corrupt(dataset, severity, seed), severity, bins))

    features, _ = dataset.subset("test")
    id_scores = predict_proba(params, features).max(axis=1)
    ood_scores = predict_proba(params, generate_ood(dataset, n_ood, seed)).max(axis=1)
    return RobustnessReport(severities=results, ood=metrics.ood_metrics(id_scores, ood_scores))
