import logging
import math
from dataclasses import replace
from typing import Dict, List, Tuple

import numpy as np

from refcal.module_utils.errors import (
    EmptyGroup,
    IncompleteMap,
    InvalidImbalance,
    SeverityOutOfRange,
    TooFewSamples,
    UsageError,
)
from refcal.module_utils.models import DatasetMeta, SyntheticDataset
from refcal.module_utils.types import FloatArray, IntArray

logger = logging.getLogger(__name__)

SPLIT_FRACTIONS = {"val": 0.15, "test": 0.15}
MIN_CLASS_COUNT = 2
DEFAULT_SEPARATION = 4.0
DEFAULT_NOISE = 1.0
SEVERITY_LEVELS = (1, 2, 3, 4, 5)
SEVERITY_SCALE = 0.2
OOD_DISPLACEMENT = 3.0


def round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def class_counts(num_classes: int, n_max: int, imbalance_factor: float) -> List[int]:
    """Exponentially decaying counts n_k = n_max * rho^(k / (K - 1)), never below two."""
    return [
        max(MIN_CLASS_COUNT, round_half_up(n_max * imbalance_factor ** (k / (num_classes - 1))))
        for k in range(num_classes)
    ]


def class_centers(num_classes: int, dim: int, separation: float) -> FloatArray:
    """Centers with pairwise distance of at least separation.

    Scaled orthonormal axes when they fit, otherwise a circle in the first two
    coordinates (or evenly spaced points on a line when dim == 1).
    """
    centers = np.zeros((num_classes, dim), dtype=np.float64)
    if dim > 2 and num_classes <= dim:
        centers[np.arange(num_classes), np.arange(num_classes)] = separation / math.sqrt(2.0)
    elif dim >= 2:
        radius = separation / (2.0 * math.sin(math.pi / num_classes))
        angles = 2.0 * math.pi * np.arange(num_classes) / num_classes
        centers[:, 0] = radius * np.cos(angles)
        centers[:, 1] = radius * np.sin(angles)
    else:
        centers[:, 0] = separation * (np.arange(num_classes) - (num_classes - 1) / 2.0)
    return centers


def split_sizes(count: int) -> Dict[str, int]:
    if count < 4:
        held_out = 0
        return {"train": count, "val": held_out, "test": held_out}
    val = max(1, round_half_up(SPLIT_FRACTIONS["val"] * count))
    test = max(1, round_half_up(SPLIT_FRACTIONS["test"] * count))
    return {"train": count - val - test, "val": val, "test": test}


def stratified_split(labels: IntArray, rng: np.random.Generator) -> np.ndarray:
    split = np.empty(labels.shape[0], dtype="<U5")
    for k in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == k))
        sizes = split_sizes(members.size)
        split[members[: sizes["train"]]] = "train"
        split[members[sizes["train"] : sizes["train"] + sizes["val"]]] = "val"
        split[members[sizes["train"] + sizes["val"] :]] = "test"
    return split


def generate_blobs(
    num_classes: int,
    n_max: int,
    dim: int,
    imbalance_factor: float = 1.0,
    class_separation: float = DEFAULT_SEPARATION,
    noise_sigma: float = DEFAULT_NOISE,
    seed: int = 0,
) -> SyntheticDataset:
    if not 0.0 < imbalance_factor <= 1.0:
        raise InvalidImbalance("Imbalance factor must lie in (0, 1], got {0}.".format(imbalance_factor))
    if num_classes < 2:
        raise TooFewSamples("Need at least 2 classes, got {0}.".format(num_classes))
    if n_max < 2 * num_classes:
        raise TooFewSamples("n_max must be at least 2K = {0}, got {1}.".format(2 * num_classes, n_max))
    if dim < 1:
        raise UsageError("Feature dimension must be >= 1, got {0}.".format(dim))

    rng = np.random.default_rng(seed)
    counts = class_counts(num_classes, n_max, imbalance_factor)
    centers = class_centers(num_classes, dim, class_separation)
    labels = np.repeat(np.arange(num_classes, dtype=np.int64), counts)
    features = centers[labels] + noise_sigma * rng.standard_normal((labels.shape[0], dim))
    split = stratified_split(labels, rng)
    logger.debug("Generated %d samples with class counts %s", labels.shape[0], counts)
    return SyntheticDataset(
        features=features,
        labels=labels,
        split=split,
        meta=DatasetMeta(num_classes=num_classes, imbalance_factor=imbalance_factor, seed=seed),
    )


def binary_group(dataset: SyntheticDataset, class_to_group: Dict[int, int]) -> SyntheticDataset:
    missing = sorted(set(range(dataset.meta.num_classes)) - set(class_to_group))
    if missing:
        raise IncompleteMap("Group map misses classes {0}.".format(missing))
    if set(class_to_group.values()) - {0, 1}:
        raise IncompleteMap("Group map must send classes to 0 or 1.")
    lookup = np.array([class_to_group[k] for k in range(dataset.meta.num_classes)], dtype=np.int64)
    labels = lookup[dataset.labels]
    for group in (0, 1):
        if not np.any(labels == group):
            raise EmptyGroup("Group {0} receives no samples.".format(group))
    return replace(dataset, labels=labels, meta=replace(dataset.meta, num_classes=2))


def _training_std(dataset: SyntheticDataset) -> FloatArray:
    features, _ = dataset.subset("train")
    return np.asarray(features.std(axis=0), dtype=np.float64)


def corruption_sigma(dataset: SyntheticDataset, severity: int) -> FloatArray:
    return severity * SEVERITY_SCALE * _training_std(dataset)


def corrupt(dataset: SyntheticDataset, severity: int, seed: int = 0) -> SyntheticDataset:
    """Gaussian noise on the test split, scaled linearly with severity."""
    if severity not in SEVERITY_LEVELS:
        raise SeverityOutOfRange("Severity must be one of 1..5, got {0}.".format(severity))
    rng = np.random.default_rng(seed)
    sigma = corruption_sigma(dataset, severity)
    test = dataset.mask("test")
    features = dataset.features.copy()
    features[test] += sigma * rng.standard_normal((int(test.sum()), dataset.dim))
    return replace(dataset, features=features, meta=replace(dataset.meta, corruption_severity=severity))


def estimated_centers(dataset: SyntheticDataset) -> FloatArray:
    features, labels = dataset.subset("train")
    return np.stack([features[labels == k].mean(axis=0) for k in range(dataset.meta.num_classes)])


def ood_center(dataset: SyntheticDataset) -> Tuple[FloatArray, float]:
    """Center of the out-of-distribution cloud and the within-class spread around it.

    The center sits along the mean class direction (the line equidistant from
    symmetric class arrangements), at three times the largest center norm, which
    is outside the convex hull of the centers.
    """
    centers = estimated_centers(dataset)
    direction = centers.mean(axis=0)
    if np.linalg.norm(direction) < 1e-9 * max(1.0, float(np.abs(centers).max())):
        direction = centers[0] + centers[1]
    if np.linalg.norm(direction) < 1e-12:
        direction = np.zeros(dataset.dim)
        direction[-1] = 1.0
    direction = direction / np.linalg.norm(direction)
    features, labels = dataset.subset("train")
    spread = float(np.sqrt(np.mean((features - centers[labels]) ** 2)))
    return OOD_DISPLACEMENT * float(np.linalg.norm(centers, axis=1).max()) * direction, spread


def generate_ood(dataset: SyntheticDataset, n_ood: int, seed: int = 0) -> FloatArray:
    if n_ood < 1:
        raise TooFewSamples("n_ood must be >= 1, got {0}.".format(n_ood))
    center, spread = ood_center(dataset)
    rng = np.random.default_rng(seed)
    return np.asarray(center + spread * rng.standard_normal((n_ood, dataset.dim)), dtype=np.float64)
