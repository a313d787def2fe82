"""Unit-hypersphere embeddings and the positive/negative partition shared by the losses."""

from typing import Sequence, Tuple

import numpy as np

from refcal.module_utils.errors import NotUnitNorm, ShapeMismatch, ZeroVector
from refcal.module_utils.models import UNIT_NORM_TOLERANCE, EmbeddingBatch
from refcal.module_utils.types import FloatArray, IntArray

ZERO_NORM_THRESHOLD = 1e-12


def _as_matrix(vectors: Sequence[Sequence[float]]) -> FloatArray:
    matrix = np.asarray(vectors, dtype=np.float64)
    if matrix.ndim == 1:
        matrix = matrix[np.newaxis, :]
    if matrix.ndim != 2:
        raise ShapeMismatch("Expected a matrix of row vectors, got shape {0}.".format(matrix.shape))
    return matrix


def row_norms(vectors: FloatArray) -> FloatArray:
    return np.asarray(np.linalg.norm(vectors, axis=1), dtype=np.float64)


def normalize_to_sphere(vectors: Sequence[Sequence[float]]) -> FloatArray:
    matrix = _as_matrix(vectors)
    norms = row_norms(matrix)
    zero_rows = np.flatnonzero(norms < ZERO_NORM_THRESHOLD)
    if zero_rows.size:
        raise ZeroVector("Row {0} has zero norm and cannot be normalized.".format(int(zero_rows[0])))
    return np.asarray(matrix / norms[:, np.newaxis], dtype=np.float64)


def normalization_vjp(vectors: FloatArray, upstream: FloatArray) -> FloatArray:
    """Pull a gradient w.r.t. v/|v| back to v through the Jacobian (I - z z^T) / |v|."""
    norms = row_norms(vectors)
    unit = vectors / norms[:, np.newaxis]
    radial = np.sum(unit * upstream, axis=1, keepdims=True)
    return np.asarray((upstream - unit * radial) / norms[:, np.newaxis], dtype=np.float64)


def _check_unit(vector: FloatArray, name: str) -> None:
    norm = float(np.linalg.norm(vector))
    if abs(norm - 1.0) > UNIT_NORM_TOLERANCE:
        raise NotUnitNorm("{0} has norm {1!r}, expected 1.".format(name, norm))


def cosine_similarity(z1: Sequence[float], z2: Sequence[float]) -> float:
    a = np.asarray(z1, dtype=np.float64)
    b = np.asarray(z2, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeMismatch("Cannot compare vectors of shapes {0} and {1}.".format(a.shape, b.shape))
    _check_unit(a, "z1")
    _check_unit(b, "z2")
    return float(np.dot(a, b))


def cosine_from_distance(z1: Sequence[float], z2: Sequence[float]) -> float:
    """Right-hand side of the unit-sphere identity z1.z2 = (2 - |z1 - z2|^2) / 2."""
    difference = np.asarray(z1, dtype=np.float64) - np.asarray(z2, dtype=np.float64)
    return 0.5 * (2.0 - float(np.dot(difference, difference)))


def partition_sets(batch: EmbeddingBatch, anchor: int) -> Tuple[IntArray, IntArray]:
    if not 0 <= anchor < batch.size:
        raise ShapeMismatch("Anchor {0} outside batch of size {1}.".format(anchor, batch.size))
    indices = np.arange(batch.size, dtype=np.int64)
    same = batch.labels == batch.labels[anchor]
    positives = indices[same & (indices != anchor)]
    negatives = indices[~same]
    return positives, negatives


def similarity_matrix(vectors: FloatArray) -> FloatArray:
    return np.asarray(vectors @ vectors.T, dtype=np.float64)


def squared_distance_matrix(vectors: FloatArray) -> FloatArray:
    # row by row: exact differences without an N x N x d temporary
    distances = np.empty((vectors.shape[0], vectors.shape[0]), dtype=np.float64)
    for row, anchor in enumerate(vectors):
        difference = vectors - anchor
        distances[row] = np.einsum("ij,ij->i", difference, difference)
    return distances


def positive_mask(labels: IntArray) -> np.ndarray:
    same = labels[:, np.newaxis] == labels[np.newaxis, :]
    np.fill_diagonal(same, False)
    return same


def negative_mask(labels: IntArray) -> np.ndarray:
    return np.asarray(labels[:, np.newaxis] != labels[np.newaxis, :])
