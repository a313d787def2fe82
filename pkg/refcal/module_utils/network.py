"""Encoder, unit-norm projection head and linear classifier with manual backpropagation.

The encoder is a stack of affine layers, rectified on every hidden layer and linear
on the representation layer. Stage 1 trains through the projection head, stage 2
trains the classifier on the (pre-projection) representation.
"""

import logging
import math
from typing import List, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize_scalar

from refcal.module_utils.embeddings import normalization_vjp, normalize_to_sphere
from refcal.module_utils.errors import EmptyValidation, ShapeMismatch
from refcal.module_utils.losses import nll_loss
from refcal.module_utils.models import EmbeddingBatch, Layer, NetworkGradients, NetworkParams, OptimizerState
from refcal.module_utils.types import FloatArray, IntArray

logger = logging.getLogger(__name__)

HEADS = ("projection", "classifier")
TEMPERATURE_BOUNDS = (0.05, 20.0)
TEMPERATURE_TOLERANCE = 1e-4


def glorot_layer(rng: np.random.Generator, fan_in: int, fan_out: int) -> Layer:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return Layer(
        weight=rng.uniform(-limit, limit, size=(fan_in, fan_out)),
        bias=np.zeros(fan_out, dtype=np.float64),
    )


def init_params(
    input_dim: int,
    num_classes: int,
    hidden_dims: Sequence[int] = (64,),
    representation_dim: int = 32,
    projection_dim: int = 16,
    seed: int = 0,
) -> NetworkParams:
    rng = np.random.default_rng(seed)
    widths = [input_dim] + list(hidden_dims) + [representation_dim]
    encoder = [glorot_layer(rng, fan_in, fan_out) for fan_in, fan_out in zip(widths, widths[1:])]
    return NetworkParams(
        encoder=encoder,
        projection=glorot_layer(rng, representation_dim, projection_dim),
        classifier=glorot_layer(rng, representation_dim, num_classes),
    )


def _check_inputs(params: NetworkParams, inputs: Sequence[Sequence[float]]) -> FloatArray:
    matrix = np.asarray(inputs, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[1] != params.input_dim:
        raise ShapeMismatch(
            "Network expects inputs of shape (B, {0}), got {1}.".format(params.input_dim, matrix.shape)
        )
    return matrix


def encode(params: NetworkParams, inputs: FloatArray) -> Tuple[FloatArray, List[FloatArray], List[FloatArray]]:
    """Representation, layer inputs and pre-activations of the encoder."""
    hidden = inputs
    layer_inputs: List[FloatArray] = []
    pre_activations: List[FloatArray] = []
    last = len(params.encoder) - 1
    for index, layer in enumerate(params.encoder):
        layer_inputs.append(hidden)
        pre = hidden @ layer.weight + layer.bias
        pre_activations.append(pre)
        hidden = pre if index == last else np.maximum(pre, 0.0)
    return hidden, layer_inputs, pre_activations


def representation(params: NetworkParams, inputs: Sequence[Sequence[float]]) -> FloatArray:
    return encode(params, _check_inputs(params, inputs))[0]


def embed(params: NetworkParams, inputs: Sequence[Sequence[float]]) -> FloatArray:
    features = representation(params, inputs)
    return normalize_to_sphere(features @ params.projection.weight + params.projection.bias)


def forward_embed(params: NetworkParams, inputs: Sequence[Sequence[float]], labels: Sequence[int]) -> EmbeddingBatch:
    vectors = embed(params, inputs)
    label_array = np.asarray(labels, dtype=np.int64)
    if label_array.shape != (vectors.shape[0],):
        raise ShapeMismatch("Expected {0} labels, got {1}.".format(vectors.shape[0], label_array.shape))
    num_classes = int(label_array.max()) + 1 if label_array.size else 0
    return EmbeddingBatch(vectors=vectors, labels=label_array, num_classes=max(num_classes, params.num_classes))


def forward_classify(params: NetworkParams, inputs: Sequence[Sequence[float]]) -> FloatArray:
    features = representation(params, inputs)
    return np.asarray((features @ params.classifier.weight + params.classifier.bias) / params.temperature)


def _zeros_like(layer: Layer) -> Layer:
    return Layer(weight=np.zeros_like(layer.weight), bias=np.zeros_like(layer.bias))


def backward(
    params: NetworkParams,
    inputs: Sequence[Sequence[float]],
    upstream: FloatArray,
    head: str,
    frozen_encoder: bool = False,
) -> NetworkGradients:
    """Reverse-mode gradients of a loss whose gradient w.r.t. the head output is upstream.

    For the projection head the upstream gradient is taken w.r.t. the unit embeddings
    and the normalization Jacobian is applied here. For the classifier head it is taken
    w.r.t. the temperature-scaled logits.
    """
    if head not in HEADS:
        raise ShapeMismatch("Unknown head '{0}', expected one of {1}.".format(head, ", ".join(HEADS)))
    matrix = _check_inputs(params, inputs)
    features, layer_inputs, pre_activations = encode(params, matrix)
    projection_grad = _zeros_like(params.projection)
    classifier_grad = _zeros_like(params.classifier)

    if head == "projection":
        raw = features @ params.projection.weight + params.projection.bias
        if upstream.shape != raw.shape:
            raise ShapeMismatch("Upstream gradient shape {0} != embedding shape {1}.".format(upstream.shape, raw.shape))
        d_raw = normalization_vjp(raw, upstream)
        projection_grad = Layer(weight=features.T @ d_raw, bias=d_raw.sum(axis=0))
        d_features = d_raw @ params.projection.weight.T
    else:
        expected = (matrix.shape[0], params.num_classes)
        if upstream.shape != expected:
            raise ShapeMismatch("Upstream gradient shape {0} != logits shape {1}.".format(upstream.shape, expected))
        d_logits = upstream / params.temperature
        classifier_grad = Layer(weight=features.T @ d_logits, bias=d_logits.sum(axis=0))
        d_features = d_logits @ params.classifier.weight.T

    encoder_grads = [_zeros_like(layer) for layer in params.encoder]
    if not frozen_encoder:
        d_hidden = d_features
        last = len(params.encoder) - 1
        for index in reversed(range(len(params.encoder))):
            d_pre = d_hidden if index == last else d_hidden * (pre_activations[index] > 0)
            encoder_grads[index] = Layer(weight=layer_inputs[index].T @ d_pre, bias=d_pre.sum(axis=0))
            d_hidden = d_pre @ params.encoder[index].weight.T

    return NetworkGradients(encoder=encoder_grads, projection=projection_grad, classifier=classifier_grad)


def sgd_step(params: NetworkParams, grads: NetworkGradients, state: OptimizerState) -> NetworkParams:
    """Momentum SGD: v <- momentum * v + g, p <- p - lr * v. Velocities and the step count live in state."""
    updated = params.copy()
    for (name, value), (grad_name, grad) in zip(updated.named_arrays(), grads.named_arrays()):
        if name != grad_name or value.shape != grad.shape:
            raise ShapeMismatch(
                "Gradient {0} {1} does not match parameter {2} {3}.".format(grad_name, grad.shape, name, value.shape)
            )
        velocity = state.velocity.get(name)
        velocity = grad.copy() if velocity is None else state.momentum * velocity + grad
        state.velocity[name] = velocity
        value -= state.lr * velocity
    state.steps += 1
    return updated


def scaled_nll(logits: FloatArray, labels: IntArray, temperature: float) -> float:
    return nll_loss(logits / temperature, labels).value


def fit_temperature(logits: Sequence[Sequence[float]], labels: Sequence[int]) -> float:
    """Single temperature minimizing validation NLL, searched over log T in a fixed bracket."""
    matrix = np.asarray(logits, dtype=np.float64)
    label_array = np.asarray(labels, dtype=np.int64)
    if matrix.ndim != 2 or matrix.shape[0] == 0:
        raise EmptyValidation("Temperature scaling needs a non-empty validation split.")

    def objective(log_temperature: float) -> float:
        return scaled_nll(matrix, label_array, math.exp(log_temperature))

    result = minimize_scalar(
        objective,
        bounds=(math.log(TEMPERATURE_BOUNDS[0]), math.log(TEMPERATURE_BOUNDS[1])),
        method="bounded",
        options={"xatol": TEMPERATURE_TOLERANCE},
    )
    temperature = math.exp(float(result.x))
    if objective(float(result.x)) > objective(0.0):
        logger.warning("Temperature search did not improve on T=1, keeping T=1.")
        temperature = 1.0
    logger.debug("Fitted temperature %.4f", temperature)
    return temperature
