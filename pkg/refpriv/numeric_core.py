"""Dense MLP forward/backward, losses and optimizers shared by every trainer.

All arrays are float64. Weight matrices are stored as (fan_in, fan_out) so a
layer computes ``a @ W + b``. Backward passes take per-example weights, and
optionally an upstream gradient on the output probabilities, so that
weighted risks and extra regularizers (adversarial, MMD) go through one code
path.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field
from enum import StrEnum

import numpy as np
import numpy.typing as npt
from scipy.special import expit, softmax

from .const import ADAM_BETA1, ADAM_BETA2, ADAM_EPS, LOG_CLAMP
from .exceptions import DataValidationError, NumericError, ShapeError

_LOGGER = logging.getLogger(__name__)

type Matrix = npt.NDArray[np.float64]
type Vector = npt.NDArray[np.float64]
type Labels = npt.NDArray[np.int64]


class OutputActivation(StrEnum):
    """Activation applied to the last layer."""

    SOFTMAX = "softmax"
    SIGMOID = "sigmoid"


class OptimizerKind(StrEnum):
    """Supported optimizers."""

    SGD = "sgd"
    ADAM = "adam"


@dataclass
class MlpModel:
    """Layered dense network; hidden layers use ReLU."""

    layer_sizes: tuple[int, ...]
    weights: list[Matrix]
    biases: list[Vector]
    output_activation: OutputActivation = OutputActivation.SOFTMAX

    def __post_init__(self) -> None:
        if len(self.layer_sizes) < 2:
            raise ShapeError("an MLP needs at least an input and an output layer")
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(
            self.weights
        ):
            raise ShapeError("weights/biases do not match layer_sizes")
        for index, (weight, bias) in enumerate(zip(self.weights, self.biases)):
            expected = (self.layer_sizes[index], self.layer_sizes[index + 1])
            if weight.shape != expected or bias.shape != (expected[1],):
                raise ShapeError(
                    f"layer {index}: expected weight {expected}, got {weight.shape}"
                )

    @property
    def input_size(self) -> int:
        return self.layer_sizes[0]

    @property
    def class_count(self) -> int:
        return self.layer_sizes[-1]

    @property
    def parameter_count(self) -> int:
        return parameter_count(self.layer_sizes)

    def copy(self) -> MlpModel:
        """Return a deep copy."""
        return MlpModel(
            layer_sizes=self.layer_sizes,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            output_activation=self.output_activation,
        )


@dataclass(frozen=True)
class ForwardCache:
    """Post-activation outputs of every layer, input first."""

    activations: list[Matrix]

    @property
    def outputs(self) -> Matrix:
        return self.activations[-1]


@dataclass
class Gradients:
    """Gradient record matching an MlpModel's parameters."""

    weights: list[Matrix]
    biases: list[Vector]
    inputs: Matrix | None = None

    @classmethod
    def zeros_like(cls, model: MlpModel) -> Gradients:
        return cls(
            weights=[np.zeros_like(w) for w in model.weights],
            biases=[np.zeros_like(b) for b in model.biases],
        )

    def __add__(self, other: Gradients) -> Gradients:
        return Gradients(
            weights=[a + b for a, b in zip(self.weights, other.weights)],
            biases=[a + b for a, b in zip(self.biases, other.biases)],
        )

    def scaled(self, factor: float) -> Gradients:
        return Gradients(
            weights=[w * factor for w in self.weights],
            biases=[b * factor for b in self.biases],
        )

    def flatten(self) -> Vector:
        """Concatenate parameters in (W0, b0, W1, b1, ...) order."""
        parts: list[Vector] = []
        for weight, bias in zip(self.weights, self.biases):
            parts.append(weight.ravel())
            parts.append(bias)
        return np.concatenate(parts)

    def norm(self) -> float:
        return float(np.linalg.norm(self.flatten()))

    @classmethod
    def unflatten(cls, model: MlpModel, vector: Vector) -> Gradients:
        """Inverse of flatten for a model's parameter shapes."""
        if vector.shape != (model.parameter_count,):
            raise ShapeError(
                f"expected {model.parameter_count} entries, got {vector.shape}"
            )
        weights: list[Matrix] = []
        biases: list[Vector] = []
        offset = 0
        for weight, bias in zip(model.weights, model.biases):
            weights.append(vector[offset : offset + weight.size].reshape(weight.shape))
            offset += weight.size
            biases.append(vector[offset : offset + bias.size].copy())
            offset += bias.size
        return cls(weights=weights, biases=biases)


@dataclass
class OptimizerState:
    """Optimizer hyper-parameters and per-parameter moment buffers."""

    kind: OptimizerKind
    learning_rate: float
    first_moments: list[Matrix] = field(default_factory=list)
    second_moments: list[Matrix] = field(default_factory=list)
    step_count: int = 0


def parameter_count(layer_sizes: Sequence[int]) -> int:
    """Number of weights plus biases of a dense network."""
    return sum(
        fan_in * fan_out + fan_out
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:])
    )


def init_mlp(
    layer_sizes: Sequence[int],
    rng: np.random.Generator,
    output_activation: OutputActivation = OutputActivation.SOFTMAX,
) -> MlpModel:
    """Glorot-uniform weights drawn from ``rng``, zero biases."""
    sizes = tuple(int(size) for size in layer_sizes)
    weights: list[Matrix] = []
    biases: list[Vector] = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(sizes, weights, biases, output_activation)


def forward(model: MlpModel, batch: Matrix) -> tuple[Matrix, ForwardCache]:
    """Run the network; returns output probabilities and the activation cache."""
    if batch.ndim != 2 or batch.shape[1] != model.input_size:
        raise ShapeError(
            f"batch has shape {batch.shape}, model expects {model.input_size} columns"
        )
    activations: list[Matrix] = [np.asarray(batch, dtype=np.float64)]
    last = len(model.weights) - 1
    current = activations[0]
    for index, (weight, bias) in enumerate(zip(model.weights, model.biases)):
        pre = current @ weight + bias
        if index < last:
            current = np.maximum(pre, 0.0)
        elif model.output_activation is OutputActivation.SOFTMAX:
            current = softmax(pre, axis=1)
        else:
            current = expit(pre)
        activations.append(current)
    return current, ForwardCache(activations)


def predict_proba(model: MlpModel, batch: Matrix) -> Matrix:
    """Forward pass without keeping the cache."""
    probs, _ = forward(model, batch)
    return probs


def predict_labels(confidences: Matrix) -> Labels:
    """Argmax per row; ties go to the lowest class index."""
    return np.argmax(confidences, axis=1).astype(np.int64)


def cross_entropy(confidences: Matrix, labels: Labels) -> tuple[float, Vector]:
    """Mean and per-example categorical cross-entropy with log clamping."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (confidences.shape[0],):
        raise ShapeError("labels length does not match the number of rows")
    if labels.size and (labels.min() < 0 or labels.max() >= confidences.shape[1]):
        raise IndexError(
            f"label out of range for {confidences.shape[1]} classes"
        )
    picked = confidences[np.arange(labels.size), labels]
    per_example = -np.log(np.maximum(picked, LOG_CLAMP))
    return float(per_example.mean()), per_example


def binary_cross_entropy(probs: Matrix, targets: Vector) -> tuple[float, Vector]:
    """Mean and per-example log loss for a single sigmoid output column."""
    p = probs[:, 0]
    per_example = -(
        targets * np.log(np.maximum(p, LOG_CLAMP))
        + (1.0 - targets) * np.log(np.maximum(1.0 - p, LOG_CLAMP))
    )
    return float(per_example.mean()), per_example


def _layer_deltas(model: MlpModel, cache: ForwardCache, dlogits: Matrix) -> list[Matrix]:
    """Gradient of the loss w.r.t. every layer's pre-activation, first layer first."""
    deltas: list[Matrix] = [dlogits]
    for index in range(len(model.weights) - 1, 0, -1):
        upstream = deltas[0] @ model.weights[index].T
        deltas.insert(0, upstream * (cache.activations[index] > 0.0))
    return deltas


def backward_logits(
    model: MlpModel,
    cache: ForwardCache,
    dlogits: Matrix,
    *,
    input_grad: bool = False,
) -> Gradients:
    """Back-propagate a gradient given on the last layer's pre-activation."""
    deltas = _layer_deltas(model, cache, dlogits)
    weights = [cache.activations[i].T @ delta for i, delta in enumerate(deltas)]
    biases = [delta.sum(axis=0) for delta in deltas]
    inputs = deltas[0] @ model.weights[0].T if input_grad else None
    return Gradients(weights=weights, biases=biases, inputs=inputs)


def output_dlogits(
    model: MlpModel,
    cache: ForwardCache,
    labels: npt.ArrayLike,
    example_weights: Vector,
    output_grad: Matrix | None = None,
) -> Matrix:
    """Pre-activation gradient of sum_i w_i * loss_i plus an optional output term.

    For softmax outputs the loss is categorical cross-entropy on integer labels;
    for sigmoid outputs it is binary log loss on 0/1 targets. ``output_grad`` is
    the gradient of any extra objective w.r.t. the output probabilities.
    """
    probs = cache.outputs
    batch = probs.shape[0]
    example_weights = np.asarray(example_weights, dtype=np.float64)
    if example_weights.shape != (batch,):
        raise ShapeError(
            f"expected {batch} example weights, got {example_weights.shape}"
        )
    if np.any(example_weights < 0.0):
        raise DataValidationError("example weights must be non-negative")
    if model.output_activation is OutputActivation.SOFTMAX:
        label_array = np.asarray(labels, dtype=np.int64)
        if label_array.size and (
            label_array.min() < 0 or label_array.max() >= model.class_count
        ):
            raise IndexError(f"label out of range for {model.class_count} classes")
        dlogits = probs.copy()
        dlogits[np.arange(batch), label_array] -= 1.0
        dlogits *= example_weights[:, None]
        if output_grad is not None:
            inner = np.sum(probs * output_grad, axis=1, keepdims=True)
            dlogits += probs * (output_grad - inner)
    else:
        targets = np.asarray(labels, dtype=np.float64).reshape(batch, 1)
        dlogits = (probs - targets) * example_weights[:, None]
        if output_grad is not None:
            dlogits += output_grad * probs * (1.0 - probs)
    return dlogits


def backward(
    model: MlpModel,
    cache: ForwardCache,
    labels: npt.ArrayLike,
    example_weights: Vector,
    *,
    output_grad: Matrix | None = None,
    input_grad: bool = False,
) -> Gradients:
    """Gradients of sum_i example_weights[i] * loss_i w.r.t. every parameter."""
    dlogits = output_dlogits(model, cache, labels, example_weights, output_grad)
    return backward_logits(model, cache, dlogits, input_grad=input_grad)


def per_example_gradients(
    model: MlpModel, batch: Matrix, labels: npt.ArrayLike
) -> list[Gradients]:
    """One gradient record per example, each with weight 1."""
    if batch.shape[0] == 0:
        raise ShapeError("per-example gradients need a non-empty batch")
    _, cache = forward(model, batch)
    dlogits = output_dlogits(model, cache, labels, np.ones(batch.shape[0]))
    deltas = _layer_deltas(model, cache, dlogits)
    records: list[Gradients] = []
    for row in range(batch.shape[0]):
        records.append(
            Gradients(
                weights=[
                    np.outer(cache.activations[i][row], delta[row])
                    for i, delta in enumerate(deltas)
                ],
                biases=[delta[row].copy() for delta in deltas],
            )
        )
    return records


def per_example_grad_norms(
    model: MlpModel, cache: ForwardCache, labels: npt.ArrayLike
) -> Vector:
    """L2 norm of every example's full gradient, without materializing it.

    A dense layer's per-example weight gradient is the outer product
    a_i delta_i^T, whose Frobenius norm is |a_i| |delta_i|.
    """
    batch = cache.outputs.shape[0]
    dlogits = output_dlogits(model, cache, labels, np.ones(batch))
    squared = np.zeros(batch)
    for index, delta in enumerate(_layer_deltas(model, cache, dlogits)):
        delta_sq = np.sum(delta * delta, axis=1)
        act_sq = np.sum(cache.activations[index] ** 2, axis=1)
        squared += act_sq * delta_sq + delta_sq
    return np.sqrt(squared)


def init_optimizer(
    model: MlpModel, kind: OptimizerKind, learning_rate: float
) -> OptimizerState:
    """Fresh optimizer state with zeroed moment buffers (Adam only)."""
    state = OptimizerState(kind=kind, learning_rate=learning_rate)
    if kind is OptimizerKind.ADAM:
        for weight, bias in zip(model.weights, model.biases):
            state.first_moments.extend([np.zeros_like(weight), np.zeros_like(bias)])
            state.second_moments.extend([np.zeros_like(weight), np.zeros_like(bias)])
    return state


def optimizer_step(
    model: MlpModel, state: OptimizerState, grads: Gradients
) -> tuple[MlpModel, OptimizerState]:
    """Apply one update in place and return the (same) model and state."""
    if len(grads.weights) != len(model.weights):
        raise ShapeError("gradient record does not match the model")
    for index, (g_w, g_b) in enumerate(zip(grads.weights, grads.biases)):
        if g_w.shape != model.weights[index].shape or g_b.shape != model.biases[index].shape:
            raise ShapeError(f"gradient shape mismatch at layer {index}")
        if not (np.all(np.isfinite(g_w)) and np.all(np.isfinite(g_b))):
            raise NumericError(f"non-finite gradient at layer {index}", index)

    state.step_count += 1
    params = [p for pair in zip(model.weights, model.biases) for p in pair]
    updates = [g for pair in zip(grads.weights, grads.biases) for g in pair]
    if state.kind is OptimizerKind.SGD:
        for param, grad in zip(params, updates):
            param -= state.learning_rate * grad
        return model, state

    step = state.step_count
    correction1 = 1.0 - ADAM_BETA1**step
    correction2 = 1.0 - ADAM_BETA2**step
    for param, grad, m, v in zip(
        params, updates, state.first_moments, state.second_moments
    ):
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * grad
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * grad * grad
        param -= state.learning_rate * (m / correction1) / (
            np.sqrt(v / correction2) + ADAM_EPS
        )
    return model, state
