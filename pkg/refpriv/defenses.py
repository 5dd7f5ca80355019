"""Defended-model trainers: ERM, WERM, AdvReg, MMD and weighted DP-SGD.

Every trainer returns a TrainedInstance. WERM-style risks are
``(1 - w) * L_train + w * L_reference``; adversarial and MMD regularizers
enter the classifier through the upstream-gradient hook of
``numeric_core.backward``.
"""

from __future__ import annotations

import json
import logging
import time
from collections.abc import Callable
from dataclasses import asdict, dataclass, field, replace
from enum import StrEnum
from pathlib import Path
from typing import Any

import numpy as np
from scipy.spatial.distance import cdist

from .const import (
    DEFAULT_ATTACK_HIDDEN,
    DEFAULT_BATCH_SIZE,
    DEFAULT_KERNEL_VARIANCE,
    DEFAULT_LEARNING_RATE,
    DEFAULT_UPDATE_RATIO,
    DEFAULT_WARMUP_EPOCHS,
    DESK_CLASSIFIER_HIDDEN,
    LOG_CLAMP,
    MMD_MIN_BATCH_SIZE,
    MODEL_FILE_MAGIC,
    MODEL_FILE_VERSION,
)
from .datasets import BatchStream, LabeledDataset
from .exceptions import ConfigError, DataValidationError, ParseError
from .numeric_core import (
    ForwardCache,
    Gradients,
    Labels,
    Matrix,
    MlpModel,
    OptimizerKind,
    OptimizerState,
    OutputActivation,
    Vector,
    backward,
    backward_logits,
    cross_entropy,
    forward,
    init_mlp,
    init_optimizer,
    optimizer_step,
    per_example_grad_norms,
    predict_labels,
)

_LOGGER = logging.getLogger(__name__)

# Spawn keys for the independent random streams of one run.
_RNG_INIT = 0
_RNG_SCHEDULE = 1
_RNG_ATTACK_INIT = 2
_RNG_NOISE = 3
_RNG_ATTACK_STREAMS = 4


class DefenseKind(StrEnum):
    """Training procedures."""

    ERM = "erm"
    EARLY_STOP = "early_stop"
    WERM = "werm"
    WERM_ES = "werm_es"
    ADVREG = "advreg"
    ADVREG_RT = "advreg_rt"
    MMD = "mmd"
    DPSGD_WERM = "dpsgd_werm"


WERM_KINDS = frozenset({DefenseKind.WERM, DefenseKind.WERM_ES, DefenseKind.DPSGD_WERM})
REGULARIZED_KINDS = frozenset(
    {DefenseKind.ADVREG, DefenseKind.ADVREG_RT, DefenseKind.MMD}
)


@dataclass(frozen=True, kw_only=True)
class DpParams:
    """Clipping and noise parameters of weighted DP-SGD."""

    clip_norm: float
    noise_scale: float
    sampling_ratio: float
    delta: float
    steps: int

    def validate(self) -> None:
        if self.clip_norm <= 0:
            raise ConfigError(f"clip_norm must be positive, got {self.clip_norm}")
        if self.noise_scale < 0:
            raise ConfigError(
                f"noise_scale must be non-negative, got {self.noise_scale}"
            )
        if not 0.0 < self.sampling_ratio <= 1.0:
            raise ConfigError("sampling_ratio must lie in (0, 1]")
        if not 0.0 < self.delta < 1.0:
            raise ConfigError("delta must lie in (0, 1)")
        if self.steps <= 0:
            raise ConfigError("steps must be positive")


@dataclass(frozen=True, kw_only=True)
class DefenseSpec:
    """A defense and its hyper-parameters; ``lam`` is the regularization weight."""

    kind: DefenseKind
    w: float = 0.0
    lam: float = 0.0
    epochs: int = 1
    batch_size: int = DEFAULT_BATCH_SIZE
    learning_rate: float = DEFAULT_LEARNING_RATE
    optimizer: OptimizerKind = OptimizerKind.ADAM
    hidden_layers: tuple[int, ...] = DESK_CLASSIFIER_HIDDEN
    attack_hidden: tuple[int, ...] = DEFAULT_ATTACK_HIDDEN
    update_ratio: int = DEFAULT_UPDATE_RATIO
    kernel_variance: float = DEFAULT_KERNEL_VARIANCE
    warmup_epochs: int = DEFAULT_WARMUP_EPOCHS
    dp: DpParams | None = None

    @property
    def parameter(self) -> float:
        """The swept defense parameter: w for WERM kinds, lambda for regularizers."""
        if self.kind in WERM_KINDS:
            return self.w
        if self.kind in REGULARIZED_KINDS:
            return self.lam
        return 0.0

    @property
    def label(self) -> str:
        if self.kind in WERM_KINDS:
            return f"{self.kind}(w={self.w:g})"
        if self.kind in REGULARIZED_KINDS:
            return f"{self.kind}(lambda={self.lam:g})"
        return str(self.kind)

    def validate(self) -> None:
        """Raise ConfigError if the kind-relevant fields are out of range."""
        if self.epochs <= 0:
            raise ConfigError(f"{self.label}: epochs must be positive")
        if self.batch_size <= 0:
            raise ConfigError(f"{self.label}: batch_size must be positive")
        if self.learning_rate <= 0:
            raise ConfigError(f"{self.label}: learning_rate must be positive")
        if self.warmup_epochs < 0:
            raise ConfigError(f"{self.label}: warmup_epochs must be non-negative")
        if not 0.0 <= self.w <= 1.0:
            raise ConfigError(f"{self.label}: w must lie in [0, 1]")
        if self.lam < 0:
            raise ConfigError(f"{self.label}: lambda must be non-negative")
        if self.kind in (DefenseKind.ADVREG, DefenseKind.ADVREG_RT):
            if self.update_ratio < 1:
                raise ConfigError(f"{self.label}: update_ratio must be >= 1")
            if not self.attack_hidden:
                raise ConfigError(f"{self.label}: attack model needs hidden layers")
        if self.kind is DefenseKind.MMD:
            if self.batch_size < MMD_MIN_BATCH_SIZE:
                raise ConfigError(
                    f"{self.label}: batch_size must be >= {MMD_MIN_BATCH_SIZE}"
                )
            if self.kernel_variance <= 0:
                raise ConfigError(f"{self.label}: kernel_variance must be positive")
        if self.kind is DefenseKind.DPSGD_WERM:
            if self.dp is None:
                raise ConfigError(f"{self.label}: DP parameters are required")
            self.dp.validate()

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["kind"] = str(self.kind)
        data["optimizer"] = str(self.optimizer)
        data["hidden_layers"] = list(self.hidden_layers)
        data["attack_hidden"] = list(self.attack_hidden)
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> DefenseSpec:
        values = dict(data)
        values["kind"] = DefenseKind(values["kind"])
        values["optimizer"] = OptimizerKind(values.get("optimizer", OptimizerKind.ADAM))
        for key in ("hidden_layers", "attack_hidden"):
            if key in values:
                values[key] = tuple(values[key])
        if values.get("dp") is not None:
            values["dp"] = DpParams(**values["dp"])
        return cls(**values)


@dataclass(frozen=True)
class SplitMetrics:
    """Mean cross-entropy and accuracy of a model on one split."""

    loss: float
    accuracy: float


@dataclass(kw_only=True)
class TrainedInstance:
    """A trained model with its spec, timing and final metrics."""

    model: MlpModel
    spec: DefenseSpec
    seed: int
    epochs_run: int
    per_epoch_seconds: list[float]
    train: SplitMetrics | None = None
    reference: SplitMetrics | None = None
    test: SplitMetrics | None = None
    steps_run: int = 0
    classifier_updates: int = 0
    attack_updates: int = 0
    history: dict[str, list[float]] = field(default_factory=dict)

    @property
    def mean_epoch_seconds(self) -> float:
        if not self.per_epoch_seconds:
            return 0.0
        return float(np.mean(self.per_epoch_seconds))


def _rng(seed: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(purpose,)))


def _uniform(size: int) -> Vector:
    return np.full(size, 1.0 / size)


def evaluate(model: MlpModel, dataset: LabeledDataset) -> SplitMetrics | None:
    """Loss and accuracy on a dataset; None when it is empty."""
    if dataset.size == 0:
        return None
    probs, _ = forward(model, dataset.features)
    loss, _ = cross_entropy(probs, dataset.labels)
    accuracy = float(np.mean(predict_labels(probs) == dataset.labels))
    return SplitMetrics(loss=loss, accuracy=accuracy)


def generalization_gap(instance: TrainedInstance) -> float:
    """Test loss minus train loss."""
    if instance.train is None or instance.test is None:
        raise DataValidationError("instance carries no train/test losses")
    return instance.test.loss - instance.train.loss


def build_classifier(
    spec: DefenseSpec, input_size: int, class_count: int, seed: int
) -> MlpModel:
    """Seeded classifier with the spec's hidden layers."""
    return init_mlp(
        (input_size, *spec.hidden_layers, class_count), _rng(seed, _RNG_INIT)
    )


def _dims(train: LabeledDataset, reference: LabeledDataset) -> tuple[int, int]:
    source = train if train.size else reference
    return source.dim, max(train.class_count, reference.class_count)


def _finish(
    model: MlpModel,
    spec: DefenseSpec,
    seed: int,
    seconds: list[float],
    train: LabeledDataset,
    reference: LabeledDataset,
    test: LabeledDataset | None,
    **extra: Any,
) -> TrainedInstance:
    instance = TrainedInstance(
        model=model,
        spec=spec,
        seed=seed,
        epochs_run=len(seconds),
        per_epoch_seconds=seconds,
        train=evaluate(model, train),
        reference=evaluate(model, reference),
        test=evaluate(model, test) if test is not None else None,
        **extra,
    )
    _LOGGER.info(
        "Trained %s (seed %d) for %d epochs, %.3f s/epoch",
        spec.label,
        seed,
        instance.epochs_run,
        instance.mean_epoch_seconds,
    )
    return instance


def _erm_step(
    model: MlpModel, optimizer: OptimizerState, stream: BatchStream
) -> None:
    features, labels = stream.next_batch()
    _, cache = forward(model, features)
    grads = backward(model, cache, labels, _uniform(labels.size))
    optimizer_step(model, optimizer, grads)


def _warmup(
    model: MlpModel,
    optimizer: OptimizerState,
    stream: BatchStream,
    epochs: int,
    seconds: list[float],
) -> None:
    for _ in range(epochs):
        start = time.perf_counter()
        for _ in range(stream.batches_per_epoch):
            _erm_step(model, optimizer, stream)
        seconds.append(time.perf_counter() - start)
    if epochs:
        _LOGGER.debug("Finished %d warm-up epochs", epochs)


# --- WERM ---


def reference_batch_size(batch_size: int, n_train: int, n_reference: int) -> int:
    """round(|B_T| * N_R / N_T), at least 1."""
    if n_train == 0:
        return batch_size
    return max(1, round(batch_size * n_reference / n_train))


def werm_gradients(
    model: MlpModel,
    train_batch: tuple[Matrix, Labels] | None,
    reference_batch: tuple[Matrix, Labels] | None,
    w: float,
) -> tuple[Gradients, Gradients]:
    """Per-side contributions to the gradient of the weighted batch risk.

    A side with zero weight is never forwarded and contributes exact zeros.
    """
    contributions: list[Gradients] = []
    for batch, weight in ((train_batch, 1.0 - w), (reference_batch, w)):
        if weight == 0.0 or batch is None:
            contributions.append(Gradients.zeros_like(model))
            continue
        features, labels = batch
        _, cache = forward(model, features)
        contributions.append(
            backward(model, cache, labels, np.full(labels.size, weight / labels.size))
        )
    return contributions[0], contributions[1]


def _check_sides(train: LabeledDataset, reference: LabeledDataset, w: float) -> None:
    if w < 1.0 and train.size == 0:
        raise ConfigError("training data is empty but carries weight 1 - w > 0")
    if w > 0.0 and reference.size == 0:
        raise ConfigError("reference data is empty but carries weight w > 0")


def train_werm(
    train: LabeledDataset,
    reference: LabeledDataset,
    spec: DefenseSpec,
    seed: int,
    *,
    test: LabeledDataset | None = None,
) -> TrainedInstance:
    """Minimize (1 - w) * L_train + w * L_reference on paired batches.

    Both streams share ``seed``; an epoch is one pass over the training data
    (over the reference data when w = 1 and there is no training data).
    """
    spec.validate()
    w = spec.w if spec.kind in WERM_KINDS else 0.0
    _check_sides(train, reference, w)
    input_size, class_count = _dims(train, reference)
    model = build_classifier(spec, input_size, class_count, seed)
    optimizer = init_optimizer(model, spec.optimizer, spec.learning_rate)

    train_stream = (
        BatchStream(train, spec.batch_size, seed) if train.size and w < 1.0 else None
    )
    reference_stream = (
        BatchStream(
            reference,
            reference_batch_size(spec.batch_size, train.size, reference.size),
            seed,
        )
        if reference.size and w > 0.0
        else None
    )
    if train_stream is None and reference_stream is None:
        raise ConfigError("nothing to train on")
    steps_per_epoch = BatchStream(
        train if train.size else reference, spec.batch_size, seed
    ).batches_per_epoch

    seconds: list[float] = []
    steps = 0
    for epoch in range(spec.epochs):
        start = time.perf_counter()
        for _ in range(steps_per_epoch):
            train_batch = train_stream.next_batch() if train_stream else None
            reference_batch = reference_stream.next_batch() if reference_stream else None
            from_train, from_reference = werm_gradients(
                model, train_batch, reference_batch, w
            )
            optimizer_step(model, optimizer, from_train + from_reference)
            steps += 1
        seconds.append(time.perf_counter() - start)
        _LOGGER.debug("%s epoch %d done in %.3f s", spec.label, epoch, seconds[-1])
    return _finish(
        model, spec, seed, seconds, train, reference, test, steps_run=steps
    )


def train_erm(
    train: LabeledDataset,
    spec: DefenseSpec,
    seed: int,
    *,
    reference: LabeledDataset | None = None,
    test: LabeledDataset | None = None,
) -> TrainedInstance:
    """Plain ERM (or the early-stopped baseline) on training data only."""
    spec = replace(spec, w=0.0)
    if reference is None:
        reference = LabeledDataset.empty(train.dim, train.class_count)
    return train_werm(train, reference, spec, seed, test=test)


# --- Weighted DP-SGD ---


def clip_gradient(gradient: Vector, clip_norm: float) -> Vector:
    """g / max(1, |g| / C)."""
    norm = float(np.linalg.norm(gradient))
    return gradient / max(1.0, norm / clip_norm)


def clip_factors(norms: Vector, clip_norm: float) -> Vector:
    """Per-example scale factors 1 / max(1, |g_i| / C)."""
    return 1.0 / np.maximum(1.0, norms / clip_norm)


def sample_dp_noise(
    rng: np.random.Generator, size: int, noise_scale: float, clip_norm: float
) -> Vector:
    """Isotropic Gaussian noise with standard deviation sigma * C per coordinate."""
    return rng.normal(0.0, noise_scale * clip_norm, size=size)


def _clipped_sum(
    model: MlpModel,
    cache: ForwardCache,
    labels: Labels,
    weight: float,
    clip_norm: float,
) -> Gradients:
    norms = per_example_grad_norms(model, cache, labels)
    factors = clip_factors(norms, clip_norm)
    return backward(model, cache, labels, np.full(labels.size, weight) * factors)


def dpsgd_gradients(
    model: MlpModel,
    train_batch: tuple[Matrix, Labels] | None,
    reference_batch: tuple[Matrix, Labels] | None,
    w: float,
    dp: DpParams,
    rng: np.random.Generator,
) -> Gradients:
    """Clipped per-example gradients weighted by w_m / L_m, plus Gaussian noise."""
    total = Gradients.zeros_like(model)
    for batch, weight in ((train_batch, 1.0 - w), (reference_batch, w)):
        if weight == 0.0 or batch is None:
            continue
        features, labels = batch
        _, cache = forward(model, features)
        total = total + _clipped_sum(
            model, cache, labels, weight / labels.size, dp.clip_norm
        )
    if dp.noise_scale == 0.0:
        return total
    noise = sample_dp_noise(rng, model.parameter_count, dp.noise_scale, dp.clip_norm)
    return total + Gradients.unflatten(model, noise)


def train_dpsgd_werm(
    train: LabeledDataset,
    reference: LabeledDataset,
    spec: DefenseSpec,
    seed: int,
    *,
    test: LabeledDataset | None = None,
) -> TrainedInstance:
    """WERM trained with per-example clipping and Gaussian noise.

    Batch sizes are L_T = round(alpha * N_T) and L_R = round(alpha * N_R).
    """
    spec.validate()
    dp = spec.dp
    assert dp is not None
    w = spec.w
    _check_sides(train, reference, w)
    input_size, class_count = _dims(train, reference)
    model = build_classifier(spec, input_size, class_count, seed)
    optimizer = init_optimizer(model, spec.optimizer, spec.learning_rate)
    noise_rng = _rng(seed, _RNG_NOISE)

    def lot(n: int) -> int:
        return max(1, round(dp.sampling_ratio * n))

    train_stream = (
        BatchStream(train, lot(train.size), seed) if train.size and w < 1.0 else None
    )
    reference_stream = (
        BatchStream(reference, lot(reference.size), seed)
        if reference.size and w > 0.0
        else None
    )
    steps_per_epoch = BatchStream(
        train if train.size else reference,
        lot(train.size if train.size else reference.size),
        seed,
    ).batches_per_epoch

    seconds: list[float] = []
    steps = 0
    for _ in range(spec.epochs):
        start = time.perf_counter()
        for _ in range(steps_per_epoch):
            grads = dpsgd_gradients(
                model,
                train_stream.next_batch() if train_stream else None,
                reference_stream.next_batch() if reference_stream else None,
                w,
                dp,
                noise_rng,
            )
            optimizer_step(model, optimizer, grads)
            steps += 1
        seconds.append(time.perf_counter() - start)
    if steps != dp.steps:
        _LOGGER.debug(
            "%s ran %d steps; accounting assumes %d", spec.label, steps, dp.steps
        )
    return _finish(
        model, spec, seed, seconds, train, reference, test, steps_run=steps
    )


# --- Adversarial regularization ---


def attack_features(probs: Matrix, labels: Labels, class_count: int) -> Matrix:
    """Attack-model input: one-hot(label) followed by the confidence vector."""
    onehot = np.zeros((labels.size, class_count))
    onehot[np.arange(labels.size), labels] = 1.0
    return np.hstack([onehot, probs])


def build_attack_model(
    class_count: int, hidden: tuple[int, ...], rng: np.random.Generator
) -> MlpModel:
    return init_mlp(
        (2 * class_count, *hidden, 1), rng, output_activation=OutputActivation.SIGMOID
    )


def attack_gain(member_scores: Vector, nonmember_scores: Vector) -> float:
    """mean log h(member) + mean log(1 - h(non-member)), with log clamping."""
    return float(
        np.mean(np.log(np.maximum(member_scores, LOG_CLAMP)))
        + np.mean(np.log(np.maximum(1.0 - nonmember_scores, LOG_CLAMP)))
    )


def _attack_step(
    classifier: MlpModel,
    attack: MlpModel,
    optimizer: OptimizerState,
    members: tuple[Matrix, Labels],
    nonmembers: tuple[Matrix, Labels],
) -> float:
    """One ascent step of the attack model on its gain; returns the gain before the step."""
    k = classifier.class_count
    inputs = np.vstack(
        [
            attack_features(forward(classifier, x)[0], y, k)
            for x, y in (members, nonmembers)
        ]
    )
    n, m = members[1].size, nonmembers[1].size
    targets = np.concatenate([np.ones(n), np.zeros(m)])
    weights = np.concatenate([np.full(n, 1.0 / n), np.full(m, 1.0 / m)])
    scores, cache = forward(attack, inputs)
    gain = attack_gain(scores[:n, 0], scores[n:, 0])
    optimizer_step(attack, optimizer, backward(attack, cache, targets, weights))
    return gain


def _attack_output_grad(
    classifier_probs: Matrix,
    labels: Labels,
    attack: MlpModel,
    logit_grad: Callable[[Vector], Vector],
    class_count: int,
) -> Matrix:
    """Gradient of an attack-score objective w.r.t. the classifier's probabilities."""
    scores, cache = forward(attack, attack_features(classifier_probs, labels, class_count))
    dlogits = logit_grad(scores[:, 0])[:, None]
    inputs_grad = backward_logits(attack, cache, dlogits, input_grad=True).inputs
    assert inputs_grad is not None
    return inputs_grad[:, class_count:]


def _classifier_step(
    classifier: MlpModel,
    attack: MlpModel,
    optimizer: OptimizerState,
    batch: tuple[Matrix, Labels],
    reference_batch: tuple[Matrix, Labels] | None,
    lam: float,
) -> None:
    """Descend on mean CE + lam * mean log h(member) [+ lam * mean log(1 - h(reference))]."""
    k = classifier.class_count
    features, labels = batch
    n = labels.size
    probs, cache = forward(classifier, features)
    if lam == 0.0:
        grads = backward(classifier, cache, labels, _uniform(n))
        optimizer_step(classifier, optimizer, grads)
        return
    # d/dz log(sigmoid(z)) = 1 - h
    member_grad = _attack_output_grad(
        probs, labels, attack, lambda h: lam / n * (1.0 - h), k
    )
    grads = backward(classifier, cache, labels, _uniform(n), output_grad=member_grad)
    if reference_batch is not None:
        ref_features, ref_labels = reference_batch
        m = ref_labels.size
        ref_probs, ref_cache = forward(classifier, ref_features)
        # d/dz log(1 - sigmoid(z)) = -h
        ref_grad = _attack_output_grad(
            ref_probs, ref_labels, attack, lambda h: -lam / m * h, k
        )
        grads = grads + backward(
            classifier, ref_cache, ref_labels, np.zeros(m), output_grad=ref_grad
        )
    optimizer_step(classifier, optimizer, grads)


def train_advreg(
    train: LabeledDataset,
    reference: LabeledDataset,
    spec: DefenseSpec,
    seed: int,
    *,
    test: LabeledDataset | None = None,
) -> TrainedInstance:
    """Adversarial regularization with the Bernoulli classifier/attack schedule.

    Each draw is 1 with probability 1 / (update_ratio + 1): a 1 takes a
    classifier step on the next training batch, a 0 takes an attack-model
    step on fresh member (training) and non-member (reference) batches. An
    epoch ends when the classifier has made one pass over the training data.
    """
    spec.validate()
    if train.size == 0 or reference.size == 0:
        raise ConfigError("adversarial regularization needs training and reference data")
    input_size, class_count = _dims(train, reference)
    classifier = build_classifier(spec, input_size, class_count, seed)
    classifier_opt = init_optimizer(classifier, spec.optimizer, spec.learning_rate)
    attack = build_attack_model(
        class_count, spec.attack_hidden, _rng(seed, _RNG_ATTACK_INIT)
    )
    attack_opt = init_optimizer(attack, spec.optimizer, spec.learning_rate)
    schedule = _rng(seed, _RNG_SCHEDULE)
    attack_seed = int(_rng(seed, _RNG_ATTACK_STREAMS).integers(2**63))

    train_stream = BatchStream(train, spec.batch_size, seed)
    reference_stream = (
        BatchStream(reference, spec.batch_size, seed)
        if spec.kind is DefenseKind.ADVREG_RT
        else None
    )
    member_stream = BatchStream(train, spec.batch_size, attack_seed)
    nonmember_stream = BatchStream(reference, spec.batch_size, attack_seed)
    p_classifier = 1.0 / (spec.update_ratio + 1)

    seconds: list[float] = []
    warmup = min(spec.warmup_epochs, spec.epochs)
    _warmup(classifier, classifier_opt, train_stream, warmup, seconds)

    classifier_updates = attack_updates = 0
    gains: list[float] = []
    for epoch in range(warmup, spec.epochs):
        start = time.perf_counter()
        epoch_gains: list[float] = []
        done = 0
        while done < train_stream.batches_per_epoch:
            if schedule.random() < p_classifier:
                _classifier_step(
                    classifier,
                    attack,
                    classifier_opt,
                    train_stream.next_batch(),
                    reference_stream.next_batch() if reference_stream else None,
                    spec.lam,
                )
                done += 1
                classifier_updates += 1
            else:
                epoch_gains.append(
                    _attack_step(
                        classifier,
                        attack,
                        attack_opt,
                        member_stream.next_batch(),
                        nonmember_stream.next_batch(),
                    )
                )
                attack_updates += 1
        seconds.append(time.perf_counter() - start)
        gains.append(float(np.mean(epoch_gains)) if epoch_gains else float("nan"))
        _LOGGER.debug(
            "%s epoch %d: %d attack steps, mean gain %.4f",
            spec.label,
            epoch,
            len(epoch_gains),
            gains[-1],
        )
    return _finish(
        classifier,
        spec,
        seed,
        seconds,
        train,
        reference,
        test,
        steps_run=classifier_updates + attack_updates,
        classifier_updates=classifier_updates,
        attack_updates=attack_updates,
        history={"attack_gain": gains},
    )


# --- MMD ---


def kernel_matrix(a: Matrix, b: Matrix, variance: float) -> Matrix:
    """Gaussian kernel exp(-|a - b|^2 / (2 * variance)) between rows of a and b."""
    return np.exp(-cdist(a, b, "sqeuclidean") / (2.0 * variance))


def gaussian_kernel(a: Vector, b: Vector, variance: float) -> float:
    return float(kernel_matrix(a[None, :], b[None, :], variance)[0, 0])


def mmd_squared(x: Matrix, z: Matrix, variance: float) -> float:
    """Biased MMD^2 estimate between two samples, clamped at 0."""
    value = (
        kernel_matrix(x, x, variance).mean()
        + kernel_matrix(z, z, variance).mean()
        - 2.0 * kernel_matrix(x, z, variance).mean()
    )
    return max(0.0, float(value))


def mmd_squared_grad(x: Matrix, z: Matrix, variance: float) -> tuple[Matrix, Matrix]:
    """Gradients of the biased MMD^2 estimate w.r.t. every row of x and of z."""
    n, m = x.shape[0], z.shape[0]
    k_xx = kernel_matrix(x, x, variance)
    k_zz = kernel_matrix(z, z, variance)
    k_xz = kernel_matrix(x, z, variance)
    grad_x = -2.0 / (n * n * variance) * (x * k_xx.sum(axis=1, keepdims=True) - k_xx @ x)
    grad_x += 2.0 / (n * m * variance) * (x * k_xz.sum(axis=1, keepdims=True) - k_xz @ z)
    grad_z = -2.0 / (m * m * variance) * (z * k_zz.sum(axis=1, keepdims=True) - k_zz @ z)
    grad_z += 2.0 / (n * m * variance) * (
        z * k_xz.sum(axis=0)[:, None] - k_xz.T @ x
    )
    return grad_x, grad_z


@dataclass(frozen=True)
class ClassMmd:
    """Per-class MMD penalty of one batch pair and its gradients."""

    value: float
    grad_train: Matrix
    grad_reference: Matrix
    classes_used: int
    classes_skipped: int


def per_class_mmd(
    train_probs: Matrix,
    train_labels: Labels,
    reference_probs: Matrix,
    reference_labels: Labels,
    variance: float,
) -> ClassMmd:
    """Average per-class MMD^2 over labels present in both batches."""
    grad_train = np.zeros_like(train_probs)
    grad_reference = np.zeros_like(reference_probs)
    train_classes = np.unique(train_labels)
    shared = np.intersect1d(train_classes, np.unique(reference_labels))
    total = 0.0
    for label in shared:
        in_train = train_labels == label
        in_reference = reference_labels == label
        x, z = train_probs[in_train], reference_probs[in_reference]
        total += mmd_squared(x, z, variance)
        gx, gz = mmd_squared_grad(x, z, variance)
        grad_train[in_train] += gx
        grad_reference[in_reference] += gz
    used = int(shared.size)
    if used:
        total /= used
        grad_train /= used
        grad_reference /= used
    return ClassMmd(
        value=total,
        grad_train=grad_train,
        grad_reference=grad_reference,
        classes_used=used,
        classes_skipped=int(train_classes.size) - used,
    )


def train_mmd(
    train: LabeledDataset,
    reference: LabeledDataset,
    spec: DefenseSpec,
    seed: int,
    *,
    test: LabeledDataset | None = None,
) -> TrainedInstance:
    """Mean training loss plus lambda times the per-class MMD^2 of confidences."""
    spec.validate()
    if train.size == 0 or reference.size == 0:
        raise ConfigError("MMD regularization needs training and reference data")
    input_size, class_count = _dims(train, reference)
    model = build_classifier(spec, input_size, class_count, seed)
    optimizer = init_optimizer(model, spec.optimizer, spec.learning_rate)
    train_stream = BatchStream(train, spec.batch_size, seed)
    reference_stream = BatchStream(reference, spec.batch_size, seed)

    seconds: list[float] = []
    warmup = min(spec.warmup_epochs, spec.epochs)
    _warmup(model, optimizer, train_stream, warmup, seconds)

    penalties: list[float] = []
    for epoch in range(warmup, spec.epochs):
        start = time.perf_counter()
        skipped = 0
        epoch_penalty: list[float] = []
        for _ in range(train_stream.batches_per_epoch):
            features, labels = train_stream.next_batch()
            ref_features, ref_labels = reference_stream.next_batch()
            probs, cache = forward(model, features)
            ref_probs, ref_cache = forward(model, ref_features)
            mmd = per_class_mmd(
                probs, labels, ref_probs, ref_labels, spec.kernel_variance
            )
            skipped += mmd.classes_skipped
            epoch_penalty.append(mmd.value)
            grads = backward(
                model,
                cache,
                labels,
                _uniform(labels.size),
                output_grad=spec.lam * mmd.grad_train,
            ) + backward(
                model,
                ref_cache,
                ref_labels,
                np.zeros(ref_labels.size),
                output_grad=spec.lam * mmd.grad_reference,
            )
            optimizer_step(model, optimizer, grads)
        seconds.append(time.perf_counter() - start)
        penalties.append(float(np.mean(epoch_penalty)))
        if skipped:
            _LOGGER.warning(
                "%s epoch %d: skipped %d class slots absent from reference batches",
                spec.label,
                epoch,
                skipped,
            )
    return _finish(
        model,
        spec,
        seed,
        seconds,
        train,
        reference,
        test,
        steps_run=train_stream.batches_per_epoch * (spec.epochs - warmup),
        history={"mmd": penalties},
    )


# --- Dispatch ---


def train_defense(
    train: LabeledDataset,
    reference: LabeledDataset,
    spec: DefenseSpec,
    seed: int,
    *,
    test: LabeledDataset | None = None,
) -> TrainedInstance:
    """Route a spec to its trainer."""
    if spec.kind in (DefenseKind.ERM, DefenseKind.EARLY_STOP):
        return train_erm(train, spec, seed, reference=reference, test=test)
    if spec.kind in (DefenseKind.WERM, DefenseKind.WERM_ES):
        return train_werm(train, reference, spec, seed, test=test)
    if spec.kind is DefenseKind.DPSGD_WERM:
        return train_dpsgd_werm(train, reference, spec, seed, test=test)
    if spec.kind in (DefenseKind.ADVREG, DefenseKind.ADVREG_RT):
        return train_advreg(train, reference, spec, seed, test=test)
    return train_mmd(train, reference, spec, seed, test=test)


# --- Model files ---


def save_model(
    path: str | Path,
    model: MlpModel,
    *,
    spec: DefenseSpec | None = None,
    seed: int | None = None,
) -> None:
    """Write an ``.npz`` file: a JSON header plus row-major w0, b0, w1, b1, ...

    The header records the magic string, format version, layer sizes, output
    activation and, when given, the defense spec and seed.
    """
    header = {
        "magic": MODEL_FILE_MAGIC,
        "version": MODEL_FILE_VERSION,
        "layer_sizes": list(model.layer_sizes),
        "output_activation": str(model.output_activation),
        "spec": spec.to_dict() if spec is not None else None,
        "seed": seed,
    }
    arrays: dict[str, Any] = {"header": np.array(json.dumps(header))}
    for index, (weight, bias) in enumerate(zip(model.weights, model.biases)):
        arrays[f"w{index}"] = weight
        arrays[f"b{index}"] = bias
    with open(path, "wb") as handle:
        np.savez(handle, **arrays)
    _LOGGER.info("Saved model %s to %s", list(model.layer_sizes), path)


def load_model(path: str | Path) -> tuple[MlpModel, dict[str, Any]]:
    """Read a model file written by save_model; returns the model and its header."""
    with np.load(path, allow_pickle=False) as archive:
        if "header" not in archive:
            raise ParseError(f"{path} has no model header")
        header = json.loads(str(archive["header"]))
        if header.get("magic") != MODEL_FILE_MAGIC:
            raise ParseError(f"{path} is not a model file")
        if header.get("version") != MODEL_FILE_VERSION:
            raise ParseError(
                f"unsupported model file version {header.get('version')}"
            )
        layers = len(header["layer_sizes"]) - 1
        model = MlpModel(
            layer_sizes=tuple(header["layer_sizes"]),
            weights=[archive[f"w{i}"] for i in range(layers)],
            biases=[archive[f"b{i}"] for i in range(layers)],
            output_activation=OutputActivation(header["output_activation"]),
        )
    return model, header
