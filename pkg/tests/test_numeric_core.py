"""Tests for the MLP numeric core."""

import numpy as np
import pytest

from refpriv.exceptions import DataValidationError, NumericError, ShapeError
from refpriv.numeric_core import (
    Gradients,
    MlpModel,
    OptimizerKind,
    OutputActivation,
    backward,
    binary_cross_entropy,
    cross_entropy,
    forward,
    init_mlp,
    init_optimizer,
    optimizer_step,
    parameter_count,
    per_example_grad_norms,
    per_example_gradients,
    predict_labels,
    predict_proba,
)


def _loss(model, batch, labels):
    probs, _ = forward(model, batch)
    if model.output_activation is OutputActivation.SOFTMAX:
        return cross_entropy(probs, labels)[1].sum()
    return binary_cross_entropy(probs, labels)[1].sum()


def _numeric_gradient(model, batch, labels, step=1e-6):
    params = [p for pair in zip(model.weights, model.biases) for p in pair]
    parts = []
    for param in params:
        grad = np.zeros_like(param)
        flat, grad_flat = param.reshape(-1), grad.reshape(-1)
        for index in range(flat.size):
            original = flat[index]
            flat[index] = original + step
            plus = _loss(model, batch, labels)
            flat[index] = original - step
            minus = _loss(model, batch, labels)
            flat[index] = original
            grad_flat[index] = (plus - minus) / (2.0 * step)
        parts.append(grad.ravel())
    return np.concatenate(parts)


def test_parameter_count():
    """Test weights plus biases are counted per layer."""
    assert parameter_count((600, 256, 128, 100)) == 600 * 256 + 256 + 256 * 128 + 128 + 128 * 100 + 100
    assert parameter_count((3, 1)) == 4


def test_model_shape_validation(rng):
    """Test mismatched weights are rejected."""
    model = init_mlp((3, 2), rng)
    with pytest.raises(ShapeError):
        MlpModel((3, 2), [np.zeros((2, 3))], [np.zeros(2)])
    with pytest.raises(ShapeError):
        MlpModel((3,), [], [])
    assert model.input_size == 3
    assert model.class_count == 2


def test_softmax_rows_sum_to_one(small_model, rng):
    """Test softmax outputs are probability vectors."""
    probs = predict_proba(small_model, rng.normal(size=(10, 4)))
    assert probs.shape == (10, 3)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(probs >= 0.0)


def test_forward_rejects_wrong_columns(small_model):
    """Test a batch with the wrong width raises ShapeError."""
    with pytest.raises(ShapeError):
        forward(small_model, np.zeros((2, 5)))


def test_predict_labels_ties_go_to_lowest_index():
    """Test argmax tie-breaking."""
    assert predict_labels(np.array([[0.5, 0.5], [0.2, 0.8]])).tolist() == [0, 1]


def test_cross_entropy_clamps_zero_probability():
    """Test a zero probability yields a finite loss."""
    mean, per_example = cross_entropy(np.array([[1.0, 0.0]]), np.array([1]))
    assert np.isfinite(mean)
    assert per_example[0] == pytest.approx(-np.log(1e-12))


def test_cross_entropy_label_out_of_range():
    """Test an out-of-range label raises IndexError."""
    with pytest.raises(IndexError):
        cross_entropy(np.array([[0.5, 0.5]]), np.array([2]))


@pytest.mark.parametrize("trial", range(50))
def test_gradient_matches_finite_differences(trial):
    """Test analytic gradients against central differences on small MLPs."""
    rng = np.random.default_rng(trial)
    sizes = (int(rng.integers(2, 6)), int(rng.integers(2, 7)), int(rng.integers(2, 5)))
    activation = OutputActivation.SOFTMAX if trial % 2 == 0 else OutputActivation.SIGMOID
    if activation is OutputActivation.SIGMOID:
        sizes = (sizes[0], sizes[1], 1)
    model = init_mlp(sizes, rng, activation)
    assert model.parameter_count <= 200
    batch = rng.normal(size=(5, sizes[0]))
    if activation is OutputActivation.SOFTMAX:
        labels = rng.integers(0, sizes[-1], size=5)
    else:
        labels = rng.integers(0, 2, size=5).astype(np.float64)

    _, cache = forward(model, batch)
    analytic = backward(model, cache, labels, np.ones(5)).flatten()
    numeric = _numeric_gradient(model, batch, labels)

    scale = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12)
    assert np.linalg.norm(analytic - numeric) / scale < 1e-5


def test_example_weights_scale_gradient(small_model, rng):
    """Test doubling every example weight doubles the gradient."""
    batch = rng.normal(size=(4, 4))
    labels = np.array([0, 1, 2, 1])
    _, cache = forward(small_model, batch)
    single = backward(small_model, cache, labels, np.ones(4)).flatten()
    double = backward(small_model, cache, labels, np.full(4, 2.0)).flatten()
    np.testing.assert_allclose(double, 2.0 * single, rtol=1e-12)


@pytest.mark.parametrize("trial", range(5))
def test_gradient_is_additive_in_example_weights(small_model, trial):
    """Test the gradient under w1 + w2 is the sum of the gradients under each."""
    rng = np.random.default_rng(trial)
    batch = rng.normal(size=(6, 4))
    labels = rng.integers(0, 3, size=6)
    first = rng.uniform(0.0, 1.0, size=6)
    second = rng.uniform(0.0, 1.0, size=6)
    _, cache = forward(small_model, batch)
    combined = backward(small_model, cache, labels, first + second).flatten()
    parts = backward(small_model, cache, labels, first) + backward(
        small_model, cache, labels, second
    )
    np.testing.assert_allclose(combined, parts.flatten(), rtol=1e-10, atol=1e-12)


def test_zero_weight_gives_zero_gradient(small_model, rng):
    """Test all-zero example weights annihilate the loss gradient."""
    batch = rng.normal(size=(3, 4))
    _, cache = forward(small_model, batch)
    grads = backward(small_model, cache, np.array([0, 1, 2]), np.zeros(3))
    assert not np.any(grads.flatten())


def test_backward_rejects_bad_weights(small_model, rng):
    """Test weight validation in the backward pass."""
    batch = rng.normal(size=(3, 4))
    _, cache = forward(small_model, batch)
    with pytest.raises(ShapeError):
        backward(small_model, cache, np.array([0, 1, 2]), np.ones(2))
    with pytest.raises(DataValidationError):
        backward(small_model, cache, np.array([0, 1, 2]), np.array([1.0, -1.0, 1.0]))


def test_per_example_gradients_sum_to_batch_gradient(small_model, rng):
    """Test per-example records add up to the full-batch gradient."""
    batch = rng.normal(size=(6, 4))
    labels = np.array([0, 1, 2, 0, 1, 2])
    records = per_example_gradients(small_model, batch, labels)
    total = sum(records[1:], records[0]).flatten()
    _, cache = forward(small_model, batch)
    np.testing.assert_allclose(
        total, backward(small_model, cache, labels, np.ones(6)).flatten(), atol=1e-12
    )


def test_per_example_grad_norms_match_records(small_model, rng):
    """Test the closed-form norms equal the norms of materialized gradients."""
    batch = rng.normal(size=(5, 4))
    labels = np.array([2, 1, 0, 0, 1])
    records = per_example_gradients(small_model, batch, labels)
    _, cache = forward(small_model, batch)
    norms = per_example_grad_norms(small_model, cache, labels)
    np.testing.assert_allclose(norms, [r.norm() for r in records], rtol=1e-10)


def test_flatten_unflatten(small_model, rng):
    """Test unflatten restores the parameter layout."""
    vector = rng.normal(size=small_model.parameter_count)
    grads = Gradients.unflatten(small_model, vector)
    np.testing.assert_array_equal(grads.flatten(), vector)
    with pytest.raises(ShapeError):
        Gradients.unflatten(small_model, vector[:-1])


def test_sgd_step_moves_against_gradient(small_model):
    """Test a plain SGD update."""
    before = small_model.copy()
    grads = Gradients.zeros_like(small_model)
    grads.biases[0] += 1.0
    state = init_optimizer(small_model, OptimizerKind.SGD, 0.1)
    optimizer_step(small_model, state, grads)
    np.testing.assert_allclose(small_model.biases[0], before.biases[0] - 0.1)
    np.testing.assert_array_equal(small_model.weights[0], before.weights[0])
    assert state.step_count == 1


def test_adam_first_step_is_learning_rate(small_model):
    """Test bias-corrected Adam moves each parameter by about the learning rate."""
    before = small_model.copy()
    grads = Gradients.zeros_like(small_model)
    grads.biases[1] += 3.0
    state = init_optimizer(small_model, OptimizerKind.ADAM, 0.01)
    optimizer_step(small_model, state, grads)
    np.testing.assert_allclose(small_model.biases[1], before.biases[1] - 0.01, rtol=1e-6)


def test_non_finite_gradient_raises_numeric_error(small_model):
    """Test divergence is reported with the layer index."""
    grads = Gradients.zeros_like(small_model)
    grads.weights[1][0, 0] = np.nan
    state = init_optimizer(small_model, OptimizerKind.SGD, 0.1)
    with pytest.raises(NumericError) as excinfo:
        optimizer_step(small_model, state, grads)
    assert excinfo.value.layer_index == 1
    assert isinstance(excinfo.value, ArithmeticError)


def test_sigmoid_output(small_sigmoid_model, rng):
    """Test a sigmoid head gives one probability column and a finite log loss."""
    probs = predict_proba(small_sigmoid_model, rng.normal(size=(5, 6)))
    assert probs.shape == (5, 1)
    assert np.all((probs > 0.0) & (probs < 1.0))
    mean, per_example = binary_cross_entropy(probs, np.array([0.0, 1.0, 1.0, 0.0, 1.0]))
    assert per_example.shape == (5,)
    assert mean == pytest.approx(per_example.mean())
