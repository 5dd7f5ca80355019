"""Tests for the closed-form privacy and utility expressions."""

import math

import numpy as np
import pytest

from refpriv.exceptions import DomainError, UndefinedCorrelationError
from refpriv.theory import (
    BoundInputs,
    dpsgd_noise_scale,
    effective_samples,
    effective_samples_multi,
    generalization_bound,
    neff_concavity_band,
    nominal_epsilon,
    optimal_weight,
    pearson_configurability,
    privacy_budget,
    privacy_budget_multi,
    relative_privacy_ratio,
    sizes_for_ratio,
    theory_curve,
    uniform_grid,
)


def _neff_formula(n_train, n_reference, w):
    return 1.0 / ((1.0 - w) ** 2 / n_train + w**2 / n_reference)


@pytest.mark.parametrize("trial", range(1000))
def test_effective_samples_peak(trial):
    """Test N_eff never exceeds N_T + N_R and reaches it at w*."""
    rng = np.random.default_rng(trial)
    n_train, n_reference = (int(n) for n in rng.integers(1, 100_000, size=2))
    w = float(rng.uniform())
    total = n_train + n_reference
    assert effective_samples(n_train, n_reference, w) <= total
    assert effective_samples(n_train, n_reference, w) == pytest.approx(
        min(_neff_formula(n_train, n_reference, w), total), rel=1e-9
    )
    w_star = optimal_weight(n_train, n_reference)
    assert effective_samples(n_train, n_reference, w_star) == pytest.approx(total, rel=1e-9)


def test_effective_samples_without_reference_weight():
    """Test N_eff(0) is exactly N_T and N_eff(1) is exactly N_R."""
    assert effective_samples(300, 700, 0.0) == 300
    assert effective_samples(300, 700, 1.0) == 700


def test_effective_samples_is_unimodal():
    """Test N_eff rises up to w* and falls after it."""
    n_train, n_reference = 4000, 1000
    w_star = optimal_weight(n_train, n_reference)
    left = [effective_samples(n_train, n_reference, w) for w in np.linspace(0.0, w_star, 50)]
    right = [effective_samples(n_train, n_reference, w) for w in np.linspace(w_star, 1.0, 50)]
    assert all(a <= b for a, b in zip(left, left[1:]))
    assert all(a >= b for a, b in zip(right, right[1:]))


def test_neff_concavity_band():
    """Test the band contains w* and N_eff is concave inside it."""
    n_train, n_reference = 2000, 1000
    low, high = neff_concavity_band(n_train, n_reference)
    w_star = optimal_weight(n_train, n_reference)
    assert 0.0 <= low < w_star < high <= 1.0
    h = 1e-4
    for w in np.linspace(low, high, 11)[1:-1]:
        second = (
            _neff_formula(n_train, n_reference, w + h)
            - 2.0 * _neff_formula(n_train, n_reference, w)
            + _neff_formula(n_train, n_reference, w - h)
        )
        assert second < 0.0


@pytest.mark.parametrize("epsilon_0", [1.0, 1e3, 1e6])
@pytest.mark.parametrize("w", [0.1, 0.3, 0.5, 0.9])
@pytest.mark.parametrize(("n_train", "n_reference"), [(1000, 1000), (5000, 20000), (9, 1)])
def test_privacy_ratio_matches_budgets(epsilon_0, w, n_train, n_reference):
    """Test eps_T / eps_R equals the closed ratio whatever epsilon_0 is."""
    budget = privacy_budget(n_train, n_reference, w, epsilon_0, 1e-5, 100, 1.0, 0.01)
    expected = relative_privacy_ratio(n_train, n_reference, w)
    assert budget.epsilon_t / budget.epsilon_r == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx((1.0 - w) / w * n_reference / n_train, rel=1e-12)


def test_privacy_ratio_without_reference_weight():
    """Test w = 0 gives an infinite ratio."""
    assert relative_privacy_ratio(100, 100, 0.0) == math.inf


def test_noise_scale_by_hand():
    """Test sigma for alpha 0.01, K 100, C 1, delta 1e-5, epsilon_0 1."""
    assert dpsgd_noise_scale(1.0, 1e-5, 100, 1.0, 0.01) == pytest.approx(0.4844805, rel=1e-6)


@pytest.mark.parametrize(
    ("epsilon_0", "delta"), [(0.0, 1e-5), (-1.0, 1e-5), (1.0, 0.0), (1.0, 1.0)]
)
def test_noise_scale_domain(epsilon_0, delta):
    """Test sigma rejects out-of-domain budgets."""
    with pytest.raises(DomainError):
        dpsgd_noise_scale(epsilon_0, delta, 10, 1.0, 0.1)


@pytest.mark.parametrize(
    ("w", "epsilon_0", "valid"),
    [(0.5, 150.0, True), (0.5, 250.0, False), (0.0, 50.0, True), (0.0, 150.0, False), (1.0, 99.0, True)],
)
def test_budget_validity(w, epsilon_0, valid):
    """Test epsilon_0 must stay below min(N_T / (1 - w), N_R / w)."""
    assert privacy_budget(100, 100, w, epsilon_0, 1e-5, 1, 1.0, 1.0).valid is valid


def test_nominal_epsilon():
    """Test whole-run totals scale with alpha sqrt(K) and need a valid budget."""
    budget = privacy_budget(100, 100, 0.5, 100.0, 1e-5, 1, 1.0, 1.0)
    total_t, total_r = nominal_epsilon(budget, 100, 0.1)
    assert total_t == pytest.approx(budget.epsilon_t)
    assert total_r == pytest.approx(budget.epsilon_r)
    with pytest.raises(DomainError):
        nominal_epsilon(privacy_budget(100, 100, 0.5, 500.0, 1e-5, 1, 1.0, 1.0), 100, 0.1)


def test_multi_dataset_budget():
    """Test per-dataset budgets and N_eff for three datasets."""
    sizes, weights = [100, 200, 300], [0.2, 0.3, 0.5]
    budget = privacy_budget_multi(sizes, weights, 60.0, 1e-5, 1, 1.0, 1.0)
    assert budget.epsilons == pytest.approx((0.12, 0.09, 0.1))
    assert budget.valid
    assert effective_samples_multi(sizes, weights) == pytest.approx(
        1.0 / (0.04 / 100 + 0.09 / 200 + 0.25 / 300)
    )
    assert effective_samples_multi([100, 300], [0.25, 0.75]) == pytest.approx(400.0)
    with pytest.raises(DomainError):
        effective_samples_multi(sizes, [0.5, 0.5, 0.5])
    with pytest.raises(DomainError):
        effective_samples_multi(sizes, [0.5, 0.5])


def test_generalization_bound():
    """Test the bound shrinks as N_eff grows and rejects vacuous settings."""
    at_zero = generalization_bound(
        BoundInputs(n_train=1000, n_reference=1000, w=0.0, vc_dim=10, delta=0.05)
    )
    at_star = generalization_bound(
        BoundInputs(n_train=1000, n_reference=1000, w=0.5, vc_dim=10, delta=0.05)
    )
    assert 0.0 < at_star < at_zero
    with pytest.raises(DomainError):
        generalization_bound(
            BoundInputs(n_train=100, n_reference=100, w=0.5, vc_dim=0, delta=0.05)
        )
    with pytest.raises(DomainError):
        generalization_bound(
            BoundInputs(n_train=100, n_reference=100, w=0.5, vc_dim=1000, delta=0.05)
        )


def test_theory_curve():
    """Test the curve is sorted by w and marks vacuous bounds with NaN."""
    curve = theory_curve(300, 100, 1000.0, [1.0, 0.0, 0.25], delta=1e-5, vc_dim=10)
    assert [p.w for p in curve.points] == [0.0, 0.25, 1.0]
    assert curve.points[1].n_eff == pytest.approx(400.0)
    assert curve.points[0].epsilon_r == 0.0
    assert list(curve.to_frame().columns) == ["w", "n_eff", "eps_t", "eps_r", "bound_excess"]
    vacuous = theory_curve(100, 100, 10.0, uniform_grid(3), delta=1e-5, vc_dim=1000)
    assert all(math.isnan(p.bound_excess) for p in vacuous.points)
    with pytest.raises(DomainError):
        theory_curve(100, 100, 10.0, [-0.1, 0.5], delta=1e-5, vc_dim=10)


@pytest.mark.parametrize(("n_train", "n_reference"), [(250, 250), (400, 100), (100, 400)])
def test_theory_curve_shared_point(n_train, n_reference):
    """Test every ratio's curve passes through N_eff = N with both budgets at eps0 / N."""
    total = n_train + n_reference
    optimum = n_reference / total
    curve = theory_curve(
        n_train, n_reference, 50.0, [0.0, optimum, 1.0], delta=1e-5, vc_dim=10
    )
    shared = curve.points[1]
    assert shared.w == pytest.approx(optimum)
    assert shared.n_eff == pytest.approx(total)
    assert shared.epsilon_t == pytest.approx(50.0 / total)
    assert shared.epsilon_r == pytest.approx(50.0 / total)


@pytest.mark.parametrize("ratio", [4.0, 1.5, 1.0])
def test_theory_curve_reciprocal_ratios_mirror(ratio):
    """Test swapping N_T and N_R reflects the curve about w = 1/2."""
    n_train, n_reference = sizes_for_ratio(1000, ratio)
    grid = uniform_grid(11)
    forward_curve = theory_curve(n_train, n_reference, 50.0, grid, delta=1e-5, vc_dim=10)
    swapped = theory_curve(n_reference, n_train, 50.0, grid, delta=1e-5, vc_dim=10)
    for point, mirror in zip(forward_curve.points, reversed(swapped.points)):
        assert point.w == pytest.approx(1.0 - mirror.w)
        assert point.epsilon_t == pytest.approx(mirror.epsilon_r)
        assert point.epsilon_r == pytest.approx(mirror.epsilon_t)
        assert point.n_eff == pytest.approx(mirror.n_eff)


def test_uniform_grid():
    """Test the grid spans [0, 1] inclusive."""
    assert uniform_grid(5) == [0.0, 0.25, 0.5, 0.75, 1.0]


@pytest.mark.parametrize(
    ("total", "ratio", "expected"),
    [(20000, 1.0, (10000, 10000)), (20000, 9.0, (18000, 2000)), (20000, 0.25, (4000, 16000))],
)
def test_sizes_for_ratio(total, ratio, expected):
    """Test totals split at the requested N_T : N_R ratio."""
    assert sizes_for_ratio(total, ratio) == expected


def test_sizes_for_ratio_domain():
    """Test ratios must be positive and both sides non-empty."""
    assert sizes_for_ratio(10, 1000.0) == (9, 1)
    with pytest.raises(DomainError):
        sizes_for_ratio(10, 0.0)


def test_pearson_configurability():
    """Test a perfectly linear relation has r = 1."""
    assert pearson_configurability([1.0, 2.0, 3.0, 4.0], [2.0, 4.0, 6.0, 8.0]) == pytest.approx(1.0)
    assert pearson_configurability([1.0, 2.0, 3.0], [3.0, 2.0, 1.0]) == pytest.approx(-1.0)


@pytest.mark.parametrize(
    ("theoretical", "empirical"),
    [
        ([1.0, 2.0], [1.0, 2.0]),
        ([1.0, 1.0, 1.0], [1.0, 2.0, 3.0]),
        ([1.0, 2.0, math.inf], [1.0, 2.0, 3.0]),
        ([1.0, 2.0, 3.0], [1.0, 2.0]),
    ],
)
def test_pearson_configurability_undefined(theoretical, empirical):
    """Test short, constant, non-finite and mismatched sequences are refused."""
    with pytest.raises(UndefinedCorrelationError):
        pearson_configurability(theoretical, empirical)


@pytest.mark.parametrize("trial", range(10))
def test_noise_scale_random_parameters(trial):
    """Test sigma against the closed form for random parameter sets."""
    rng = np.random.default_rng(500 + trial)
    epsilon_0 = float(rng.uniform(0.1, 100.0))
    delta = float(rng.uniform(1e-9, 1e-2))
    steps = int(rng.integers(1, 10_000))
    clip_norm = float(rng.uniform(0.1, 10.0))
    alpha = float(rng.uniform(0.001, 1.0))
    expected = alpha * math.sqrt(steps) * math.sqrt(2.0 * math.log(1.25 / delta)) * clip_norm / epsilon_0
    assert dpsgd_noise_scale(epsilon_0, delta, steps, clip_norm, alpha) == pytest.approx(
        expected, rel=1e-12
    )
