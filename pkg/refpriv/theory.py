"""Closed-form privacy budgets, generalization bound and tradeoff curves for WERM.

With weight ``w`` on the reference data, DP-SGD noise calibrated to a budget
``epsilon_0`` yields per-step budgets ``epsilon_0 (1 - w) / N_T`` for the
training data and ``epsilon_0 w / N_R`` for the reference data. Utility is
tracked through the effective sample count
``N_eff = [(1 - w)^2 / N_T + w^2 / N_R]^-1``, which peaks at
``w* = N_R / (N_T + N_R)`` with value ``N_T + N_R``. All O(.) constants are
taken as 1, so every epsilon here is nominal.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.stats import pearsonr

from .const import MIN_PCC_POINTS
from .exceptions import DomainError, UndefinedCorrelationError

_LOGGER = logging.getLogger(__name__)

_WEIGHT_SUM_TOLERANCE = 1e-9


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon_0: float
    epsilon_t: float
    epsilon_r: float
    delta: float
    sigma: float
    valid: bool
    nominal: bool = True


@dataclass(frozen=True)
class MultiPrivacyBudget:
    """Per-dataset budgets of an M-dataset weighted risk."""

    epsilon_0: float
    epsilons: tuple[float, ...]
    delta: float
    sigma: float
    valid: bool
    nominal: bool = True


@dataclass(frozen=True, kw_only=True)
class BoundInputs:
    n_train: int
    n_reference: int
    w: float
    vc_dim: float
    delta: float
    steps: int = 1
    clip_norm: float = 1.0
    sampling_ratio: float = 1.0

    @property
    def n_total(self) -> int:
        return self.n_train + self.n_reference


@dataclass(frozen=True)
class CurvePoint:
    w: float
    n_eff: float
    epsilon_t: float
    epsilon_r: float
    bound_excess: float


@dataclass(frozen=True)
class TheoryCurve:
    """Points sorted by w for one (N_T, N_R, epsilon_0) setting."""

    n_train: int
    n_reference: int
    epsilon_0: float
    points: tuple[CurvePoint, ...]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "w": [p.w for p in self.points],
                "n_eff": [p.n_eff for p in self.points],
                "eps_t": [p.epsilon_t for p in self.points],
                "eps_r": [p.epsilon_r for p in self.points],
                "bound_excess": [p.bound_excess for p in self.points],
            }
        )


def _check_sizes(*sizes: float) -> None:
    if any(size <= 0 for size in sizes):
        raise DomainError(f"dataset sizes must be positive, got {sizes}")


def optimal_weight(n_train: int, n_reference: int) -> float:
    """w* = N_R / (N_T + N_R)."""
    _check_sizes(n_train, n_reference)
    return n_reference / (n_train + n_reference)


def effective_samples(n_train: int, n_reference: int, w: float) -> float:
    """N_eff = N_T N_R / ((1 - w)^2 N_R + w^2 N_T), never above N_T + N_R."""
    _check_sizes(n_train, n_reference)
    total = n_train + n_reference
    if w == optimal_weight(n_train, n_reference):
        return float(total)
    value = (n_train * n_reference) / (
        (1.0 - w) ** 2 * n_reference + w**2 * n_train
    )
    return min(float(value), float(total))


def effective_samples_multi(sizes: Sequence[int], weights: Sequence[float]) -> float:
    """[sum_m w_m^2 / N_m]^-1 for weights summing to one."""
    _check_weights(sizes, weights)
    return 1.0 / sum(w**2 / n for n, w in zip(sizes, weights))


def neff_concavity_band(n_train: int, n_reference: int) -> tuple[float, float]:
    """Interval around w* on which N_eff(w) is concave, clipped to [0, 1].

    With a = 1/N_T and b = 1/N_R the band is |w - w*| < sqrt(ab) / ((a + b) sqrt 3).
    """
    _check_sizes(n_train, n_reference)
    a, b = 1.0 / n_train, 1.0 / n_reference
    center = optimal_weight(n_train, n_reference)
    half_width = math.sqrt(a * b) / ((a + b) * math.sqrt(3.0))
    return max(0.0, center - half_width), min(1.0, center + half_width)


def dpsgd_noise_scale(
    epsilon_0: float, delta: float, steps: int, clip_norm: float, sampling_ratio: float
) -> float:
    """sigma = alpha sqrt(K) sqrt(2 ln(1.25 / delta)) C / epsilon_0."""
    if epsilon_0 <= 0:
        raise DomainError("epsilon_0 must be positive")
    if not 0.0 < delta < 1.0:
        raise DomainError("delta must lie in (0, 1)")
    return (
        sampling_ratio
        * math.sqrt(steps)
        * math.sqrt(2.0 * math.log(1.25 / delta))
        * clip_norm
        / epsilon_0
    )


def privacy_budget(
    n_train: int,
    n_reference: int,
    w: float,
    epsilon_0: float,
    delta: float,
    steps: int,
    clip_norm: float,
    sampling_ratio: float,
) -> PrivacyBudget:
    """Per-dataset budgets and the noise scale for a given epsilon_0.

    ``valid`` holds iff 0 < epsilon_0 < min(N_T / (1 - w), N_R / w); the
    side with zero weight imposes no constraint.
    """
    _check_sizes(n_train, n_reference)
    sigma = dpsgd_noise_scale(epsilon_0, delta, steps, clip_norm, sampling_ratio)
    limit_t = n_train / (1.0 - w) if w < 1.0 else math.inf
    limit_r = n_reference / w if w > 0.0 else math.inf
    valid = 0.0 < epsilon_0 < min(limit_t, limit_r)
    if not valid:
        _LOGGER.debug(
            "epsilon_0=%s outside the valid range for w=%s", epsilon_0, w
        )
    return PrivacyBudget(
        epsilon_0=epsilon_0,
        epsilon_t=epsilon_0 * (1.0 - w) / n_train,
        epsilon_r=epsilon_0 * w / n_reference,
        delta=delta,
        sigma=sigma,
        valid=valid,
    )


def privacy_budget_multi(
    sizes: Sequence[int],
    weights: Sequence[float],
    epsilon_0: float,
    delta: float,
    steps: int,
    clip_norm: float,
    sampling_ratio: float,
) -> MultiPrivacyBudget:
    """epsilon_m = epsilon_0 w_m / N_m for each of M datasets."""
    _check_weights(sizes, weights)
    sigma = dpsgd_noise_scale(epsilon_0, delta, steps, clip_norm, sampling_ratio)
    limit = min((n / w for n, w in zip(sizes, weights) if w > 0.0), default=math.inf)
    return MultiPrivacyBudget(
        epsilon_0=epsilon_0,
        epsilons=tuple(epsilon_0 * w / n for n, w in zip(sizes, weights)),
        delta=delta,
        sigma=sigma,
        valid=0.0 < epsilon_0 < limit,
    )


def _check_weights(sizes: Sequence[int], weights: Sequence[float]) -> None:
    if len(sizes) != len(weights) or not sizes:
        raise DomainError("need one weight per dataset")
    _check_sizes(*sizes)
    if any(w < 0.0 for w in weights):
        raise DomainError("weights must be non-negative")
    if abs(sum(weights) - 1.0) > _WEIGHT_SUM_TOLERANCE:
        raise DomainError(f"weights sum to {sum(weights)}, expected 1")


def relative_privacy_ratio(n_train: int, n_reference: int, w: float) -> float:
    """epsilon_T / epsilon_R = ((1 - w) / w) (N_R / N_T); math.inf at w = 0."""
    _check_sizes(n_train, n_reference)
    if w == 0.0:
        return math.inf
    return (1.0 - w) / w * (n_reference / n_train)


def nominal_epsilon(budget: PrivacyBudget, steps: int, alpha: float) -> tuple[float, float]:
    """Whole-run budgets epsilon_m alpha sqrt(K), leading constant 1."""
    if not budget.valid:
        raise DomainError("nominal totals need a valid budget")
    factor = alpha * math.sqrt(steps)
    return budget.epsilon_t * factor, budget.epsilon_r * factor


def generalization_bound(inputs: BoundInputs) -> float:
    """Excess risk of WERM over the best hypothesis.

    2 sqrt(d / N_eff) sqrt(g + ln(N / d)) + sqrt(2 ln(2 / delta) / N_eff),
    with d the VC dimension and g = max(4 / d, 1).
    """
    if inputs.vc_dim <= 0:
        raise DomainError("vc_dim must be positive")
    n_eff = effective_samples(inputs.n_train, inputs.n_reference, inputs.w)
    gamma = max(4.0 / inputs.vc_dim, 1.0)
    log_term = gamma + math.log(inputs.n_total / inputs.vc_dim)
    if log_term < 0:
        raise DomainError(
            f"bound is vacuous: gamma + log(N / vc_dim) = {log_term:.4g} < 0"
        )
    return 2.0 * math.sqrt(inputs.vc_dim / n_eff) * math.sqrt(log_term) + math.sqrt(
        2.0 * math.log(2.0 / inputs.delta) / n_eff
    )


def theory_curve(
    n_train: int,
    n_reference: int,
    epsilon_0: float,
    grid: Sequence[float],
    *,
    delta: float,
    vc_dim: float,
    steps: int = 1,
    clip_norm: float = 1.0,
    sampling_ratio: float = 1.0,
) -> TheoryCurve:
    """Evaluate N_eff, both budgets and the bound at every w of the grid.

    Grid points where the bound is vacuous carry NaN in ``bound_excess``.
    """
    values = sorted(float(w) for w in grid)
    if values and (values[0] < 0.0 or values[-1] > 1.0):
        raise DomainError("w grid must lie in [0, 1]")
    points: list[CurvePoint] = []
    for w in values:
        budget = privacy_budget(
            n_train, n_reference, w, epsilon_0, delta, steps, clip_norm, sampling_ratio
        )
        try:
            bound = generalization_bound(
                BoundInputs(
                    n_train=n_train,
                    n_reference=n_reference,
                    w=w,
                    vc_dim=vc_dim,
                    delta=delta,
                    steps=steps,
                    clip_norm=clip_norm,
                    sampling_ratio=sampling_ratio,
                )
            )
        except DomainError:
            bound = math.nan
        points.append(
            CurvePoint(
                w=w,
                n_eff=effective_samples(n_train, n_reference, w),
                epsilon_t=budget.epsilon_t,
                epsilon_r=budget.epsilon_r,
                bound_excess=bound,
            )
        )
    return TheoryCurve(n_train, n_reference, epsilon_0, tuple(points))


def uniform_grid(points: int) -> list[float]:
    """``points`` evenly spaced weights from 0 to 1 inclusive."""
    return [float(w) for w in np.linspace(0.0, 1.0, points)]


def sizes_for_ratio(total: int, ratio: float) -> tuple[int, int]:
    """Split ``total`` into (N_T, N_R) with N_T / N_R close to ``ratio``."""
    if ratio <= 0:
        raise DomainError("ratio must be positive")
    n_train = round(total * ratio / (1.0 + ratio))
    n_train = min(max(n_train, 1), total - 1)
    return n_train, total - n_train


def pearson_configurability(
    theoretical: Sequence[float], empirical: Sequence[float]
) -> float:
    """Pearson r between desired and measured privacy ratios.

    For regularization defenses the theoretical sequence is 1 / lambda.
    """
    x = np.asarray(theoretical, dtype=np.float64)
    y = np.asarray(empirical, dtype=np.float64)
    if x.shape != y.shape:
        raise UndefinedCorrelationError("sequences differ in length")
    if x.size < MIN_PCC_POINTS:
        raise UndefinedCorrelationError(
            f"need at least {MIN_PCC_POINTS} points, got {x.size}"
        )
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise UndefinedCorrelationError("sequences contain non-finite values")
    if np.ptp(x) == 0.0 or np.ptp(y) == 0.0:
        raise UndefinedCorrelationError("a sequence has zero variance")
    r, _ = pearsonr(x, y)
    return float(np.clip(r, -1.0, 1.0))
