"""Aggregation of sweep runs into tradeoff points, and instance selection."""

from __future__ import annotations

import asyncio
import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from enum import StrEnum

import numpy as np

from .attacks import AttackKind, TargetSplit
from .config import ExperimentConfig
from .const import (
    EQUAL_PRIVACY_MAX_GAP,
    HIGH_REFERENCE_PRIVACY_MAX_MIA_REF,
    MIN_PCC_POINTS,
    NO_INSTANCE_REASON,
    PUBLIC_REFERENCE_MAX_MIA_TRAIN,
)
from .coordinator import RunFailure, RunResult, SweepCoordinator, SweepData
from .datasets import LabeledDataset
from .defenses import REGULARIZED_KINDS, WERM_KINDS, DefenseKind, DefenseSpec
from .exceptions import UndefinedCorrelationError
from .theory import pearson_configurability, relative_privacy_ratio

_LOGGER = logging.getLogger(__name__)


class Regime(StrEnum):
    """Privacy settings a deployed instance may have to satisfy."""

    PUBLIC_REFERENCE = "public_reference"
    EQUAL_PRIVACY = "equal_privacy"
    HIGH_REFERENCE_PRIVACY = "high_reference_privacy"


@dataclass(frozen=True, kw_only=True)
class AttackSummary:
    """Seed mean and stddev of one attack's accuracy on one target."""

    mean: float
    std: float


@dataclass(frozen=True, kw_only=True)
class TradeoffPoint:
    """One defense configuration aggregated over its seeds."""

    kind: DefenseKind
    parameter: float
    label: str
    spec_index: int
    n_train: int
    n_reference: int
    test_accuracy: float
    test_accuracy_std: float
    mia_train: float
    mia_train_std: float
    mia_ref: float
    mia_ref_std: float
    per_epoch_seconds: float
    epochs: int
    runs: int
    failed_runs: int = 0
    truncated_runs: int = 0
    generalization_gap: float = math.nan
    generalization_gap_std: float = math.nan
    attacks: dict[str, AttackSummary] = field(default_factory=dict)
    mirrored: bool = False

    @property
    def failed(self) -> bool:
        return self.runs == 0

    @property
    def overall_seconds(self) -> float:
        return self.per_epoch_seconds * self.epochs


@dataclass(frozen=True)
class RegimeSelection:
    regime: Regime
    chosen: TradeoffPoint | None
    reason: str = ""


@dataclass(frozen=True)
class PccResult:
    """Configurability of one defense kind; ``value`` is None when undefined."""

    kind: DefenseKind
    value: float | None
    points: int
    reason: str = ""


def _mean_std(values: Sequence[float]) -> tuple[float, float]:
    if not values:
        return math.nan, math.nan
    array = np.asarray(values, dtype=np.float64)
    std = float(np.std(array, ddof=1)) if array.size > 1 else 0.0
    return float(np.mean(array)), std


def strongest_attack(result: RunResult, target: TargetSplit) -> float:
    """Highest attack accuracy of a run against one target; NaN if none ran."""
    accuracies = [r.accuracy for r in result.reports if r.target_split is target]
    return max(accuracies) if accuracies else math.nan


def aggregate(
    specs: Sequence[DefenseSpec],
    results: Sequence[RunResult],
    failures: Sequence[RunFailure],
    n_train: int,
    n_reference: int,
    attacks: Sequence[AttackKind] = (),
) -> list[TradeoffPoint]:
    """One TradeoffPoint per spec, in spec order; failed specs keep NaN metrics."""
    points: list[TradeoffPoint] = []
    for index, spec in enumerate(specs):
        runs = [r for r in results if r.spec_index == index]
        failed = sum(1 for f in failures if f.spec_index == index)
        test_mean, test_std = _mean_std([r.test_accuracy for r in runs])
        gap_mean, gap_std = _mean_std([r.generalization_gap for r in runs])
        truncated = sum(1 for r in runs if r.truncated)
        train_mean, train_std = _mean_std(
            [strongest_attack(r, TargetSplit.TRAINING) for r in runs]
        )
        ref_mean, ref_std = _mean_std(
            [strongest_attack(r, TargetSplit.REFERENCE) for r in runs]
        )
        summaries: dict[str, AttackSummary] = {}
        for kind in attacks:
            for target in TargetSplit:
                mean, std = _mean_std(
                    [
                        report.accuracy
                        for run in runs
                        for report in run.reports
                        if report.attack_kind is kind and report.target_split is target
                    ]
                )
                summaries[f"{kind}_{target}"] = AttackSummary(mean=mean, std=std)
        seconds = [s for r in runs for s in r.per_epoch_seconds]
        points.append(
            TradeoffPoint(
                kind=spec.kind,
                parameter=spec.parameter,
                label=spec.label,
                spec_index=index,
                n_train=n_train,
                n_reference=n_reference,
                test_accuracy=test_mean,
                test_accuracy_std=test_std,
                mia_train=train_mean,
                mia_train_std=train_std,
                mia_ref=ref_mean,
                mia_ref_std=ref_std,
                per_epoch_seconds=float(np.mean(seconds)) if seconds else math.nan,
                epochs=spec.epochs,
                runs=len(runs),
                failed_runs=failed,
                truncated_runs=truncated,
                generalization_gap=gap_mean,
                generalization_gap_std=gap_std,
                attacks=summaries,
            )
        )
        if not runs:
            _LOGGER.warning("Every run of %s failed", spec.label)
        if truncated:
            _LOGGER.warning(
                "%s: %d of %d runs scored attacks on truncated sets",
                spec.label,
                truncated,
                len(runs),
            )
    return points


def _usable(point: TradeoffPoint) -> bool:
    return not point.failed and not any(
        math.isnan(v) for v in (point.test_accuracy, point.mia_train, point.mia_ref)
    )


def regime_predicate(regime: Regime, point: TradeoffPoint) -> bool:
    if regime is Regime.PUBLIC_REFERENCE:
        return point.mia_train <= PUBLIC_REFERENCE_MAX_MIA_TRAIN
    if regime is Regime.EQUAL_PRIVACY:
        return abs(point.mia_train - point.mia_ref) <= EQUAL_PRIVACY_MAX_GAP
    return point.mia_ref <= HIGH_REFERENCE_PRIVACY_MAX_MIA_REF


def select_instance(points: Sequence[TradeoffPoint], regime: Regime) -> RegimeSelection:
    """Best test accuracy among points meeting the regime.

    Ties go to the lowest MIA-train accuracy, then the lowest MIA-ref.
    """
    eligible = [p for p in points if _usable(p) and regime_predicate(regime, p)]
    if not eligible:
        _LOGGER.debug("No instance satisfies %s", regime)
        return RegimeSelection(regime, None, NO_INSTANCE_REASON)
    chosen = max(eligible, key=lambda p: (p.test_accuracy, -p.mia_train, -p.mia_ref))
    return RegimeSelection(regime, chosen)


def select_all(
    points: Sequence[TradeoffPoint],
) -> dict[DefenseKind, list[RegimeSelection]]:
    """Every regime applied separately to each defense kind's points."""
    selections: dict[DefenseKind, list[RegimeSelection]] = {}
    for kind in dict.fromkeys(p.kind for p in points):
        own = [p for p in points if p.kind is kind]
        selections[kind] = [select_instance(own, regime) for regime in Regime]
    return selections


def mirror_werm_points(points: Sequence[TradeoffPoint]) -> list[TradeoffPoint]:
    """Add the 1 - w reflection of every WERM point.

    With equally sized datasets, an instance trained at w is an instance at
    1 - w with the roles of training and reference data exchanged.
    """
    mirrored: list[TradeoffPoint] = []
    for point in points:
        if point.kind not in WERM_KINDS or point.mirrored or point.failed:
            continue
        if point.n_train != point.n_reference:
            _LOGGER.debug("Not mirroring %s: dataset sizes differ", point.label)
            continue
        target = 1.0 - point.parameter
        if any(
            p.kind is point.kind and math.isclose(p.parameter, target) for p in points
        ):
            continue
        mirrored.append(
            replace(
                point,
                parameter=target,
                label=f"{point.kind}(w={target:g})",
                mia_train=point.mia_ref,
                mia_train_std=point.mia_ref_std,
                mia_ref=point.mia_train,
                mia_ref_std=point.mia_train_std,
                mirrored=True,
            )
        )
    return [*points, *mirrored]


def theoretical_ratio(point: TradeoffPoint) -> float:
    """Desired privacy ratio: eps_T / eps_R for WERM, 1 / lambda for regularizers."""
    if point.kind in WERM_KINDS:
        return relative_privacy_ratio(point.n_train, point.n_reference, point.parameter)
    if point.kind in REGULARIZED_KINDS:
        return math.inf if point.parameter == 0 else 1.0 / point.parameter
    return math.nan


def configurability(points: Sequence[TradeoffPoint]) -> list[PccResult]:
    """Pearson r of theoretical vs empirical (MIA-train / MIA-ref) ratios per kind."""
    outcome: list[PccResult] = []
    kinds = [k for k in dict.fromkeys(p.kind for p in points) if k in WERM_KINDS | REGULARIZED_KINDS]
    for kind in kinds:
        pairs = [
            (theoretical_ratio(p), p.mia_train / p.mia_ref)
            for p in points
            if p.kind is kind and _usable(p)
        ]
        pairs = [(x, y) for x, y in pairs if math.isfinite(x) and math.isfinite(y)]
        if len(pairs) < MIN_PCC_POINTS:
            outcome.append(
                PccResult(kind, None, len(pairs), f"fewer than {MIN_PCC_POINTS} points")
            )
            continue
        try:
            value = pearson_configurability([x for x, _ in pairs], [y for _, y in pairs])
        except UndefinedCorrelationError as err:
            _LOGGER.warning("PCC for %s is undefined: %s", kind, err)
            outcome.append(PccResult(kind, None, len(pairs), str(err)))
            continue
        outcome.append(PccResult(kind, value, len(pairs)))
    return outcome


@dataclass(frozen=True)
class SweepOutcome:
    """Points plus everything needed to render and diagnose the sweep."""

    points: list[TradeoffPoint]
    data: SweepData


def run_sweep(
    config: ExperimentConfig, dataset: LabeledDataset | None = None
) -> SweepOutcome:
    """Train and attack every (spec, seed) pair and aggregate per spec."""
    coordinator = SweepCoordinator(config, dataset)
    data = asyncio.run(coordinator.async_run())
    points = aggregate(
        config.defenses,
        data["results"],
        data["failures"],
        config.split.n_train,
        config.split.n_reference,
        config.attacks,
    )
    if config.mirror_werm:
        points = mirror_werm_points(points)
    return SweepOutcome(points, data)
