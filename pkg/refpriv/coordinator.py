"""Sweep coordinator: runs every (defense spec, seed) job on a bounded worker pool."""

from __future__ import annotations

import asyncio
import logging
import math
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import TypedDict

import numpy as np

from .attacks import AttackKind, AttackReport, attack_model_splits
from .config import ExperimentConfig
from .datasets import DataSplits, LabeledDataset, split_all
from .defenses import DefenseSpec, TrainedInstance, generalization_gap, train_defense
from .exceptions import NumericError

_LOGGER = logging.getLogger(__name__)

type Trainer = Callable[..., TrainedInstance]


@dataclass(kw_only=True)
class RunResult:
    """Metrics and attack reports of one trained instance."""

    spec_index: int
    spec: DefenseSpec
    seed: int
    test_accuracy: float
    train_loss: float
    test_loss: float
    epochs_run: int
    per_epoch_seconds: list[float]
    reports: list[AttackReport] = field(default_factory=list)
    generalization_gap: float = math.nan

    @property
    def mean_epoch_seconds(self) -> float:
        return float(np.mean(self.per_epoch_seconds)) if self.per_epoch_seconds else 0.0

    @property
    def truncated(self) -> bool:
        """Whether any attack scored a truncated member or non-member set."""
        return any(report.truncated for report in self.reports)


@dataclass(frozen=True, kw_only=True)
class RunFailure:
    """A job that diverged; the sweep continues without it."""

    spec_index: int
    spec: DefenseSpec
    seed: int
    error_type: str
    message: str
    layer_index: int | None = None


class SweepData(TypedDict):
    """TypedDict for everything a sweep produces before aggregation."""

    seeds: list[int]
    results: list[RunResult]
    failures: list[RunFailure]


def expand_seeds(master_seed: int, count: int) -> list[int]:
    """Deterministic per-run seeds from one master seed."""
    state = np.random.SeedSequence(master_seed).generate_state(count, dtype=np.uint64)
    return [int(value) for value in state]


def split_seed(base_seed: int, run_seed: int) -> int:
    """Seed of the data split used by every spec that shares ``run_seed``."""
    return int(
        np.random.SeedSequence([base_seed, run_seed]).generate_state(1, dtype=np.uint64)[0]
    )


def run_job(
    spec_index: int,
    spec: DefenseSpec,
    seed: int,
    splits: DataSplits,
    attacks: tuple[AttackKind, ...],
    trainer: Trainer = train_defense,
) -> RunResult:
    """Train one instance and attack its training and reference data."""
    _LOGGER.debug("Starting %s with seed %d", spec.label, seed)
    instance = trainer(
        splits.train, splits.reference, spec, seed, test=splits.test
    )
    if instance.train is None or instance.test is None:
        raise NumericError(f"{spec.label}: no training/test metrics")
    if not (math.isfinite(instance.train.loss) and math.isfinite(instance.test.loss)):
        raise NumericError(f"{spec.label}: non-finite loss after training")
    reports = attack_model_splits(
        instance.model,
        attacks,
        splits.train,
        splits.reference,
        splits.test,
        splits.attacker,
        seed,
    )
    return RunResult(
        spec_index=spec_index,
        spec=spec,
        seed=seed,
        test_accuracy=instance.test.accuracy,
        train_loss=instance.train.loss,
        test_loss=instance.test.loss,
        epochs_run=instance.epochs_run,
        per_epoch_seconds=list(instance.per_epoch_seconds),
        reports=reports,
        generalization_gap=generalization_gap(instance),
    )


class SweepCoordinator:
    """Runs a sweep's jobs concurrently and isolates per-run failures."""

    def __init__(
        self,
        config: ExperimentConfig,
        dataset: LabeledDataset | None = None,
        *,
        trainer: Trainer = train_defense,
    ) -> None:
        """Initialize the coordinator; the dataset is loaded lazily if not given."""
        self.config = config
        self._dataset = dataset
        self._trainer = trainer
        self.seeds = expand_seeds(config.master_seed, config.seeds)
        _LOGGER.debug(
            "SweepCoordinator initialized with %d specs x %d seeds on %d workers",
            len(config.defenses),
            config.seeds,
            config.workers,
        )

    @property
    def dataset(self) -> LabeledDataset:
        if self._dataset is None:
            self._dataset = self.config.dataset.load()
        return self._dataset

    def splits_for(self, run_seed: int) -> DataSplits:
        spec = replace(
            self.config.split, seed=split_seed(self.config.split.seed, run_seed)
        )
        return split_all(self.dataset, spec)

    async def async_run(self) -> SweepData:
        """Run every job; divergent runs are recorded, other errors propagate."""
        splits = {seed: self.splits_for(seed) for seed in self.seeds}
        jobs = [
            (index, spec, seed)
            for index, spec in enumerate(self.config.defenses)
            for seed in self.seeds
        ]
        _LOGGER.info("Starting sweep of %d runs", len(jobs))
        loop = asyncio.get_running_loop()
        with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
            outcomes = await asyncio.gather(
                *(
                    loop.run_in_executor(
                        pool,
                        run_job,
                        index,
                        spec,
                        seed,
                        splits[seed],
                        self.config.attacks,
                        self._trainer,
                    )
                    for index, spec, seed in jobs
                ),
                return_exceptions=True,
            )

        results: list[RunResult] = []
        failures: list[RunFailure] = []
        for (index, spec, seed), outcome in zip(jobs, outcomes):
            if isinstance(outcome, ArithmeticError):
                _LOGGER.warning(
                    "Run %s with seed %d diverged: %s", spec.label, seed, outcome
                )
                failures.append(
                    RunFailure(
                        spec_index=index,
                        spec=spec,
                        seed=seed,
                        error_type=type(outcome).__name__,
                        message=str(outcome),
                        layer_index=getattr(outcome, "layer_index", None),
                    )
                )
            elif isinstance(outcome, BaseException):
                _LOGGER.error("Run %s with seed %d failed: %s", spec.label, seed, outcome)
                raise outcome
            else:
                results.append(outcome)

        _LOGGER.info(
            "Sweep finished: %d runs succeeded, %d failed", len(results), len(failures)
        )
        return {"seeds": self.seeds, "results": results, "failures": failures}
