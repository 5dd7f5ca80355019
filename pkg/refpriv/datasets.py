"""Tabular loaders, synthetic data, splits and batch streams."""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
import numpy.typing as npt
import pandas as pd

from .const import (
    DEFAULT_CLUSTER_TIGHTNESS,
    DEFAULT_SYNTHETIC_FLIP_PROB,
    FORMAT_LABEL_FIRST_CSV,
    FORMAT_LABEL_FIRST_CSV_ONE_BASED,
    TABULAR_FORMATS,
)
from .exceptions import DataValidationError, ParseError, ShapeError, SizeError
from .numeric_core import Labels, Matrix

_LOGGER = logging.getLogger(__name__)

_PANDAS_LINE = re.compile(r"line (\d+)")


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Feature matrix plus integer class labels; immutable once built.

    ``ids`` are row positions in the source dataset, kept through subsets.
    """

    features: Matrix
    labels: Labels
    class_count: int
    ids: npt.NDArray[np.int64] | None = None

    def __post_init__(self) -> None:
        if self.features.ndim != 2:
            raise ShapeError("features must be a 2-D matrix")
        if self.labels.shape != (self.features.shape[0],):
            raise ShapeError(
                f"{self.labels.shape[0]} labels for {self.features.shape[0]} rows"
            )
        if np.isnan(self.features).any():
            raise DataValidationError("features contain NaN")
        if self.labels.size and (
            self.labels.min() < 0 or self.labels.max() >= self.class_count
        ):
            raise DataValidationError(
                f"labels must lie in [0, {self.class_count})"
            )
        self.features.setflags(write=False)
        self.labels.setflags(write=False)

    @classmethod
    def empty(cls, dim: int, class_count: int) -> LabeledDataset:
        return cls(
            np.zeros((0, dim)), np.zeros(0, dtype=np.int64), class_count
        )

    @property
    def size(self) -> int:
        return int(self.features.shape[0])

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    def subset(self, indices: npt.NDArray[np.int64]) -> LabeledDataset:
        """Rows at ``indices``, keeping class_count."""
        return LabeledDataset(
            self.features[indices].copy(),
            self.labels[indices].copy(),
            self.class_count,
            indices.copy() if self.ids is None else self.ids[indices],
        )


@dataclass(frozen=True)
class SplitSpec:
    """Sizes of the train/reference/test blocks and the attacker slice."""

    n_train: int
    n_reference: int
    n_test: int
    seed: int
    n_attacker: int = 0

    @property
    def total(self) -> int:
        return self.n_train + self.n_reference + self.n_test + self.n_attacker


class DataSplits(NamedTuple):
    """Disjoint blocks of one source dataset."""

    train: LabeledDataset
    reference: LabeledDataset
    test: LabeledDataset
    attacker: LabeledDataset


def load_tabular(
    path: str | Path,
    data_format: str = FORMAT_LABEL_FIRST_CSV,
    *,
    binary: bool = True,
) -> LabeledDataset:
    """Read a label-first CSV file.

    The first column is the integer label (0-based, or 1-based for
    ``label_first_csv_one_based``); every further column is a feature. With
    ``binary`` set, features must be exactly 0 or 1.
    """
    if data_format not in TABULAR_FORMATS:
        raise ParseError(f"unknown tabular format '{data_format}'")
    try:
        frame = pd.read_csv(path, header=None, skipinitialspace=True)
    except pd.errors.EmptyDataError as err:
        raise ParseError(f"{path} is empty") from err
    except pd.errors.ParserError as err:
        match = _PANDAS_LINE.search(str(err))
        raise ParseError(
            "inconsistent column count", int(match.group(1)) if match else None
        ) from err

    if frame.shape[1] < 2:
        raise ParseError("expected a label column and at least one feature", 1)
    numeric = frame.apply(pd.to_numeric, errors="coerce")
    bad_rows = np.flatnonzero(numeric.isna().any(axis=1).to_numpy())
    if bad_rows.size:
        raise ParseError("missing or non-numeric value", int(bad_rows[0]) + 1)

    values = numeric.to_numpy(dtype=np.float64)
    raw_labels = values[:, 0]
    fractional = np.flatnonzero(raw_labels != np.round(raw_labels))
    if fractional.size:
        raise ParseError("label is not an integer", int(fractional[0]) + 1)
    labels = raw_labels.astype(np.int64)
    if data_format == FORMAT_LABEL_FIRST_CSV_ONE_BASED:
        labels -= 1
    negative = np.flatnonzero(labels < 0)
    if negative.size:
        raise ParseError("label below the format's base", int(negative[0]) + 1)

    features = values[:, 1:]
    if binary:
        offending = np.flatnonzero(~np.isin(features, (0.0, 1.0)).all(axis=1))
        if offending.size:
            raise DataValidationError(
                f"line {int(offending[0]) + 1}: non-binary feature value"
            )

    dataset = LabeledDataset(features, labels, int(labels.max()) + 1)
    _LOGGER.info(
        "Loaded %d examples with %d features and %d classes from %s",
        dataset.size,
        dataset.dim,
        dataset.class_count,
        path,
    )
    return dataset


def dump_csv(
    dataset: LabeledDataset, path: str | Path, *, one_based: bool = False
) -> None:
    """Write a dataset in the label-first CSV layout load_tabular reads."""
    frame = pd.DataFrame(dataset.features)
    if np.isin(dataset.features, (0.0, 1.0)).all():
        frame = frame.astype(np.int64)
    frame.insert(0, "label", dataset.labels + (1 if one_based else 0))
    frame.to_csv(path, header=False, index=False)
    _LOGGER.debug("Wrote %d examples to %s", dataset.size, path)


def synthesize(
    classes: int,
    per_class: int,
    dim: int,
    cluster_tightness: float = DEFAULT_CLUSTER_TIGHTNESS,
    flip_prob: float = DEFAULT_SYNTHETIC_FLIP_PROB,
    seed: int = 0,
) -> LabeledDataset:
    """Clustered binary data shaped like a purchase-history table.

    Every class centroid keeps a ``cluster_tightness`` fraction of its bits
    from one shared base pattern and draws the rest at random; each example
    is its class centroid with independent bit flips at rate ``flip_prob``.
    Rows are grouped by class.
    """
    if min(classes, per_class, dim) <= 0:
        raise ValueError("classes, per_class and dim must be positive")
    if not 0.0 < cluster_tightness < 1.0:
        raise ValueError("cluster_tightness must lie in (0, 1)")
    if not 0.0 <= flip_prob < 0.5:
        raise ValueError("flip_prob must lie in [0, 0.5)")

    rng = np.random.default_rng(seed)
    base = rng.integers(0, 2, size=dim)
    own_bits = rng.random((classes, dim)) >= cluster_tightness
    centroids = np.where(own_bits, rng.integers(0, 2, size=(classes, dim)), base)

    labels = np.repeat(np.arange(classes, dtype=np.int64), per_class)
    flips = rng.random((labels.size, dim)) < flip_prob
    features = np.logical_xor(centroids[labels], flips).astype(np.float64)
    return LabeledDataset(features, labels, classes)


def split_all(dataset: LabeledDataset, spec: SplitSpec) -> DataSplits:
    """Partition one seeded permutation into train, reference, test and attacker blocks."""
    sizes = (spec.n_train, spec.n_reference, spec.n_test)
    if min(sizes) <= 0 or spec.n_attacker < 0:
        raise SizeError(f"split sizes must be positive, got {sizes}")
    if spec.total > dataset.size:
        raise SizeError(
            f"split needs {spec.total} examples, dataset has {dataset.size}"
        )
    permutation = np.random.default_rng(spec.seed).permutation(dataset.size)
    bounds = np.cumsum((0, *sizes, spec.n_attacker))
    blocks = [
        dataset.subset(permutation[start:stop])
        for start, stop in zip(bounds[:-1], bounds[1:])
    ]
    _LOGGER.debug(
        "Split %d examples into train=%d reference=%d test=%d attacker=%d",
        dataset.size,
        spec.n_train,
        spec.n_reference,
        spec.n_test,
        spec.n_attacker,
    )
    return DataSplits(*blocks)


def split(
    dataset: LabeledDataset, spec: SplitSpec
) -> tuple[LabeledDataset, LabeledDataset, LabeledDataset]:
    """Disjoint train, reference and test blocks."""
    parts = split_all(dataset, spec)
    return parts.train, parts.reference, parts.test


class BatchStream:
    """Endless mini-batches; each epoch walks a fresh permutation of the dataset.

    The permutation of epoch ``e`` is a pure function of ``(seed, e)``, so two
    streams over equally sized datasets with the same seed visit the same
    positions in the same order.
    """

    def __init__(self, dataset: LabeledDataset, batch_size: int, seed: int) -> None:
        if batch_size <= 0:
            raise ValueError("batch_size must be positive")
        self.dataset = dataset
        self.batch_size = batch_size
        self.seed = seed
        self.epoch = 0
        self._position = 0
        self.epoch_permutation = self._permutation(0)

    def _permutation(self, epoch: int) -> npt.NDArray[np.int64]:
        rng = np.random.default_rng([self.seed, epoch])
        return rng.permutation(self.dataset.size).astype(np.int64)

    @property
    def batches_per_epoch(self) -> int:
        return math.ceil(self.dataset.size / self.batch_size)

    @property
    def epoch_complete(self) -> bool:
        """True once the current permutation has been fully handed out."""
        return self._position >= self.dataset.size

    def next_indices(self) -> npt.NDArray[np.int64]:
        """Indices of the next batch; the last batch of an epoch may be short."""
        if self.dataset.size == 0:
            raise ShapeError("cannot draw batches from an empty dataset")
        if self.epoch_complete:
            self.epoch += 1
            self._position = 0
            self.epoch_permutation = self._permutation(self.epoch)
        stop = self._position + self.batch_size
        indices = self.epoch_permutation[self._position : stop]
        self._position += indices.size
        return indices

    def next_batch(self) -> tuple[Matrix, Labels]:
        indices = self.next_indices()
        return self.dataset.features[indices], self.dataset.labels[indices]


def next_batch(stream: BatchStream) -> tuple[Matrix, Labels]:
    """Next (features, labels) batch of ``stream``."""
    return stream.next_batch()
