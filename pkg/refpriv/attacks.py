"""Black-box membership-inference attacks and their accuracy metric."""

from __future__ import annotations

import logging
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, replace
from enum import StrEnum
from pathlib import Path

import numpy as np
import numpy.typing as npt
import pandas as pd

from .const import (
    DEFAULT_ATTACK_HIDDEN,
    DEFAULT_LEARNING_RATE,
    LOG_CLAMP,
    MEMBER_THRESHOLD,
    NN_ATTACK_BATCH_SIZE,
    NN_ATTACK_EPOCHS,
    SPLIT_TAGS,
)
from .datasets import BatchStream, LabeledDataset
from .defenses import attack_features, build_attack_model
from .exceptions import ConfigError, DataValidationError, ParseError, ShapeError
from .numeric_core import (
    Labels,
    Matrix,
    MlpModel,
    OptimizerKind,
    Vector,
    backward,
    forward,
    init_optimizer,
    optimizer_step,
    predict_labels,
    predict_proba,
)

_LOGGER = logging.getLogger(__name__)

type Bits = npt.NDArray[np.bool_]


class AttackKind(StrEnum):
    """Membership-inference attacks."""

    GAP = "gap"
    CONFIDENCE = "confidence"
    ENTROPY = "entropy"
    MODIFIED_ENTROPY = "modified_entropy"
    NEURAL_NETWORK = "nn"


class ThresholdScore(StrEnum):
    """Per-example scores a threshold attack can compare against tau."""

    CONFIDENCE = "confidence"
    ENTROPY = "entropy"
    MODIFIED_ENTROPY = "modified_entropy"


class TargetSplit(StrEnum):
    """Which data the attack tries to identify as members."""

    TRAINING = "training"
    REFERENCE = "reference"


THRESHOLD_ATTACKS: dict[AttackKind, ThresholdScore] = {
    AttackKind.CONFIDENCE: ThresholdScore.CONFIDENCE,
    AttackKind.ENTROPY: ThresholdScore.ENTROPY,
    AttackKind.MODIFIED_ENTROPY: ThresholdScore.MODIFIED_ENTROPY,
}


@dataclass(frozen=True, eq=False)
class AttackInput:
    """Confidence vectors and true labels of members and non-members."""

    member_probs: Matrix
    member_labels: Labels
    nonmember_probs: Matrix
    nonmember_labels: Labels
    member_ids: npt.NDArray[np.int64] | None = None
    nonmember_ids: npt.NDArray[np.int64] | None = None

    def __post_init__(self) -> None:
        if self.member_labels.size == 0 or self.nonmember_labels.size == 0:
            raise DataValidationError("attack input needs members and non-members")
        if self.member_probs.shape[0] != self.member_labels.size:
            raise ShapeError("member confidences and labels differ in length")
        if self.nonmember_probs.shape[0] != self.nonmember_labels.size:
            raise ShapeError("non-member confidences and labels differ in length")
        if self.member_labels.size != self.nonmember_labels.size:
            _LOGGER.warning(
                "Unequal attack sets: %d members, %d non-members",
                self.member_labels.size,
                self.nonmember_labels.size,
            )

    @classmethod
    def from_model(
        cls, model: MlpModel, members: LabeledDataset, nonmembers: LabeledDataset
    ) -> AttackInput:
        return cls(
            predict_proba(model, members.features),
            np.asarray(members.labels),
            predict_proba(model, nonmembers.features),
            np.asarray(nonmembers.labels),
            members.ids,
            nonmembers.ids,
        )

    @property
    def class_count(self) -> int:
        return int(self.member_probs.shape[1])

    def ids(self) -> npt.NDArray[np.int64] | None:
        if self.member_ids is None or self.nonmember_ids is None:
            return None
        return np.concatenate([self.member_ids, self.nonmember_ids])


@dataclass(frozen=True)
class AttackReport:
    """Outcome of one attack, stored as prediction counts."""

    attack_kind: AttackKind
    target_split: TargetSplit
    member_hits: int
    member_count: int
    nonmember_rejections: int
    nonmember_count: int
    threshold: float | None = None
    truncated: bool = False

    @property
    def accuracy(self) -> float:
        """Correct membership decisions over all decisions."""
        return (self.member_hits + self.nonmember_rejections) / (
            self.member_count + self.nonmember_count
        )


def mia_accuracy(member_predictions: Iterable[int], nonmember_predictions: Iterable[int]) -> float:
    """(sum of member bits + sum of 1 - non-member bits) / total."""
    members = np.asarray(list(member_predictions), dtype=np.int64)
    nonmembers = np.asarray(list(nonmember_predictions), dtype=np.int64)
    if members.size == 0 or nonmembers.size == 0:
        raise DataValidationError("accuracy needs members and non-members")
    hits = int(members.sum())
    rejections = int(nonmembers.size - nonmembers.sum())
    return (hits + rejections) / (members.size + nonmembers.size)


def _report(
    kind: AttackKind,
    target: TargetSplit,
    member_bits: Bits,
    nonmember_bits: Bits,
    threshold: float | None = None,
) -> AttackReport:
    return AttackReport(
        attack_kind=kind,
        target_split=target,
        member_hits=int(np.count_nonzero(member_bits)),
        member_count=int(member_bits.size),
        nonmember_rejections=int(nonmember_bits.size - np.count_nonzero(nonmember_bits)),
        nonmember_count=int(nonmember_bits.size),
        threshold=threshold,
    )


def gap_attack_accuracy(member_accuracy: float, nonmember_accuracy: float) -> float:
    """Closed form of the gap attack for equal-size sets: 1/2 + (acc_T - acc_T') / 2."""
    return 0.5 + (member_accuracy - nonmember_accuracy) / 2.0


def gap_attack(
    attack_input: AttackInput, target: TargetSplit = TargetSplit.TRAINING
) -> AttackReport:
    """Member iff the model classifies the example correctly."""
    return _report(
        AttackKind.GAP,
        target,
        predict_labels(attack_input.member_probs) == attack_input.member_labels,
        predict_labels(attack_input.nonmember_probs) == attack_input.nonmember_labels,
    )


def attack_scores(probs: Matrix, labels: Labels, score: ThresholdScore) -> Vector:
    """Per-example score; confidence is high for members, the entropies low."""
    rows = np.arange(labels.size)
    if score is ThresholdScore.CONFIDENCE:
        return probs[rows, labels]
    if score is ThresholdScore.ENTROPY:
        return -np.sum(probs * np.log(np.maximum(probs, LOG_CLAMP)), axis=1)
    true_prob = probs[rows, labels]
    log_one_minus = np.log(np.maximum(1.0 - probs, LOG_CLAMP))
    others = probs * log_one_minus
    others[rows, labels] = 0.0
    return -(1.0 - true_prob) * np.log(np.maximum(true_prob, LOG_CLAMP)) - others.sum(
        axis=1
    )


def member_when_above(score: ThresholdScore) -> bool:
    """Confidence flags members with score >= tau; entropies with score < tau."""
    return score is ThresholdScore.CONFIDENCE


def threshold_decisions(
    scores: Vector, threshold: float, score: ThresholdScore
) -> Bits:
    if member_when_above(score):
        return scores >= threshold
    return scores < threshold


def best_threshold(
    member_scores: Vector, nonmember_scores: Vector, score: ThresholdScore
) -> tuple[float, int, int]:
    """Sweep every observed score plus +-inf; returns (tau, hits, rejections).

    Ties go to the smallest tau.
    """
    candidates = np.unique(
        np.concatenate([[-np.inf], member_scores, nonmember_scores, [np.inf]])
    )
    members = np.sort(member_scores)
    nonmembers = np.sort(nonmember_scores)
    below_members = np.searchsorted(members, candidates, side="left")
    below_nonmembers = np.searchsorted(nonmembers, candidates, side="left")
    if member_when_above(score):
        hits = members.size - below_members
        rejections = below_nonmembers
    else:
        hits = below_members
        rejections = nonmembers.size - below_nonmembers
    best = int(np.argmax(hits + rejections))
    return float(candidates[best]), int(hits[best]), int(rejections[best])


def threshold_attack(
    attack_input: AttackInput,
    score: ThresholdScore,
    target: TargetSplit = TargetSplit.TRAINING,
) -> AttackReport:
    """Class-independent threshold attack with tau optimized on the input itself."""
    member_scores = attack_scores(
        attack_input.member_probs, attack_input.member_labels, score
    )
    nonmember_scores = attack_scores(
        attack_input.nonmember_probs, attack_input.nonmember_labels, score
    )
    tau, hits, rejections = best_threshold(member_scores, nonmember_scores, score)
    _LOGGER.debug("%s threshold attack picked tau=%r", score, tau)
    return AttackReport(
        attack_kind=AttackKind(score.value),
        target_split=target,
        member_hits=hits,
        member_count=int(member_scores.size),
        nonmember_rejections=rejections,
        nonmember_count=int(nonmember_scores.size),
        threshold=tau,
    )


def nn_attack(
    attack_input: AttackInput,
    known: AttackInput,
    hidden: tuple[int, ...] = DEFAULT_ATTACK_HIDDEN,
    seed: int = 0,
    target: TargetSplit = TargetSplit.TRAINING,
    *,
    epochs: int = NN_ATTACK_EPOCHS,
    batch_size: int = NN_ATTACK_BATCH_SIZE,
    learning_rate: float = DEFAULT_LEARNING_RATE,
) -> AttackReport:
    """Train an attack MLP on the attacker's known members/non-members, then evaluate.

    Inputs are one-hot(label) followed by the confidence vector; an example is
    flagged as a member when the attack output exceeds 0.5.
    """
    known_ids, evaluated_ids = known.ids(), attack_input.ids()
    if known_ids is not None and evaluated_ids is not None:
        overlap = np.intersect1d(known_ids, evaluated_ids)
        if overlap.size:
            raise DataValidationError(
                f"{overlap.size} attacker examples also appear in the evaluation sets"
            )
    k = attack_input.class_count
    features = np.vstack(
        [
            attack_features(known.member_probs, known.member_labels, k),
            attack_features(known.nonmember_probs, known.nonmember_labels, k),
        ]
    )
    targets = np.concatenate(
        [
            np.ones(known.member_labels.size, dtype=np.int64),
            np.zeros(known.nonmember_labels.size, dtype=np.int64),
        ]
    )
    rng = np.random.default_rng(seed)
    model = build_attack_model(k, hidden, rng)
    optimizer = init_optimizer(model, OptimizerKind.ADAM, learning_rate)
    stream = BatchStream(LabeledDataset(features, targets, 2), batch_size, seed)
    for _ in range(epochs):
        for _ in range(stream.batches_per_epoch):
            batch, batch_targets = stream.next_batch()
            _, cache = forward(model, batch)
            optimizer_step(
                model,
                optimizer,
                backward(
                    model,
                    cache,
                    batch_targets,
                    np.full(batch_targets.size, 1.0 / batch_targets.size),
                ),
            )

    def decide(probs: Matrix, labels: Labels) -> Bits:
        return predict_proba(model, attack_features(probs, labels, k))[:, 0] > MEMBER_THRESHOLD

    return _report(
        AttackKind.NEURAL_NETWORK,
        target,
        decide(attack_input.member_probs, attack_input.member_labels),
        decide(attack_input.nonmember_probs, attack_input.nonmember_labels),
    )


def balance(attack_input: AttackInput) -> tuple[AttackInput, bool]:
    """Truncate the larger side to the size of the smaller one."""
    n = min(attack_input.member_labels.size, attack_input.nonmember_labels.size)
    if attack_input.member_labels.size == attack_input.nonmember_labels.size:
        return attack_input, False
    _LOGGER.warning(
        "Truncating attack sets to %d members and %d non-members", n, n
    )
    return (
        AttackInput(
            attack_input.member_probs[:n],
            attack_input.member_labels[:n],
            attack_input.nonmember_probs[:n],
            attack_input.nonmember_labels[:n],
            None if attack_input.member_ids is None else attack_input.member_ids[:n],
            None
            if attack_input.nonmember_ids is None
            else attack_input.nonmember_ids[:n],
        ),
        True,
    )


def run_attack(
    kind: AttackKind,
    attack_input: AttackInput,
    target: TargetSplit,
    *,
    known: AttackInput | None = None,
    seed: int = 0,
) -> AttackReport:
    """Balance the input and run one attack kind."""
    balanced, truncated = balance(attack_input)
    if kind is AttackKind.GAP:
        report = gap_attack(balanced, target)
    elif kind is AttackKind.NEURAL_NETWORK:
        if known is None:
            raise ConfigError("the neural-network attack needs attacker knowledge")
        report = nn_attack(balanced, known, seed=seed, target=target)
    else:
        report = threshold_attack(balanced, THRESHOLD_ATTACKS[kind], target)
    return replace(report, truncated=truncated)


def attack_model_splits(
    model: MlpModel,
    kinds: Iterable[AttackKind],
    train: LabeledDataset,
    reference: LabeledDataset,
    test: LabeledDataset,
    attacker: LabeledDataset | None = None,
    seed: int = 0,
) -> list[AttackReport]:
    """Attack training-vs-test and reference-vs-test membership.

    Threshold and gap attacks use the full splits. The neural-network attack
    learns from the first half of the attacked split against the attacker
    slice and is evaluated on the second half against the test split.
    """
    reports: list[AttackReport] = []
    for target, members in (
        (TargetSplit.TRAINING, train),
        (TargetSplit.REFERENCE, reference),
    ):
        if members.size == 0:
            _LOGGER.debug("No %s data to attack", target)
            continue
        full = AttackInput.from_model(model, members, test)
        for kind in kinds:
            if kind is not AttackKind.NEURAL_NETWORK:
                reports.append(run_attack(kind, full, target))
                continue
            if attacker is None or attacker.size == 0:
                raise ConfigError("the neural-network attack needs n_attacker > 0")
            if members.size < 2:
                raise ConfigError(
                    f"the neural-network attack needs at least 2 {target} examples"
                )
            half = members.size // 2
            order = np.arange(members.size)
            known = AttackInput.from_model(model, members.subset(order[:half]), attacker)
            evaluated = AttackInput.from_model(
                model, members.subset(order[half:]), test
            )
            reports.append(run_attack(kind, evaluated, target, known=known, seed=seed))
    return reports


# --- Confidence dumps ---


def write_confidences(
    path: str | Path, splits: Mapping[str, tuple[Matrix, Labels]]
) -> None:
    """CSV rows of (split tag, true label, p_0 .. p_{k-1}) with a header."""
    frames = []
    for tag, (probs, labels) in splits.items():
        frame = pd.DataFrame(probs, columns=[f"p{i}" for i in range(probs.shape[1])])
        frame.insert(0, "label", labels)
        frame.insert(0, "split", tag)
        frames.append(frame)
    pd.concat(frames, ignore_index=True).to_csv(path, index=False, float_format="%.17g")
    _LOGGER.info("Wrote confidences for %s to %s", ", ".join(splits), path)


def read_confidences(path: str | Path) -> dict[str, tuple[Matrix, Labels]]:
    """Parse a confidence dump back into per-split (probs, labels)."""
    try:
        frame = pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as err:
        raise ParseError(f"cannot read confidences from {path}: {err}") from err
    if list(frame.columns[:2]) != ["split", "label"] or frame.shape[1] < 3:
        raise ParseError("expected header 'split,label,p0,...'", 1)
    unknown = np.flatnonzero(~frame["split"].isin(SPLIT_TAGS).to_numpy())
    if unknown.size:
        raise ParseError(
            f"unknown split tag '{frame['split'].iloc[unknown[0]]}'",
            int(unknown[0]) + 2,
        )
    probs = frame.iloc[:, 2:].apply(pd.to_numeric, errors="coerce")
    labels = pd.to_numeric(frame["label"], errors="coerce")
    bad = np.flatnonzero((probs.isna().any(axis=1) | labels.isna()).to_numpy())
    if bad.size:
        raise ParseError("missing or non-numeric value", int(bad[0]) + 2)
    result: dict[str, tuple[Matrix, Labels]] = {}
    for tag in SPLIT_TAGS:
        rows = (frame["split"] == tag).to_numpy()
        if rows.any():
            result[tag] = (
                probs.to_numpy(dtype=np.float64)[rows],
                labels.to_numpy(dtype=np.int64)[rows],
            )
    return result
