"""Report files: result tables, selections, timing, PCC and charts."""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Final

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from .attacks import AttackReport  # noqa: E402
from .const import (  # noqa: E402
    CURVES_FILE,
    FULL_PRECISION_SUFFIX,
    PACKAGE,
    PCC_FILE,
    RESULTS_FILE,
    SEEDS_FILE,
    SELECTIONS_FILE,
    SIGNIFICANT_DIGITS,
    THEORY_CSV_FILE,
    THEORY_SVG_FILE,
    TIMING_FILE,
)
from .defenses import DefenseKind  # noqa: E402
from .exceptions import ParseError  # noqa: E402
from .harness import (  # noqa: E402
    AttackSummary,
    PccResult,
    RegimeSelection,
    TradeoffPoint,
)
from .theory import TheoryCurve  # noqa: E402

_LOGGER = logging.getLogger(__name__)

_ATTACK_PREFIX: Final[str] = "attack_"
_STD_SUFFIX: Final[str] = "_std"
# Fixed salt keeps SVG element ids stable across runs.
_SVG_RC: Final[dict[str, str]] = {"svg.hashsalt": PACKAGE}


@dataclass(frozen=True, kw_only=True)
class ColumnDescription:
    """Describes one report column."""

    key: str
    value_fn: Callable[[TradeoffPoint], Any]
    is_float: bool = True


RESULT_COLUMNS: Final[tuple[ColumnDescription, ...]] = (
    ColumnDescription(key="defense", value_fn=lambda p: str(p.kind), is_float=False),
    ColumnDescription(key="label", value_fn=lambda p: p.label, is_float=False),
    ColumnDescription(key="parameter", value_fn=lambda p: p.parameter),
    ColumnDescription(key="mirrored", value_fn=lambda p: int(p.mirrored), is_float=False),
    ColumnDescription(key="n_train", value_fn=lambda p: p.n_train, is_float=False),
    ColumnDescription(key="n_reference", value_fn=lambda p: p.n_reference, is_float=False),
    ColumnDescription(key="epochs", value_fn=lambda p: p.epochs, is_float=False),
    ColumnDescription(key="runs", value_fn=lambda p: p.runs, is_float=False),
    ColumnDescription(key="failed_runs", value_fn=lambda p: p.failed_runs, is_float=False),
    ColumnDescription(
        key="truncated_runs", value_fn=lambda p: p.truncated_runs, is_float=False
    ),
    ColumnDescription(key="test_accuracy", value_fn=lambda p: p.test_accuracy),
    ColumnDescription(key="test_accuracy_std", value_fn=lambda p: p.test_accuracy_std),
    ColumnDescription(key="generalization_gap", value_fn=lambda p: p.generalization_gap),
    ColumnDescription(
        key="generalization_gap_std", value_fn=lambda p: p.generalization_gap_std
    ),
    ColumnDescription(key="mia_train", value_fn=lambda p: p.mia_train),
    ColumnDescription(key="mia_train_std", value_fn=lambda p: p.mia_train_std),
    ColumnDescription(key="mia_ref", value_fn=lambda p: p.mia_ref),
    ColumnDescription(key="mia_ref_std", value_fn=lambda p: p.mia_ref_std),
)

TIMING_COLUMNS: Final[tuple[ColumnDescription, ...]] = (
    ColumnDescription(key="defense", value_fn=lambda p: str(p.kind), is_float=False),
    ColumnDescription(key="label", value_fn=lambda p: p.label, is_float=False),
    ColumnDescription(key="per_epoch_seconds", value_fn=lambda p: p.per_epoch_seconds),
    ColumnDescription(key="epochs", value_fn=lambda p: p.epochs, is_float=False),
    ColumnDescription(key="overall_seconds", value_fn=lambda p: p.overall_seconds),
)


@dataclass
class ReportBundle:
    """Paths of every file written, keyed by file name."""

    output_dir: Path
    files: dict[str, Path] = field(default_factory=dict)


def format_float(value: float) -> str:
    """Value with six significant digits."""
    return f"{value:.{SIGNIFICANT_DIGITS}g}"


def full_precision(value: float) -> str:
    """Round-trippable representation."""
    return repr(float(value))


def _cells(key: str, value: Any, is_float: bool) -> dict[str, str]:
    if not is_float:
        return {key: str(value)}
    return {
        key: format_float(value),
        f"{key}{FULL_PRECISION_SUFFIX}": full_precision(value),
    }


def _write_table(rows: list[dict[str, str]], columns: list[str], path: Path) -> Path:
    frame = pd.DataFrame(rows, columns=columns, dtype=str)
    frame.to_csv(path, index=False, lineterminator="\n")
    _LOGGER.debug("Wrote %d rows to %s", len(rows), path)
    return path


def _columns(descriptions: Sequence[ColumnDescription], extra: Sequence[str] = ()) -> list[str]:
    names: list[str] = []
    for description in descriptions:
        names.append(description.key)
        if description.is_float:
            names.append(f"{description.key}{FULL_PRECISION_SUFFIX}")
    for key in extra:
        names.extend([key, f"{key}{FULL_PRECISION_SUFFIX}"])
    return names


def attack_columns(points: Sequence[TradeoffPoint]) -> list[str]:
    keys = dict.fromkeys(k for p in points for k in p.attacks)
    return [
        name
        for key in keys
        for name in (f"{_ATTACK_PREFIX}{key}", f"{_ATTACK_PREFIX}{key}{_STD_SUFFIX}")
    ]


def results_rows(points: Sequence[TradeoffPoint]) -> tuple[list[str], list[dict[str, str]]]:
    extra = attack_columns(points)
    rows: list[dict[str, str]] = []
    for point in points:
        row: dict[str, str] = {}
        for description in RESULT_COLUMNS:
            row.update(
                _cells(description.key, description.value_fn(point), description.is_float)
            )
        for key, summary in point.attacks.items():
            row.update(_cells(f"{_ATTACK_PREFIX}{key}", summary.mean, True))
            row.update(_cells(f"{_ATTACK_PREFIX}{key}{_STD_SUFFIX}", summary.std, True))
        rows.append(row)
    return _columns(RESULT_COLUMNS, extra), rows


def write_results(points: Sequence[TradeoffPoint], path: Path) -> Path:
    """One row per point; timing is left out so reruns are byte-identical."""
    columns, rows = results_rows(points)
    return _write_table(rows, columns, path)


def write_selections(
    selections: Mapping[DefenseKind, Sequence[RegimeSelection]], path: Path
) -> Path:
    columns = _columns(
        [
            ColumnDescription(key="defense", value_fn=str, is_float=False),
            ColumnDescription(key="regime", value_fn=str, is_float=False),
            ColumnDescription(key="label", value_fn=str, is_float=False),
        ],
        ["parameter", "test_accuracy", "mia_train", "mia_ref"],
    ) + ["reason"]
    rows: list[dict[str, str]] = []
    for kind, entries in selections.items():
        for selection in entries:
            row = {"defense": str(kind), "regime": str(selection.regime)}
            chosen = selection.chosen
            if chosen is not None:
                row["label"] = chosen.label
                for key in ("parameter", "test_accuracy", "mia_train", "mia_ref"):
                    row.update(_cells(key, getattr(chosen, key), True))
            row["reason"] = selection.reason
            rows.append(row)
    return _write_table(rows, columns, path)


def write_timing(points: Sequence[TradeoffPoint], path: Path) -> Path:
    rows: list[dict[str, str]] = []
    for point in points:
        if point.mirrored:
            continue
        row: dict[str, str] = {}
        for description in TIMING_COLUMNS:
            row.update(
                _cells(description.key, description.value_fn(point), description.is_float)
            )
        rows.append(row)
    return _write_table(rows, _columns(TIMING_COLUMNS), path)


def write_pcc(results: Sequence[PccResult], path: Path) -> Path:
    columns = ["defense", "pcc", f"pcc{FULL_PRECISION_SUFFIX}", "points", "reason"]
    rows: list[dict[str, str]] = []
    for result in results:
        row = {"defense": str(result.kind), "points": str(result.points), "reason": result.reason}
        if result.value is not None:
            row.update(_cells("pcc", result.value, True))
        rows.append(row)
    return _write_table(rows, columns, path)


def write_seeds(seeds: Sequence[int], path: Path) -> Path:
    rows = [{"run": str(index), "seed": str(seed)} for index, seed in enumerate(seeds)]
    return _write_table(rows, ["run", "seed"], path)


def write_attack_reports(reports: Sequence[AttackReport], path: Path) -> Path:
    """One row per (attack, target); accuracy is recomputed from the counts."""
    columns = [
        "attack",
        "target",
        "accuracy",
        f"accuracy{FULL_PRECISION_SUFFIX}",
        "member_hits",
        "member_count",
        "nonmember_rejections",
        "nonmember_count",
        "threshold",
        f"threshold{FULL_PRECISION_SUFFIX}",
        "truncated",
    ]
    rows: list[dict[str, str]] = []
    for report in reports:
        row = {
            "attack": str(report.attack_kind),
            "target": str(report.target_split),
            "member_hits": str(report.member_hits),
            "member_count": str(report.member_count),
            "nonmember_rejections": str(report.nonmember_rejections),
            "nonmember_count": str(report.nonmember_count),
            "truncated": str(int(report.truncated)),
        }
        row.update(_cells("accuracy", report.accuracy, True))
        if report.threshold is not None:
            row.update(_cells("threshold", report.threshold, True))
        rows.append(row)
    return _write_table(rows, columns, path)


def _by_kind(points: Sequence[TradeoffPoint]) -> dict[DefenseKind, list[TradeoffPoint]]:
    grouped: dict[DefenseKind, list[TradeoffPoint]] = {}
    for point in points:
        if point.failed:
            continue
        grouped.setdefault(point.kind, []).append(point)
    for members in grouped.values():
        members.sort(key=lambda p: p.parameter)
    return grouped


def write_curve_data(points: Sequence[TradeoffPoint], output_dir: Path) -> list[Path]:
    """Whitespace-separated ``curves_<defense>.dat`` files for gnuplot."""
    paths: list[Path] = []
    for kind, members in _by_kind(points).items():
        path = output_dir / f"curves_{kind}.dat"
        lines = ["# parameter test_accuracy mia_train mia_ref"]
        lines += [
            " ".join(
                format_float(v)
                for v in (p.parameter, p.test_accuracy, p.mia_train, p.mia_ref)
            )
            for p in members
        ]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        paths.append(path)
    return paths


def plot_tradeoff(points: Sequence[TradeoffPoint], path: Path) -> Path:
    """Test accuracy against MIA accuracy on training and on reference data."""
    fig, (ax_train, ax_ref) = plt.subplots(1, 2, figsize=(10, 4), sharey=True)
    for kind, members in _by_kind(points).items():
        accuracy = [p.test_accuracy for p in members]
        ax_train.plot([p.mia_train for p in members], accuracy, marker="o", label=str(kind))
        ax_ref.plot([p.mia_ref for p in members], accuracy, marker="o", label=str(kind))
    ax_train.set_xlabel("MIA accuracy on training data")
    ax_ref.set_xlabel("MIA accuracy on reference data")
    ax_train.set_ylabel("Test accuracy")
    ax_ref.legend(loc="best")
    fig.tight_layout()
    with plt.rc_context(_SVG_RC):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def write_theory_curve(curve: TheoryCurve, path: Path) -> Path:
    frame = curve.to_frame()
    frame.to_csv(path, index=False, lineterminator="\n", float_format="%.17g")
    return path


def plot_theory(curves: Sequence[TheoryCurve], path: Path) -> Path:
    """N_eff against eps_T and eps_R, one line per dataset-size ratio."""
    fig, (ax_train, ax_ref) = plt.subplots(1, 2, figsize=(10, 4), sharey=True)
    for curve in curves:
        frame = curve.to_frame()
        label = f"N_T/N_R = {curve.n_train / curve.n_reference:g}"
        ax_train.plot(frame["eps_t"], frame["n_eff"], label=label)
        ax_ref.plot(frame["eps_r"], frame["n_eff"], label=label)
    ax_train.set_xlabel("training data epsilon")
    ax_ref.set_xlabel("reference data epsilon")
    ax_train.set_ylabel("effective samples")
    ax_ref.legend(loc="best")
    fig.tight_layout()
    with plt.rc_context(_SVG_RC):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def emit_report(
    output_dir: str | Path,
    points: Sequence[TradeoffPoint],
    selections: Mapping[DefenseKind, Sequence[RegimeSelection]],
    pcc: Sequence[PccResult],
    *,
    theory_curve: TheoryCurve | None = None,
    seeds: Sequence[int] | None = None,
    include_results: bool = True,
) -> ReportBundle:
    """Write the report bundle; an unwritable directory raises OSError."""
    directory = Path(output_dir)
    directory.mkdir(parents=True, exist_ok=True)
    bundle = ReportBundle(directory)
    if include_results:
        bundle.files[RESULTS_FILE] = write_results(points, directory / RESULTS_FILE)
    bundle.files[SELECTIONS_FILE] = write_selections(selections, directory / SELECTIONS_FILE)
    if any(not math.isnan(p.per_epoch_seconds) for p in points if not p.mirrored):
        bundle.files[TIMING_FILE] = write_timing(points, directory / TIMING_FILE)
    bundle.files[PCC_FILE] = write_pcc(pcc, directory / PCC_FILE)
    bundle.files[CURVES_FILE] = plot_tradeoff(points, directory / CURVES_FILE)
    for dat in write_curve_data(points, directory):
        bundle.files[dat.name] = dat
    if seeds is not None:
        bundle.files[SEEDS_FILE] = write_seeds(seeds, directory / SEEDS_FILE)
    if theory_curve is not None:
        bundle.files[THEORY_CSV_FILE] = write_theory_curve(
            theory_curve, directory / THEORY_CSV_FILE
        )
        bundle.files[THEORY_SVG_FILE] = plot_theory(
            [theory_curve], directory / THEORY_SVG_FILE
        )
    _LOGGER.info("Wrote %d report files to %s", len(bundle.files), directory)
    return bundle


def load_results(path: str | Path) -> list[TradeoffPoint]:
    """Rebuild TradeoffPoints from a results.csv, using full-precision columns."""
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as err:
        raise ParseError(f"cannot read {path}: {err}") from err
    missing = [
        c
        for c in _columns(RESULT_COLUMNS)
        if c not in frame.columns
    ]
    if missing:
        raise ParseError(f"{path} lacks columns {missing}", 1)

    def number(row: pd.Series, key: str) -> float:
        return float(row[f"{key}{FULL_PRECISION_SUFFIX}"])

    attack_keys = [
        c[len(_ATTACK_PREFIX) :]
        for c in frame.columns
        if c.startswith(_ATTACK_PREFIX)
        and not c.endswith(FULL_PRECISION_SUFFIX)
        and not c.endswith(_STD_SUFFIX)
    ]
    points: list[TradeoffPoint] = []
    for index, row in frame.iterrows():
        try:
            points.append(
                TradeoffPoint(
                    kind=DefenseKind(row["defense"]),
                    parameter=number(row, "parameter"),
                    label=row["label"],
                    spec_index=int(str(index)),
                    n_train=int(row["n_train"]),
                    n_reference=int(row["n_reference"]),
                    test_accuracy=number(row, "test_accuracy"),
                    test_accuracy_std=number(row, "test_accuracy_std"),
                    mia_train=number(row, "mia_train"),
                    mia_train_std=number(row, "mia_train_std"),
                    mia_ref=number(row, "mia_ref"),
                    mia_ref_std=number(row, "mia_ref_std"),
                    per_epoch_seconds=math.nan,
                    epochs=int(row["epochs"]),
                    runs=int(row["runs"]),
                    failed_runs=int(row["failed_runs"]),
                    truncated_runs=int(row["truncated_runs"]),
                    generalization_gap=number(row, "generalization_gap"),
                    generalization_gap_std=number(row, "generalization_gap_std"),
                    attacks={
                        key: AttackSummary(
                            mean=number(row, f"{_ATTACK_PREFIX}{key}"),
                            std=number(row, f"{_ATTACK_PREFIX}{key}{_STD_SUFFIX}"),
                        )
                        for key in attack_keys
                        if row[f"{_ATTACK_PREFIX}{key}"] != ""
                    },
                    mirrored=row["mirrored"] == "1",
                )
            )
        except ValueError as err:
            raise ParseError(str(err), int(str(index)) + 2) from err
    _LOGGER.info("Loaded %d points from %s", len(points), path)
    return points
