"""Tests for report tables, charts and reloading."""

import math
from dataclasses import replace

import pandas as pd
import pytest

from refpriv.attacks import AttackKind, AttackReport, TargetSplit
from refpriv.const import (
    CURVES_FILE,
    NO_INSTANCE_REASON,
    PCC_FILE,
    RESULTS_FILE,
    SEEDS_FILE,
    SELECTIONS_FILE,
    THEORY_CSV_FILE,
    TIMING_FILE,
)
from refpriv.defenses import DefenseKind
from refpriv.exceptions import ParseError
from refpriv.harness import AttackSummary, PccResult, TradeoffPoint, configurability, select_all
from refpriv.report import (
    emit_report,
    format_float,
    full_precision,
    load_results,
    write_attack_reports,
)
from refpriv.theory import theory_curve

_SUMMARIES = {
    "confidence_training": AttackSummary(mean=0.6123456789, std=0.01),
    "confidence_reference": AttackSummary(mean=0.55, std=0.02),
}


def _point(kind, parameter, accuracy, mia_train, mia_ref, **kwargs):
    values = {
        "kind": kind,
        "parameter": parameter,
        "label": f"{kind}({parameter:g})",
        "spec_index": 0,
        "n_train": 100,
        "n_reference": 100,
        "test_accuracy": accuracy,
        "test_accuracy_std": 0.01,
        "mia_train": mia_train,
        "mia_train_std": 0.02,
        "mia_ref": mia_ref,
        "mia_ref_std": 0.03,
        "per_epoch_seconds": 0.25,
        "epochs": 4,
        "runs": 2,
        "attacks": dict(_SUMMARIES),
    }
    values.update(kwargs)
    return TradeoffPoint(**values)


@pytest.fixture
def points():
    """WERM and AdvReg points with one failed spec."""
    return [
        _point(
            DefenseKind.WERM,
            0.0,
            0.80,
            0.70,
            0.52,
            generalization_gap=0.41,
            generalization_gap_std=0.05,
        ),
        _point(DefenseKind.WERM, 0.5, 0.78, 0.56, 0.55),
        _point(DefenseKind.WERM, 1.0 / 3.0, 0.79, 0.61, 0.53),
        _point(DefenseKind.ADVREG, 1.0, 0.70, 0.58, 0.51, truncated_runs=2),
        _point(
            DefenseKind.ADVREG,
            2.0,
            math.nan,
            math.nan,
            math.nan,
            runs=0,
            failed_runs=2,
            attacks={},
            per_epoch_seconds=math.nan,
        ),
    ]


def _emit(directory, points, **kwargs):
    return emit_report(directory, points, select_all(points), configurability(points), **kwargs)


def test_format_float():
    """Test six significant digits and full-precision companions."""
    assert format_float(0.6123456789) == "0.612346"
    assert full_precision(1.0 / 3.0) == "0.3333333333333333"
    assert format_float(math.nan) == "nan"


def test_emit_report_files(tmp_path, points):
    """Test the bundle has one result row per spec and every table."""
    curve = theory_curve(100, 100, 10.0, [0.0, 0.5, 1.0], delta=1e-5, vc_dim=10)
    bundle = _emit(tmp_path / "out", points, theory_curve=curve, seeds=[7, 9])
    for name in (
        RESULTS_FILE,
        SELECTIONS_FILE,
        TIMING_FILE,
        PCC_FILE,
        CURVES_FILE,
        SEEDS_FILE,
        THEORY_CSV_FILE,
        "curves_werm.dat",
        "curves_advreg.dat",
    ):
        assert (tmp_path / "out" / name).is_file()
        assert name in bundle.files
    results = pd.read_csv(tmp_path / "out" / RESULTS_FILE, dtype=str)
    assert len(results) == len(points)
    assert results.loc[0, "attack_confidence_training"] == "0.612346"
    assert results.loc[0, "attack_confidence_training_full"] == "0.6123456789"
    assert results.loc[2, "parameter_full"] == "0.3333333333333333"
    assert "per_epoch_seconds" not in results.columns
    assert results.loc[3, "truncated_runs"] == "2"
    assert results.loc[0, "generalization_gap"] == "0.41"
    seeds = pd.read_csv(tmp_path / "out" / SEEDS_FILE)
    assert seeds["seed"].tolist() == [7, 9]
    dat = (tmp_path / "out" / "curves_werm.dat").read_text().splitlines()
    assert dat[0].startswith("#")
    assert [line.split()[0] for line in dat[1:]] == ["0", "0.333333", "0.5"]


def test_selections_name_missing_instances(tmp_path, points):
    """Test regimes without a qualifying point get a reason row."""
    _emit(tmp_path, points)
    selections = pd.read_csv(tmp_path / SELECTIONS_FILE, dtype=str, keep_default_na=False)
    assert len(selections) == 6
    werm_high = selections[
        (selections["defense"] == "werm") & (selections["regime"] == "high_reference_privacy")
    ]
    assert werm_high["reason"].tolist() == [NO_INSTANCE_REASON]
    assert werm_high["label"].tolist() == [""]
    advreg_high = selections[
        (selections["defense"] == "advreg") & (selections["regime"] == "high_reference_privacy")
    ]
    assert advreg_high["label"].tolist() == ["advreg(1)"]


def test_empty_selections_and_pcc(tmp_path):
    """Test an empty sweep still writes header-only tables."""
    bundle = emit_report(tmp_path, [], {}, [])
    assert TIMING_FILE not in bundle.files
    assert (tmp_path / SELECTIONS_FILE).read_text().startswith("defense,regime,label")
    assert (tmp_path / PCC_FILE).read_text() == "defense,pcc,pcc_full,points,reason\n"


def test_timing_skips_mirrored_points(tmp_path, points):
    """Test mirrored points have no timing row of their own."""
    mirrored = replace(points[0], parameter=1.0, label="werm(w=1)", mirrored=True)
    _emit(tmp_path, [*points, mirrored])
    timing = pd.read_csv(tmp_path / TIMING_FILE, dtype=str)
    assert len(timing) == len(points)
    assert timing.loc[0, "overall_seconds"] == "1"


def test_reruns_are_byte_identical(tmp_path, points):
    """Test writing the same points twice yields identical files."""
    _emit(tmp_path / "a", points)
    _emit(tmp_path / "b", points)
    for name in (RESULTS_FILE, SELECTIONS_FILE, PCC_FILE, CURVES_FILE, "curves_werm.dat"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_load_results_round_trip(tmp_path, points):
    """Test results.csv reloads to the same metrics and attack summaries."""
    _emit(tmp_path, points)
    loaded = load_results(tmp_path / RESULTS_FILE)
    assert [p.label for p in loaded] == [p.label for p in points]
    assert loaded[2].parameter == points[2].parameter
    assert loaded[0].attacks == points[0].attacks
    assert loaded[4].attacks == {}
    assert loaded[4].failed
    assert math.isnan(loaded[4].test_accuracy)
    assert math.isnan(loaded[0].per_epoch_seconds)
    assert loaded[0].generalization_gap == points[0].generalization_gap
    assert loaded[0].generalization_gap_std == points[0].generalization_gap_std
    assert math.isnan(loaded[4].generalization_gap)
    assert [p.truncated_runs for p in loaded] == [0, 0, 0, 2, 0]
    assert [r.value for r in configurability(loaded)] == [
        r.value for r in configurability(points)
    ]


def test_load_results_errors(tmp_path):
    """Test missing columns and bad values raise ParseError."""
    path = tmp_path / RESULTS_FILE
    path.write_text("defense,label\nwerm,werm(0)\n")
    with pytest.raises(ParseError):
        load_results(path)
    _emit(tmp_path / "ok", [_point(DefenseKind.WERM, 0.5, 0.8, 0.6, 0.5)])
    frame = pd.read_csv(tmp_path / "ok" / RESULTS_FILE, dtype=str)
    frame.loc[0, "runs"] = "many"
    frame.to_csv(path, index=False)
    with pytest.raises(ParseError) as excinfo:
        load_results(path)
    assert excinfo.value.line_number == 2


def test_unwritable_output_dir(tmp_path, points):
    """Test a path blocked by a file raises OSError."""
    blocker = tmp_path / "blocker"
    blocker.write_text("")
    with pytest.raises(OSError):
        _emit(blocker / "out", points)


def test_write_attack_reports(tmp_path):
    """Test attack reports keep their counts and thresholds."""
    reports = [
        AttackReport(
            attack_kind=AttackKind.CONFIDENCE,
            target_split=TargetSplit.TRAINING,
            member_hits=3,
            member_count=4,
            nonmember_rejections=2,
            nonmember_count=4,
            threshold=0.75,
        ),
        AttackReport(
            attack_kind=AttackKind.GAP,
            target_split=TargetSplit.REFERENCE,
            member_hits=1,
            member_count=2,
            nonmember_rejections=1,
            nonmember_count=2,
            truncated=True,
        ),
    ]
    path = write_attack_reports(reports, tmp_path / "attacks.csv")
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    assert frame["accuracy"].tolist() == ["0.625", "0.5"]
    assert frame["threshold"].tolist() == ["0.75", ""]
    assert frame["truncated"].tolist() == ["0", "1"]


def test_pcc_table(tmp_path):
    """Test undefined correlations keep an empty value and their reason."""
    emit_report(
        tmp_path,
        [],
        {},
        [
            PccResult(DefenseKind.WERM, 0.97, 5),
            PccResult(DefenseKind.MMD, None, 2, "fewer than 3 points"),
        ],
    )
    frame = pd.read_csv(tmp_path / PCC_FILE, dtype=str, keep_default_na=False)
    assert frame["pcc"].tolist() == ["0.97", ""]
    assert frame["reason"].tolist() == ["", "fewer than 3 points"]
