"""Command-line interface: train, attack, sweep, theory and report."""

from __future__ import annotations

import argparse
import logging
from collections.abc import Sequence
from dataclasses import replace
from pathlib import Path

import voluptuous as vol

from . import configure_logging
from .attacks import (
    AttackInput,
    AttackKind,
    AttackReport,
    TargetSplit,
    attack_model_splits,
    read_confidences,
    run_attack,
    write_confidences,
)
from .config import ExperimentConfig, load_config
from .const import (
    DEFAULT_ATTACKS,
    DEFAULT_CLASSIFIER_HIDDEN,
    DEFAULT_DELTA,
    DEFAULT_EPSILON_0,
    DEFAULT_SYNTHETIC_CLASSES,
    DEFAULT_SYNTHETIC_DIM,
    DEFAULT_THEORY_GRID_POINTS,
    DEFAULT_THEORY_RATIOS,
    DEFAULT_THEORY_TOTAL,
    EXIT_CONFIG_ERROR,
    EXIT_OK,
    EXIT_RUNTIME_ERROR,
    LOG_LEVELS,
    SPLIT_TAG_REFERENCE,
    SPLIT_TAG_TEST,
    SPLIT_TAG_TRAIN,
    THEORY_SVG_FILE,
)
from .coordinator import SweepCoordinator
from .datasets import DataSplits, LabeledDataset, dump_csv
from .defenses import DefenseSpec, load_model, save_model, train_defense
from .diagnostics import write_diagnostics
from .exceptions import ConfigError, DataValidationError, RefPrivError
from .harness import configurability, run_sweep, select_all
from .numeric_core import Labels, Matrix, MlpModel, parameter_count, predict_proba
from .report import (
    emit_report,
    load_results,
    plot_theory,
    write_attack_reports,
    write_theory_curve,
)
from .theory import TheoryCurve, sizes_for_ratio, theory_curve, uniform_grid

_LOGGER = logging.getLogger(__name__)

_LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def _pick_spec(config: ExperimentConfig, index: int) -> DefenseSpec:
    if not 0 <= index < len(config.defenses):
        raise ConfigError(
            f"--defense {index} is out of range; the config expands to "
            f"{len(config.defenses)} defense specs"
        )
    return config.defenses[index]


def _run_splits(
    config: ExperimentConfig, run: int, dataset: LabeledDataset | None = None
) -> tuple[int, DataSplits]:
    coordinator = SweepCoordinator(config, dataset)
    if not 0 <= run < len(coordinator.seeds):
        raise ConfigError(f"--run {run} is out of range; the config has {config.seeds} seeds")
    seed = coordinator.seeds[run]
    return seed, coordinator.splits_for(seed)


def _confidences(
    model: MlpModel, splits: DataSplits
) -> dict[str, tuple[Matrix, Labels]]:
    dumped: dict[str, tuple[Matrix, Labels]] = {}
    for tag, dataset in (
        (SPLIT_TAG_TRAIN, splits.train),
        (SPLIT_TAG_REFERENCE, splits.reference),
        (SPLIT_TAG_TEST, splits.test),
    ):
        if dataset.size:
            dumped[tag] = (predict_proba(model, dataset.features), dataset.labels)
    return dumped


def _apply_config_log_level(args: argparse.Namespace, config: ExperimentConfig) -> None:
    if args.log_level is None:
        configure_logging(config.log_level)


def _load_dataset(config: ExperimentConfig, dump_path: Path | None) -> LabeledDataset:
    """Load the config's dataset, writing it as label-first CSV when asked."""
    dataset = config.dataset.load()
    _LOGGER.info(
        "Loaded dataset '%s': %d examples, %d features, %d classes",
        config.dataset.name,
        dataset.size,
        dataset.dim,
        dataset.class_count,
    )
    if dump_path is not None:
        dump_path.parent.mkdir(parents=True, exist_ok=True)
        dump_csv(dataset, dump_path)
        _LOGGER.info("Wrote dataset to %s", dump_path)
    return dataset


def cmd_train(args: argparse.Namespace) -> int:
    """Train one defense spec of a config and write its model file."""
    config = load_config(args.config)
    _apply_config_log_level(args, config)
    spec = _pick_spec(config, args.defense)
    dataset = _load_dataset(config, args.dump_dataset)
    seed, splits = _run_splits(config, args.run, dataset)
    instance = train_defense(splits.train, splits.reference, spec, seed, test=splits.test)
    args.model.parent.mkdir(parents=True, exist_ok=True)
    save_model(args.model, instance.model, spec=spec, seed=seed)
    if instance.test is not None:
        _LOGGER.info(
            "Trained %s in %d epochs: test accuracy %.4f, test loss %.4f",
            spec.label,
            instance.epochs_run,
            instance.test.accuracy,
            instance.test.loss,
        )
    if args.confidences is not None:
        args.confidences.parent.mkdir(parents=True, exist_ok=True)
        write_confidences(args.confidences, _confidences(instance.model, splits))
    return EXIT_OK


def _attacks_from_confidences(
    path: Path, kinds: Sequence[AttackKind]
) -> list[AttackReport]:
    if AttackKind.NEURAL_NETWORK in kinds:
        raise ConfigError("the 'nn' attack needs a model and a config, not a confidence dump")
    dumped = read_confidences(path)
    if SPLIT_TAG_TEST not in dumped:
        raise DataValidationError(f"{path} has no '{SPLIT_TAG_TEST}' rows to use as non-members")
    test_probs, test_labels = dumped[SPLIT_TAG_TEST]
    reports: list[AttackReport] = []
    for target, tag in (
        (TargetSplit.TRAINING, SPLIT_TAG_TRAIN),
        (TargetSplit.REFERENCE, SPLIT_TAG_REFERENCE),
    ):
        if tag not in dumped:
            continue
        probs, labels = dumped[tag]
        attack_input = AttackInput(probs, labels, test_probs, test_labels)
        reports.extend(run_attack(kind, attack_input, target) for kind in kinds)
    return reports


def cmd_attack(args: argparse.Namespace) -> int:
    """Attack a model file (with its config) or a confidence dump."""
    if args.confidences is not None:
        kinds = [AttackKind(k) for k in args.attacks or DEFAULT_ATTACKS]
        reports = _attacks_from_confidences(args.confidences, kinds)
    else:
        if args.config is None:
            raise ConfigError("attacking a model file needs --config to rebuild its splits")
        config = load_config(args.config)
        _apply_config_log_level(args, config)
        model, header = load_model(args.model)
        kinds = (
            [AttackKind(k) for k in args.attacks] if args.attacks else list(config.attacks)
        )
        seed, splits = _run_splits(config, args.run)
        if header.get("seed") not in (None, seed):
            _LOGGER.warning(
                "Model was trained with seed %s but --run %d uses seed %d",
                header.get("seed"),
                args.run,
                seed,
            )
        reports = attack_model_splits(
            model,
            kinds,
            splits.train,
            splits.reference,
            splits.test,
            splits.attacker,
            seed,
        )
    args.output.parent.mkdir(parents=True, exist_ok=True)
    write_attack_reports(reports, args.output)
    for report in reports:
        _LOGGER.info(
            "%s attack on %s data: accuracy %.4f",
            report.attack_kind,
            report.target_split,
            report.accuracy,
        )
    return EXIT_OK


def _sweep_theory_curve(
    config: ExperimentConfig, dataset: LabeledDataset
) -> TheoryCurve | None:
    settings = config.theory
    if settings is None:
        return None
    vc_dim = settings.vc_dim
    if vc_dim is None:
        hidden = config.defenses[0].hidden_layers
        vc_dim = parameter_count((dataset.dim, *hidden, dataset.class_count))
    return theory_curve(
        config.split.n_train,
        config.split.n_reference,
        settings.epsilon_0,
        uniform_grid(settings.grid_points),
        delta=settings.delta,
        vc_dim=vc_dim,
        steps=settings.steps,
        clip_norm=settings.clip_norm,
        sampling_ratio=settings.sampling_ratio,
    )


def cmd_sweep(args: argparse.Namespace) -> int:
    """Run a whole sweep and write the report bundle."""
    config = load_config(args.config)
    _apply_config_log_level(args, config)
    if args.output_dir is not None:
        config = replace(config, output_dir=args.output_dir)
    if args.workers is not None:
        config = replace(config, workers=args.workers)
    dataset = _load_dataset(config, args.dump_dataset)
    outcome = run_sweep(config, dataset)
    emit_report(
        config.output_dir,
        outcome.points,
        select_all(outcome.points),
        configurability(outcome.points),
        theory_curve=_sweep_theory_curve(config, dataset),
        seeds=outcome.data["seeds"],
    )
    write_diagnostics(config, outcome, config.output_dir)
    return EXIT_OK


def cmd_theory(args: argparse.Namespace) -> int:
    """Tradeoff curves for several N_T / N_R ratios at a fixed total size."""
    args.output_dir.mkdir(parents=True, exist_ok=True)
    grid = uniform_grid(args.grid_points)
    curves: list[TheoryCurve] = []
    for ratio in args.ratios:
        n_train, n_reference = sizes_for_ratio(args.total, ratio)
        curve = theory_curve(
            n_train,
            n_reference,
            args.epsilon_0,
            grid,
            delta=args.delta,
            vc_dim=args.vc_dim,
            steps=args.steps,
            clip_norm=args.clip_norm,
            sampling_ratio=args.sampling_ratio,
        )
        write_theory_curve(curve, args.output_dir / f"theory_ratio_{ratio:g}.csv")
        curves.append(curve)
    plot_theory(curves, args.output_dir / THEORY_SVG_FILE)
    _LOGGER.info("Wrote %d theory curves to %s", len(curves), args.output_dir)
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    """Re-render selections, PCC and charts from an existing results.csv."""
    points = load_results(args.results)
    output_dir = args.output_dir if args.output_dir is not None else args.results.parent
    emit_report(
        output_dir,
        points,
        select_all(points),
        configurability(points),
        include_results=output_dir.resolve() != args.results.parent.resolve(),
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="refpriv",
        description="Utility-privacy benchmark for defenses that use reference data.",
    )
    parser.add_argument(
        "--log-level",
        type=str.upper,
        choices=LOG_LEVELS,
        default=None,
        help="Package log level (defaults to the config's log_level, else INFO)",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    train = subparsers.add_parser("train", help="Train one defense spec into a model file")
    train.add_argument("config", type=Path, help="YAML experiment config")
    train.add_argument("--defense", type=int, default=0, help="Index of the expanded defense spec")
    train.add_argument("--run", type=int, default=0, help="Index of the run seed")
    train.add_argument("--model", type=Path, required=True, help="Output model file (.npz)")
    train.add_argument("--confidences", type=Path, default=None, help="Also dump confidences to this CSV")
    train.add_argument(
        "--dump-dataset", type=Path, default=None, help="Also write the dataset as label-first CSV"
    )
    train.set_defaults(handler=cmd_train)

    attack = subparsers.add_parser("attack", help="Run membership-inference attacks")
    source = attack.add_mutually_exclusive_group(required=True)
    source.add_argument("--model", type=Path, help="Model file written by 'train'")
    source.add_argument("--confidences", type=Path, help="Confidence CSV written by 'train'")
    attack.add_argument("--config", type=Path, default=None, help="Config the model was trained from")
    attack.add_argument("--run", type=int, default=0, help="Index of the run seed")
    attack.add_argument(
        "--attacks",
        nargs="+",
        choices=[k.value for k in AttackKind],
        default=None,
        help="Attacks to run (defaults to the config's attacks)",
    )
    attack.add_argument("--output", type=Path, required=True, help="Attack report CSV")
    attack.set_defaults(handler=cmd_attack)

    sweep = subparsers.add_parser("sweep", help="Run a config's full sweep and write the report")
    sweep.add_argument("config", type=Path, help="YAML experiment config")
    sweep.add_argument("--output-dir", type=Path, default=None, help="Overrides output_dir")
    sweep.add_argument("--workers", type=int, default=None, help="Overrides workers")
    sweep.add_argument(
        "--dump-dataset", type=Path, default=None, help="Also write the dataset as label-first CSV"
    )
    sweep.set_defaults(handler=cmd_sweep)

    theory = subparsers.add_parser("theory", help="Write theoretical tradeoff curves")
    theory.add_argument("--total", type=int, default=DEFAULT_THEORY_TOTAL, help="N_T + N_R")
    theory.add_argument(
        "--ratios",
        type=float,
        nargs="+",
        default=list(DEFAULT_THEORY_RATIOS),
        help="N_T / N_R ratios, one curve each",
    )
    theory.add_argument("--epsilon-0", type=float, default=DEFAULT_EPSILON_0)
    theory.add_argument("--delta", type=float, default=DEFAULT_DELTA)
    theory.add_argument(
        "--vc-dim",
        type=float,
        default=float(
            parameter_count(
                (DEFAULT_SYNTHETIC_DIM, *DEFAULT_CLASSIFIER_HIDDEN, DEFAULT_SYNTHETIC_CLASSES)
            )
        ),
        help="VC dimension (defaults to the full-scale classifier's parameter count)",
    )
    theory.add_argument("--steps", type=int, default=1)
    theory.add_argument("--clip-norm", type=float, default=1.0)
    theory.add_argument("--sampling-ratio", type=float, default=1.0)
    theory.add_argument("--grid-points", type=int, default=DEFAULT_THEORY_GRID_POINTS)
    theory.add_argument("--output-dir", type=Path, required=True)
    theory.set_defaults(handler=cmd_theory)

    report = subparsers.add_parser("report", help="Re-render a report from results.csv")
    report.add_argument("results", type=Path, help="Existing results.csv")
    report.add_argument("--output-dir", type=Path, default=None)
    report.set_defaults(handler=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """Entry point; returns the process exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(format=_LOG_FORMAT)
    configure_logging(args.log_level)
    try:
        return int(args.handler(args))
    except (ConfigError, vol.Invalid) as err:
        _LOGGER.error("Configuration error: %s", err)
        return EXIT_CONFIG_ERROR
    except (RefPrivError, OSError, ArithmeticError, IndexError) as err:
        _LOGGER.error("%s failed: %s", args.command, err)
        return EXIT_RUNTIME_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
