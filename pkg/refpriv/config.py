"""Experiment configuration: YAML loading and voluptuous validation."""

from __future__ import annotations

import logging
from collections.abc import Mapping
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import voluptuous as vol
import yaml

from .attacks import AttackKind
from .const import (
    ADVREG_EPOCHS,
    ADVREG_RT_EPOCHS,
    CONF_ATTACKS,
    CONF_DATASET,
    CONF_DEFENSES,
    CONF_LOG_LEVEL,
    CONF_MASTER_SEED,
    CONF_MIRROR_WERM,
    CONF_OUTPUT_DIR,
    CONF_REPORT,
    CONF_SEEDS,
    CONF_SPLIT,
    CONF_SWEEP,
    CONF_SYNTHETIC,
    CONF_THEORY,
    CONF_WORKERS,
    DEFAULT_ATTACK_HIDDEN,
    DEFAULT_ATTACKS,
    DEFAULT_BATCH_SIZE,
    DEFAULT_CLUSTER_TIGHTNESS,
    DEFAULT_DATASET_NAME,
    DEFAULT_DELTA,
    DEFAULT_EPSILON_0,
    DEFAULT_KERNEL_VARIANCE,
    DEFAULT_LEARNING_RATE,
    DEFAULT_LOG_LEVEL,
    DEFAULT_MASTER_SEED,
    DEFAULT_OUTPUT_DIR,
    DEFAULT_SEEDS,
    DEFAULT_SYNTHETIC_CLASSES,
    DEFAULT_SYNTHETIC_DIM,
    DEFAULT_SYNTHETIC_FLIP_PROB,
    DEFAULT_SYNTHETIC_PER_CLASS,
    DEFAULT_THEORY_GRID_POINTS,
    DEFAULT_UPDATE_RATIO,
    DEFAULT_WARMUP_EPOCHS,
    DEFAULT_WORKERS,
    DESK_CLASSIFIER_HIDDEN,
    FORMAT_LABEL_FIRST_CSV,
    LOG_LEVELS,
    MMD_EPOCHS,
    SWEEP_PARAMETERS,
    TABULAR_FORMATS,
    WERM_EPOCHS,
    WERM_ES_EPOCHS,
)
from .datasets import LabeledDataset, SplitSpec, load_tabular, synthesize
from .defenses import DefenseKind, DefenseSpec, DpParams
from .exceptions import ConfigError
from .numeric_core import OptimizerKind

_LOGGER = logging.getLogger(__name__)

# Full-scale epoch budgets used when a defense entry omits ``epochs``.
EPOCH_TABLES: dict[DefenseKind, dict[str, int]] = {
    DefenseKind.ERM: WERM_EPOCHS,
    DefenseKind.EARLY_STOP: WERM_ES_EPOCHS,
    DefenseKind.WERM: WERM_EPOCHS,
    DefenseKind.WERM_ES: WERM_ES_EPOCHS,
    DefenseKind.DPSGD_WERM: WERM_EPOCHS,
    DefenseKind.ADVREG: ADVREG_EPOCHS,
    DefenseKind.ADVREG_RT: ADVREG_RT_EPOCHS,
    DefenseKind.MMD: MMD_EPOCHS,
}

_POSITIVE_INT = vol.All(int, vol.Range(min=1))
_NON_NEGATIVE_INT = vol.All(int, vol.Range(min=0))
_POSITIVE_FLOAT = vol.All(vol.Coerce(float), vol.Range(min=0.0, min_included=False))
_UNIT_FLOAT = vol.All(vol.Coerce(float), vol.Range(min=0.0, max=1.0))
_LAYERS = vol.All([_POSITIVE_INT], vol.Coerce(tuple))

SYNTHETIC_SCHEMA = vol.Schema(
    {
        vol.Optional("classes", default=DEFAULT_SYNTHETIC_CLASSES): _POSITIVE_INT,
        vol.Optional("per_class", default=DEFAULT_SYNTHETIC_PER_CLASS): _POSITIVE_INT,
        vol.Optional("dim", default=DEFAULT_SYNTHETIC_DIM): _POSITIVE_INT,
        vol.Optional(
            "cluster_tightness", default=DEFAULT_CLUSTER_TIGHTNESS
        ): vol.All(
            vol.Coerce(float),
            vol.Range(min=0.0, max=1.0, min_included=False, max_included=False),
        ),
        vol.Optional("flip_prob", default=DEFAULT_SYNTHETIC_FLIP_PROB): vol.All(
            vol.Coerce(float), vol.Range(min=0.0, max=0.5, max_included=False)
        ),
        vol.Optional("seed", default=0): _NON_NEGATIVE_INT,
    }
)

DATASET_SCHEMA = vol.Any(
    vol.Schema(
        {
            vol.Required(CONF_SYNTHETIC): SYNTHETIC_SCHEMA,
            vol.Optional("name", default=DEFAULT_DATASET_NAME): str,
        }
    ),
    vol.Schema(
        {
            vol.Required("path"): str,
            vol.Optional("format", default=FORMAT_LABEL_FIRST_CSV): vol.In(
                TABULAR_FORMATS
            ),
            vol.Optional("binary", default=True): bool,
            vol.Optional("name"): str,
        }
    ),
)

SPLIT_SCHEMA = vol.Schema(
    {
        vol.Required("n_train"): _POSITIVE_INT,
        vol.Required("n_reference"): _POSITIVE_INT,
        vol.Required("n_test"): _POSITIVE_INT,
        vol.Optional("n_attacker", default=0): _NON_NEGATIVE_INT,
        vol.Optional("seed", default=0): _NON_NEGATIVE_INT,
    }
)

DP_SCHEMA = vol.Schema(
    {
        vol.Required("clip_norm"): _POSITIVE_FLOAT,
        vol.Required("noise_scale"): vol.All(vol.Coerce(float), vol.Range(min=0.0)),
        vol.Required("sampling_ratio"): vol.All(
            vol.Coerce(float), vol.Range(min=0.0, max=1.0, min_included=False)
        ),
        vol.Optional("delta", default=DEFAULT_DELTA): vol.All(
            vol.Coerce(float),
            vol.Range(min=0.0, max=1.0, min_included=False, max_included=False),
        ),
        vol.Required("steps"): _POSITIVE_INT,
    }
)

SWEEP_SCHEMA = vol.Schema(
    {
        vol.Required("parameter"): vol.In(SWEEP_PARAMETERS),
        vol.Required("values"): vol.All([vol.Coerce(float)], vol.Length(min=1)),
    }
)

DEFENSE_SCHEMA = vol.Schema(
    {
        vol.Required("kind"): vol.All(str, vol.Lower, vol.In([k.value for k in DefenseKind])),
        vol.Optional("w", default=0.0): _UNIT_FLOAT,
        vol.Optional("lambda", default=0.0): vol.All(
            vol.Coerce(float), vol.Range(min=0.0)
        ),
        vol.Optional("epochs"): _POSITIVE_INT,
        vol.Optional("batch_size", default=DEFAULT_BATCH_SIZE): _POSITIVE_INT,
        vol.Optional("learning_rate", default=DEFAULT_LEARNING_RATE): _POSITIVE_FLOAT,
        vol.Optional("optimizer", default=OptimizerKind.ADAM.value): vol.In(
            [k.value for k in OptimizerKind]
        ),
        vol.Optional("hidden_layers", default=list(DESK_CLASSIFIER_HIDDEN)): _LAYERS,
        vol.Optional("attack_hidden", default=list(DEFAULT_ATTACK_HIDDEN)): _LAYERS,
        vol.Optional("update_ratio", default=DEFAULT_UPDATE_RATIO): _POSITIVE_INT,
        vol.Optional("kernel_variance", default=DEFAULT_KERNEL_VARIANCE): _POSITIVE_FLOAT,
        vol.Optional("warmup_epochs", default=DEFAULT_WARMUP_EPOCHS): _NON_NEGATIVE_INT,
        vol.Optional("dp"): DP_SCHEMA,
        vol.Optional(CONF_SWEEP): SWEEP_SCHEMA,
    }
)

THEORY_SCHEMA = vol.Schema(
    {
        vol.Optional("epsilon_0", default=DEFAULT_EPSILON_0): _POSITIVE_FLOAT,
        vol.Optional("delta", default=DEFAULT_DELTA): vol.All(
            vol.Coerce(float),
            vol.Range(min=0.0, max=1.0, min_included=False, max_included=False),
        ),
        vol.Optional("vc_dim"): _POSITIVE_FLOAT,
        vol.Optional("steps", default=1): _POSITIVE_INT,
        vol.Optional("clip_norm", default=1.0): _POSITIVE_FLOAT,
        vol.Optional("sampling_ratio", default=1.0): _POSITIVE_FLOAT,
        vol.Optional("grid_points", default=DEFAULT_THEORY_GRID_POINTS): vol.All(
            int, vol.Range(min=2)
        ),
    }
)

REPORT_SCHEMA = vol.Schema({vol.Optional(CONF_MIRROR_WERM, default=False): bool})

CONFIG_SCHEMA = vol.Schema(
    {
        vol.Required(CONF_DATASET): DATASET_SCHEMA,
        vol.Required(CONF_SPLIT): SPLIT_SCHEMA,
        vol.Required(CONF_DEFENSES): vol.All([DEFENSE_SCHEMA], vol.Length(min=1)),
        vol.Optional(CONF_ATTACKS, default=list(DEFAULT_ATTACKS)): vol.All(
            [vol.In([k.value for k in AttackKind])], vol.Length(min=1)
        ),
        vol.Optional(CONF_SEEDS, default=DEFAULT_SEEDS): _POSITIVE_INT,
        vol.Optional(CONF_MASTER_SEED, default=DEFAULT_MASTER_SEED): _NON_NEGATIVE_INT,
        vol.Optional(CONF_WORKERS, default=DEFAULT_WORKERS): _POSITIVE_INT,
        vol.Optional(CONF_OUTPUT_DIR, default=DEFAULT_OUTPUT_DIR): str,
        vol.Optional(CONF_LOG_LEVEL, default=DEFAULT_LOG_LEVEL): str,
        vol.Optional(CONF_THEORY): THEORY_SCHEMA,
        vol.Optional(CONF_REPORT, default={}): REPORT_SCHEMA,
    }
)


@dataclass(frozen=True, kw_only=True)
class DatasetSource:
    """Where the experiment's examples come from."""

    name: str
    path: Path | None = None
    data_format: str = FORMAT_LABEL_FIRST_CSV
    binary: bool = True
    synthetic: Mapping[str, Any] | None = None

    def load(self) -> LabeledDataset:
        if self.synthetic is not None:
            return synthesize(**self.synthetic)
        assert self.path is not None
        return load_tabular(self.path, self.data_format, binary=self.binary)


@dataclass(frozen=True, kw_only=True)
class TheorySettings:
    epsilon_0: float = DEFAULT_EPSILON_0
    delta: float = DEFAULT_DELTA
    vc_dim: float | None = None
    steps: int = 1
    clip_norm: float = 1.0
    sampling_ratio: float = 1.0
    grid_points: int = DEFAULT_THEORY_GRID_POINTS


@dataclass(frozen=True, kw_only=True)
class ExperimentConfig:
    """A validated sweep: data, split, defenses, attacks and seeding."""

    dataset: DatasetSource
    split: SplitSpec
    defenses: tuple[DefenseSpec, ...]
    attacks: tuple[AttackKind, ...]
    seeds: int = DEFAULT_SEEDS
    master_seed: int = DEFAULT_MASTER_SEED
    workers: int = DEFAULT_WORKERS
    output_dir: Path = Path(DEFAULT_OUTPUT_DIR)
    log_level: str = DEFAULT_LOG_LEVEL
    theory: TheorySettings | None = None
    mirror_werm: bool = False
    source: Mapping[str, Any] = field(default_factory=dict)


def resolve_log_level(value: str | None) -> str:
    """Upper-cased level name, or the default (with a warning) if unknown."""
    level = (value or DEFAULT_LOG_LEVEL).upper()
    if level not in LOG_LEVELS:
        _LOGGER.warning(
            "Invalid log level '%s' configured; defaulting to '%s'.",
            level,
            DEFAULT_LOG_LEVEL,
        )
        return DEFAULT_LOG_LEVEL
    return level


def _format_invalid(err: vol.Invalid) -> str:
    location = ".".join(str(part) for part in err.path) or "<root>"
    return f"invalid config at '{location}': {err.msg}"


def _defense_epochs(entry: Mapping[str, Any], kind: DefenseKind, dataset_name: str) -> int:
    if "epochs" in entry:
        return int(entry["epochs"])
    table = EPOCH_TABLES[kind]
    if dataset_name not in table:
        raise ConfigError(
            f"defense '{kind}' needs 'epochs' (no default for dataset '{dataset_name}')"
        )
    return table[dataset_name]


def expand_defense(entry: Mapping[str, Any], dataset_name: str) -> list[DefenseSpec]:
    """One DefenseSpec per sweep value, or a single spec without a sweep."""
    kind = DefenseKind(entry["kind"])
    base = DefenseSpec(
        kind=kind,
        w=entry["w"],
        lam=entry["lambda"],
        epochs=_defense_epochs(entry, kind, dataset_name),
        batch_size=entry["batch_size"],
        learning_rate=entry["learning_rate"],
        optimizer=OptimizerKind(entry["optimizer"]),
        hidden_layers=tuple(entry["hidden_layers"]),
        attack_hidden=tuple(entry["attack_hidden"]),
        update_ratio=entry["update_ratio"],
        kernel_variance=entry["kernel_variance"],
        warmup_epochs=entry["warmup_epochs"],
        dp=DpParams(**entry["dp"]) if "dp" in entry else None,
    )
    sweep = entry.get(CONF_SWEEP)
    if sweep is None:
        specs = [base]
    elif sweep["parameter"] == "w":
        specs = [replace(base, w=value) for value in sweep["values"]]
    else:
        specs = [replace(base, lam=value) for value in sweep["values"]]
    for spec in specs:
        spec.validate()
    return specs


def validate_config(data: Mapping[str, Any]) -> ExperimentConfig:
    """Validate a raw mapping and build the ExperimentConfig, filling defaults."""
    if not isinstance(data, Mapping):
        raise ConfigError("config must be a mapping")
    try:
        validated: dict[str, Any] = CONFIG_SCHEMA(dict(data))
    except vol.MultipleInvalid as err:
        raise ConfigError(_format_invalid(err.errors[0])) from err
    except vol.Invalid as err:
        raise ConfigError(_format_invalid(err)) from err

    dataset_conf = validated[CONF_DATASET]
    if CONF_SYNTHETIC in dataset_conf:
        dataset = DatasetSource(
            name=dataset_conf["name"], synthetic=dict(dataset_conf[CONF_SYNTHETIC])
        )
    else:
        path = Path(dataset_conf["path"])
        dataset = DatasetSource(
            name=dataset_conf.get("name", path.stem.lower()),
            path=path,
            data_format=dataset_conf["format"],
            binary=dataset_conf["binary"],
        )

    defenses: list[DefenseSpec] = []
    for entry in validated[CONF_DEFENSES]:
        defenses.extend(expand_defense(entry, dataset.name))

    theory = validated.get(CONF_THEORY)
    config = ExperimentConfig(
        dataset=dataset,
        split=SplitSpec(**validated[CONF_SPLIT]),
        defenses=tuple(defenses),
        attacks=tuple(AttackKind(kind) for kind in validated[CONF_ATTACKS]),
        seeds=validated[CONF_SEEDS],
        master_seed=validated[CONF_MASTER_SEED],
        workers=validated[CONF_WORKERS],
        output_dir=Path(validated[CONF_OUTPUT_DIR]),
        log_level=resolve_log_level(validated[CONF_LOG_LEVEL]),
        theory=TheorySettings(**theory) if theory is not None else None,
        mirror_werm=validated[CONF_REPORT][CONF_MIRROR_WERM],
        source=validated,
    )
    if AttackKind.NEURAL_NETWORK in config.attacks and config.split.n_attacker == 0:
        raise ConfigError("the 'nn' attack needs split.n_attacker > 0")
    _LOGGER.debug(
        "Validated config: %d defense specs, %d attacks, %d seeds",
        len(config.defenses),
        len(config.attacks),
        config.seeds,
    )
    return config


def load_config(path: str | Path) -> ExperimentConfig:
    """Read and validate a YAML experiment config."""
    try:
        with open(path, encoding="utf-8") as handle:
            data = yaml.safe_load(handle)
    except yaml.YAMLError as err:
        raise ConfigError(f"cannot parse {path}: {err}") from err
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must contain a YAML mapping")
    config = validate_config(data)
    _LOGGER.info("Loaded experiment config from %s", path)
    return config
