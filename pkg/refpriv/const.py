"""Constants for the refpriv benchmark."""

from typing import Final

# --- Core Constants ---
PACKAGE: Final[str] = "refpriv"

# --- Numerics ---
LOG_CLAMP: Final[float] = 1e-12
ADAM_BETA1: Final[float] = 0.9
ADAM_BETA2: Final[float] = 0.999
ADAM_EPS: Final[float] = 1e-8

# --- Datasets ---
FORMAT_LABEL_FIRST_CSV: Final[str] = "label_first_csv"
FORMAT_LABEL_FIRST_CSV_ONE_BASED: Final[str] = "label_first_csv_one_based"
TABULAR_FORMATS: Final[list[str]] = [
    FORMAT_LABEL_FIRST_CSV,
    FORMAT_LABEL_FIRST_CSV_ONE_BASED,
]
DEFAULT_SYNTHETIC_CLASSES: Final[int] = 100
DEFAULT_SYNTHETIC_PER_CLASS: Final[int] = 150
DEFAULT_SYNTHETIC_DIM: Final[int] = 600
DEFAULT_SYNTHETIC_FLIP_PROB: Final[float] = 0.1
DEFAULT_CLUSTER_TIGHTNESS: Final[float] = 0.9

# --- Defenses ---
DEFAULT_LEARNING_RATE: Final[float] = 0.001
DEFAULT_BATCH_SIZE: Final[int] = 128
MMD_MIN_BATCH_SIZE: Final[int] = 512
DEFAULT_UPDATE_RATIO: Final[int] = 20
DEFAULT_KERNEL_VARIANCE: Final[float] = 1.0
DEFAULT_WARMUP_EPOCHS: Final[int] = 1
DEFAULT_ATTACK_HIDDEN: Final[tuple[int, ...]] = (256, 64)
DEFAULT_CLASSIFIER_HIDDEN: Final[tuple[int, ...]] = (1024, 512, 256)
DESK_CLASSIFIER_HIDDEN: Final[tuple[int, ...]] = (256, 128)

# Full-scale epoch budgets, keyed by dataset name.
WERM_EPOCHS: Final[dict[str, int]] = {"purchase100": 20, "texas100": 4}
WERM_ES_EPOCHS: Final[dict[str, int]] = {"purchase100": 7, "texas100": 1}
ADVREG_EPOCHS: Final[dict[str, int]] = {"purchase100": 10, "texas100": 10}
ADVREG_RT_EPOCHS: Final[dict[str, int]] = {"purchase100": 35, "texas100": 20}
MMD_EPOCHS: Final[dict[str, int]] = {"purchase100": 25, "texas100": 8}

# --- Model files ---
MODEL_FILE_MAGIC: Final[str] = "refpriv-model"
MODEL_FILE_VERSION: Final[int] = 1

# --- Attacks ---
MEMBER_THRESHOLD: Final[float] = 0.5
SPLIT_TAG_TRAIN: Final[str] = "train"
SPLIT_TAG_REFERENCE: Final[str] = "reference"
SPLIT_TAG_TEST: Final[str] = "test"
SPLIT_TAGS: Final[list[str]] = [SPLIT_TAG_TRAIN, SPLIT_TAG_REFERENCE, SPLIT_TAG_TEST]
NN_ATTACK_EPOCHS: Final[int] = 30
NN_ATTACK_BATCH_SIZE: Final[int] = 64

# --- Privacy regimes (selection thresholds) ---
PUBLIC_REFERENCE_MAX_MIA_TRAIN: Final[float] = 0.51
EQUAL_PRIVACY_MAX_GAP: Final[float] = 0.04
HIGH_REFERENCE_PRIVACY_MAX_MIA_REF: Final[float] = 0.51
NO_INSTANCE_REASON: Final[str] = "no model instances that met the criteria"

# --- Harness ---
DEFAULT_SEEDS: Final[int] = 10
DEFAULT_MASTER_SEED: Final[int] = 0
DEFAULT_WORKERS: Final[int] = 1
DEFAULT_OUTPUT_DIR: Final[str] = "results"
MIN_PCC_POINTS: Final[int] = 3

# --- Report files ---
RESULTS_FILE: Final[str] = "results.csv"
SELECTIONS_FILE: Final[str] = "selections.csv"
TIMING_FILE: Final[str] = "timing.csv"
PCC_FILE: Final[str] = "pcc.csv"
CURVES_FILE: Final[str] = "curves.svg"
SEEDS_FILE: Final[str] = "seeds.csv"
THEORY_CSV_FILE: Final[str] = "theory.csv"
THEORY_SVG_FILE: Final[str] = "theory.svg"
DIAGNOSTICS_FILE: Final[str] = "diagnostics.json"
SIGNIFICANT_DIGITS: Final[int] = 6
FULL_PRECISION_SUFFIX: Final[str] = "_full"

# --- Theory ---
DEFAULT_EPSILON_0: Final[float] = 1000.0
DEFAULT_DELTA: Final[float] = 1e-5
DEFAULT_THEORY_TOTAL: Final[int] = 20000
DEFAULT_THEORY_RATIOS: Final[list[float]] = [0.25, 1.0, 9.0]
DEFAULT_THEORY_GRID_POINTS: Final[int] = 101

# --- CLI exit codes ---
EXIT_OK: Final[int] = 0
EXIT_CONFIG_ERROR: Final[int] = 1
EXIT_RUNTIME_ERROR: Final[int] = 2

# --- Logging ---
CONF_LOG_LEVEL: Final[str] = "log_level"
DEFAULT_LOG_LEVEL: Final[str] = "INFO"  # Default log level
LOG_LEVELS: Final[list[str]] = [
    "DEBUG",
    "INFO",
    "WARNING",
    "ERROR",
]  # Available log levels

# --- Experiment config keys ---
CONF_DATASET: Final[str] = "dataset"
CONF_SYNTHETIC: Final[str] = "synthetic"
CONF_SPLIT: Final[str] = "split"
CONF_DEFENSES: Final[str] = "defenses"
CONF_ATTACKS: Final[str] = "attacks"
CONF_SEEDS: Final[str] = "seeds"
CONF_MASTER_SEED: Final[str] = "master_seed"
CONF_WORKERS: Final[str] = "workers"
CONF_OUTPUT_DIR: Final[str] = "output_dir"
CONF_THEORY: Final[str] = "theory"
CONF_REPORT: Final[str] = "report"
CONF_SWEEP: Final[str] = "sweep"
CONF_MIRROR_WERM: Final[str] = "mirror_werm"
SWEEP_PARAMETERS: Final[list[str]] = ["w", "lambda"]
DEFAULT_DATASET_NAME: Final[str] = "synthetic"
DEFAULT_ATTACKS: Final[list[str]] = ["confidence"]
