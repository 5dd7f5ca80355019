"""Diagnostics dump for a finished sweep."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict
from pathlib import Path
from typing import Any

from .config import ExperimentConfig
from .const import DIAGNOSTICS_FILE, PACKAGE
from .harness import SweepOutcome

_LOGGER = logging.getLogger(__name__)


def _hash_path(path: Path) -> str:
    return hashlib.sha256(str(path).encode()).hexdigest()[:8]


def _finite_or_none(value: float) -> float | None:
    return value if math.isfinite(value) else None


def get_sweep_diagnostics(
    config: ExperimentConfig, outcome: SweepOutcome
) -> dict[str, Any]:
    """Return diagnostics for a sweep."""
    _LOGGER.debug("Generating diagnostics for %d points", len(outcome.points))
    dataset: dict[str, Any] = {
        "name": config.dataset.name,
        "format": config.dataset.data_format,
    }
    if config.dataset.path is not None:
        # Local paths may name users or hosts.
        dataset["path_hash"] = _hash_path(config.dataset.path)
    else:
        dataset["synthetic"] = dict(config.dataset.synthetic or {})

    data = outcome.data
    failures_summary = [
        {
            "spec": failure.spec.label,
            "seed": failure.seed,
            "error_type": failure.error_type,
            "message": failure.message,
            "layer_index": failure.layer_index,
        }
        for failure in data["failures"]
    ]
    return {
        "package": PACKAGE,
        "config": {
            "dataset": dataset,
            "split": asdict(config.split),
            "defenses": [spec.to_dict() for spec in config.defenses],
            "attacks": [str(kind) for kind in config.attacks],
            "seeds": config.seeds,
            "master_seed": config.master_seed,
            "workers": config.workers,
            "mirror_werm": config.mirror_werm,
        },
        "sweep_status": {
            "run_seeds": list(data["seeds"]),
            "runs_total": len(config.defenses) * len(data["seeds"]),
            "runs_succeeded": len(data["results"]),
            "runs_failed": len(data["failures"]),
        },
        "failures": failures_summary,
        "points_summary": [
            {
                "label": point.label,
                "runs": point.runs,
                "failed_runs": point.failed_runs,
                "truncated_runs": point.truncated_runs,
                "mirrored": point.mirrored,
                "test_accuracy": _finite_or_none(point.test_accuracy),
            }
            for point in outcome.points
        ],
    }


def write_diagnostics(
    config: ExperimentConfig, outcome: SweepOutcome, output_dir: str | Path
) -> Path:
    path = Path(output_dir) / DIAGNOSTICS_FILE
    payload = get_sweep_diagnostics(config, outcome)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _LOGGER.debug("Wrote diagnostics to %s", path)
    return path
