"""Run configuration: JSON schema, exhaustive validation, and defaults.

A single config file drives every pipeline stage; the CLI picks the stage.
Validation is not first-error: every schema violation and missing input path
is collected so a bad config is fixable in one round. Schema problems are
usage errors (exit 1), missing or unreadable inputs are data errors (exit 2).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

DEFAULTS: dict[str, Any] = {
    "threads": 1,
    "out_dir": "out",
    "optical": {
        "max_cloud_fraction": 0.60,
        "cloud_prob_threshold": 40.0,
        "texture_window": 6,
        "indices": ["NDVI", "NBR", "NDBI", "NDSI"],
    },
    "radar": {
        "speckle": True,
        "window": 7,
        "enl": 4.0,
        "k_sigma": 2.0,
        "min_selected": 3,
    },
    "assemble_mode": "s1s2_aux",
    "rf": {"ntree": 100, "mtry": None, "seed": None},
    "rank": {"bootstraps": 100},
    "curve": {"step": 0.05, "bootstraps": 10},
    "rfe": {"target_count": 15, "drop_fraction": 0.2, "importance_bootstraps": 0},
    "tune": {"ntree_min": 50, "ntree_max": 500, "ntree_step": 25,
             "mtry_min": 1, "mtry_max": 10},
    "grid_accuracy": {"cell_size": 100000.0, "min_n": 20},
}

# config keys under "inputs" that must point at existing files/directories
_PATH_KEYS = (
    "optical_stack", "radar_stack", "reference_csv", "target_proportions",
    "matrix_csv", "model", "map", "units", "reclass_table", "confusion_csv",
    "samples_csv", "cube", "points_csv", "polygons_csv", "ranked_csv",
)


class ConfigError(Exception):
    """Schema violations (usage error)."""

    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


class MissingInputError(Exception):
    """Referenced input paths that do not exist (data error)."""

    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


@dataclass
class RunConfig:
    seed: int
    threads: int
    out_dir: Path
    inputs: dict[str, Any]
    optical: dict[str, Any]
    radar: dict[str, Any]
    assemble_mode: str
    rf: dict[str, Any]
    rank: dict[str, Any]
    curve: dict[str, Any]
    rfe: dict[str, Any]
    tune: dict[str, Any]
    grid_accuracy: dict[str, Any]
    ablate: list[dict[str, Any]] = field(default_factory=list)
    raw: dict[str, Any] = field(default_factory=dict)

    def rf_seed(self) -> int:
        seed = self.rf.get("seed")
        return int(seed) if seed is not None else self.seed

    def input_path(self, key: str) -> Path:
        if key not in self.inputs:
            raise MissingInputError([f"config inputs.{key} is required for this stage"])
        return Path(self.inputs[key])


def _merge_defaults(section: str, user: dict[str, Any] | None) -> dict[str, Any]:
    merged = dict(DEFAULTS[section])
    if user:
        merged.update(user)
    return merged


def _check_number(errors: list[str], table: dict, key: str, kind, low=None, high=None,
                  prefix: str = "") -> None:
    value = table.get(key)
    if value is None:
        return
    if isinstance(value, bool) or not isinstance(value, kind):
        errors.append(f"{prefix}{key}: expected {kind if not isinstance(kind, tuple) else 'number'}, got {value!r}")
        return
    if low is not None and value < low:
        errors.append(f"{prefix}{key}: must be >= {low}, got {value}")
    if high is not None and value > high:
        errors.append(f"{prefix}{key}: must be <= {high}, got {value}")


def validate_config(path: str | Path) -> RunConfig:
    """Load and fully validate a config file.

    Raises :class:`ConfigError` with the complete list of schema violations,
    or :class:`MissingInputError` with the complete list of absent paths.
    """
    path = Path(path)
    if not path.exists():
        raise MissingInputError([f"config file not found: {path}"])
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError([f"config is not valid JSON: {exc}"]) from exc
    if not isinstance(raw, dict):
        raise ConfigError(["config root must be a JSON object"])

    errors: list[str] = []

    seed = raw.get("seed")
    if seed is None:
        errors.append("seed: required (wall-clock seeding is not supported)")
        seed = 0
    elif isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        errors.append(f"seed: expected non-negative integer, got {seed!r}")
        seed = 0

    threads = raw.get("threads", DEFAULTS["threads"])
    if isinstance(threads, bool) or not isinstance(threads, int) or threads < 1:
        errors.append(f"threads: expected positive integer, got {threads!r}")
        threads = 1

    optical = _merge_defaults("optical", raw.get("optical"))
    _check_number(errors, optical, "max_cloud_fraction", (int, float), 0, 1, "optical.")
    _check_number(errors, optical, "cloud_prob_threshold", (int, float), 0, 100, "optical.")
    _check_number(errors, optical, "texture_window", int, 2, None, "optical.")

    radar = _merge_defaults("radar", raw.get("radar"))
    _check_number(errors, radar, "window", int, 3, None, "radar.")
    if isinstance(radar.get("window"), int) and radar["window"] % 2 == 0:
        errors.append(f"radar.window: must be odd, got {radar['window']}")
    _check_number(errors, radar, "enl", (int, float), 1e-9, None, "radar.")
    _check_number(errors, radar, "k_sigma", (int, float), 1e-9, None, "radar.")
    _check_number(errors, radar, "min_selected", int, 1, None, "radar.")

    rf = _merge_defaults("rf", raw.get("rf"))
    _check_number(errors, rf, "ntree", int, 1, None, "rf.")
    _check_number(errors, rf, "mtry", int, 1, None, "rf.")
    _check_number(errors, rf, "seed", int, 0, None, "rf.")

    rank = _merge_defaults("rank", raw.get("rank"))
    _check_number(errors, rank, "bootstraps", int, 1, None, "rank.")

    curve = _merge_defaults("curve", raw.get("curve"))
    _check_number(errors, curve, "step", (int, float), 1e-9, 0.999999, "curve.")
    _check_number(errors, curve, "bootstraps", int, 1, None, "curve.")

    rfe = _merge_defaults("rfe", raw.get("rfe"))
    _check_number(errors, rfe, "target_count", int, 1, None, "rfe.")
    _check_number(errors, rfe, "drop_fraction", (int, float), 1e-9, 1, "rfe.")
    _check_number(errors, rfe, "importance_bootstraps", int, 0, None, "rfe.")

    tune = _merge_defaults("tune", raw.get("tune"))
    for key in ("ntree_min", "ntree_max", "ntree_step", "mtry_min", "mtry_max"):
        _check_number(errors, tune, key, int, 1, None, "tune.")

    grid_acc = _merge_defaults("grid_accuracy", raw.get("grid_accuracy"))
    _check_number(errors, grid_acc, "cell_size", (int, float), 1e-9, None, "grid_accuracy.")
    _check_number(errors, grid_acc, "min_n", int, 1, None, "grid_accuracy.")

    assemble_mode = raw.get("assemble_mode", DEFAULTS["assemble_mode"])
    if assemble_mode not in ("s1_only", "s2_only", "s1s2", "s1s2_aux"):
        errors.append(f"assemble_mode: unknown mode {assemble_mode!r}")

    inputs = raw.get("inputs", {})
    if not isinstance(inputs, dict):
        errors.append("inputs: must be an object")
        inputs = {}
    elif "aux" in inputs and not isinstance(inputs["aux"], dict):
        errors.append("inputs.aux: must be an object mapping layer names to tile paths")

    ablate = raw.get("ablate", [])
    if not isinstance(ablate, list):
        errors.append("ablate: must be a list of variant objects")
        ablate = []
    else:
        for i, entry in enumerate(ablate):
            if not isinstance(entry, dict) or "question" not in entry or "name" not in entry:
                errors.append(f"ablate[{i}]: needs 'question' and 'name'")

    if errors:
        raise ConfigError(errors)

    missing = []
    for key, value in inputs.items():
        if key in _PATH_KEYS and not Path(value).exists():
            missing.append(f"inputs.{key}: path does not exist: {value}")
        elif key == "aux" and isinstance(value, dict):
            for aux_name, aux_path in value.items():
                header = Path(str(aux_path)).with_suffix(".json")
                if not header.exists():
                    missing.append(f"inputs.aux.{aux_name}: path does not exist: {aux_path}")
    for i, entry in enumerate(ablate):
        matrix = entry.get("matrix")
        if matrix and not Path(matrix).exists():
            missing.append(f"ablate[{i}].matrix: path does not exist: {matrix}")
    if missing:
        raise MissingInputError(missing)

    return RunConfig(
        seed=int(seed),
        threads=int(threads),
        out_dir=Path(raw.get("out_dir", DEFAULTS["out_dir"])),
        inputs=inputs,
        optical=optical,
        radar=radar,
        assemble_mode=assemble_mode,
        rf=rf,
        rank=rank,
        curve=curve,
        rfe=rfe,
        tune=tune,
        grid_accuracy=grid_acc,
        ablate=ablate,
        raw=raw,
    )
