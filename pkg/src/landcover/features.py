"""Feature cube assembly and training-row extraction.

A :class:`FeatureCube` is an ordered (name-sorted) table of co-registered
raster layers with per-layer provenance. :func:`assemble` merges the optical,
radar, and auxiliary cubes under the sensor-fusion toggles, and
:func:`sample_at` turns point locations into a :class:`FeatureMatrix`, the
CSV-backed interchange format between pipeline stages.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grid import GridSpec, Raster

log = logging.getLogger(__name__)

FUSION_MODES = ("s1_only", "s2_only", "s1s2", "s1s2_aux")

AUX_LAYER_NAMES = (
    "elevation",
    "precip_mean_10y",
    "precip_std_10y",
    "temp_mean_10y",
    "temp_std_10y",
    "nightlights",
)


@dataclass
class FeatureCube:
    """Named raster layers over one grid. Iteration order is always sorted by
    layer name so downstream matrices are deterministic."""

    grid: GridSpec
    layers: dict[str, Raster]
    provenance: dict[str, str] = field(default_factory=dict)
    flags: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name, layer in self.layers.items():
            if layer.grid != self.grid:
                raise ValueError(f"layer {name!r} grid differs from cube grid")

    def layer_names(self) -> list[str]:
        return sorted(self.layers)

    def __len__(self) -> int:
        return len(self.layers)


@dataclass
class AuxLayerSet:
    """Auxiliary predictors, already resampled to the analysis grid:
    elevation, 10-year climate means/stds, and nighttime lights."""

    elevation: Raster
    precip_mean_10y: Raster
    precip_std_10y: Raster
    temp_mean_10y: Raster
    temp_std_10y: Raster
    nightlights: Raster

    def to_cube(self, grid: GridSpec) -> FeatureCube:
        layers = {name: getattr(self, name) for name in AUX_LAYER_NAMES}
        return FeatureCube(grid=grid, layers=layers,
                           provenance={name: "aux" for name in layers})


def assemble(
    optical: FeatureCube | None = None,
    radar: FeatureCube | None = None,
    aux: AuxLayerSet | FeatureCube | None = None,
    mode: str = "s1s2_aux",
) -> FeatureCube:
    """Merge the per-sensor cubes into one, honoring the fusion toggle.

    ``s1_only`` keeps radar, ``s2_only`` keeps optical, ``s1s2`` keeps both,
    and ``s1s2_aux`` adds the auxiliary layers. Layer values are never
    modified, only set membership and naming. Duplicate names and grid
    mismatches are errors.
    """
    if mode not in FUSION_MODES:
        raise ValueError(f"unknown fusion mode {mode!r}, expected one of {FUSION_MODES}")

    parts: list[FeatureCube] = []
    if mode in ("s2_only", "s1s2", "s1s2_aux") and optical is not None:
        parts.append(optical)
    if mode in ("s1_only", "s1s2", "s1s2_aux") and radar is not None:
        parts.append(radar)
    if mode == "s1s2_aux" and aux is not None:
        if isinstance(aux, AuxLayerSet):
            grid = parts[0].grid if parts else aux.elevation.grid
            parts.append(aux.to_cube(grid))
        else:
            parts.append(aux)
    if not parts:
        raise ValueError(f"no input cubes supplied for fusion mode {mode!r}")

    grid = parts[0].grid
    layers: dict[str, Raster] = {}
    provenance: dict[str, str] = {}
    flags: dict[str, str] = {}
    for cube in parts:
        if cube.grid != grid:
            raise ValueError("input cubes do not share one grid")
        for name in cube.layer_names():
            if name in layers:
                raise ValueError(f"duplicate layer name {name!r}")
            layers[name] = cube.layers[name]
            provenance[name] = cube.provenance.get(name, "unknown")
            if name in cube.flags:
                flags[name] = cube.flags[name]
    return FeatureCube(grid=grid, layers=layers, provenance=provenance, flags=flags)


@dataclass
class FeatureMatrix:
    """Sampled feature rows, optionally labeled.

    ``rows`` is (n, p) float64 with no NaN; ``labels`` holds class ids when
    present. ``dropped_ids`` records samples excluded because a feature was
    nodata or the point fell outside the grid.
    """

    feature_names: list[str]
    rows: np.ndarray
    sample_ids: list[str]
    labels: np.ndarray | None = None
    weights: np.ndarray | None = None
    dropped_ids: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.rows = np.asarray(self.rows, dtype=np.float64)
        if self.rows.ndim != 2 or self.rows.shape[1] != len(self.feature_names):
            raise ValueError("row width does not match feature_names")
        if len(self.sample_ids) != self.rows.shape[0]:
            raise ValueError("sample_ids length does not match row count")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape[0] != self.rows.shape[0]:
                raise ValueError("labels length does not match row count")
        if np.isnan(self.rows).any():
            raise ValueError("feature rows must not contain NaN")

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def p(self) -> int:
        return self.rows.shape[1]

    def select_features(self, names: list[str]) -> "FeatureMatrix":
        idx = [self.feature_names.index(n) for n in names]
        return FeatureMatrix(list(names), self.rows[:, idx], list(self.sample_ids),
                             None if self.labels is None else self.labels.copy(),
                             None if self.weights is None else self.weights.copy())

    def select_rows(self, idx: np.ndarray) -> "FeatureMatrix":
        return FeatureMatrix(list(self.feature_names), self.rows[idx],
                             [self.sample_ids[i] for i in np.atleast_1d(idx)],
                             None if self.labels is None else self.labels[idx],
                             None if self.weights is None else self.weights[idx])


def sample_at(cube: FeatureCube, points: list[tuple]) -> FeatureMatrix:
    """Extract feature rows at point locations by nearest-cell-center lookup.

    Each point is ``(x, y)``, ``(x, y, label)`` or ``(x, y, label, id)``;
    ``label`` may be None for unlabeled extraction. Points outside the grid
    or hitting nodata in any layer are dropped (and recorded); retained rows
    keep the input order.
    """
    names = cube.layer_names()
    stack = np.stack([cube.layers[n].astype64() for n in names], axis=0)

    rows, ids, labels = [], [], []
    dropped: list[str] = []
    any_labels = False
    for i, point in enumerate(points):
        x, y = float(point[0]), float(point[1])
        label = point[2] if len(point) > 2 else None
        pid = str(point[3]) if len(point) > 3 else str(i)
        cell = cube.grid.cell_of(x, y)
        if cell is None:
            dropped.append(pid)
            continue
        vec = stack[:, cell[0], cell[1]]
        if np.isnan(vec).any():
            dropped.append(pid)
            continue
        rows.append(vec)
        ids.append(pid)
        labels.append(-1 if label is None else int(label))
        if label is not None:
            any_labels = True
    if dropped:
        log.info("sample_at dropped %d of %d points (outside grid or nodata)",
                 len(dropped), len(points))
    data = np.array(rows, dtype=np.float64).reshape(len(rows), len(names))
    return FeatureMatrix(
        feature_names=names,
        rows=data,
        sample_ids=ids,
        labels=np.array(labels, dtype=np.int64) if any_labels else None,
        dropped_ids=dropped,
    )


def write_matrix_csv(matrix: FeatureMatrix, path: str | Path) -> None:
    """CSV interchange format: feature columns, then ``label``, then ``id``.
    Floats are written in shortest round-trip form."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([*matrix.feature_names, "label", "id"])
        labels = matrix.labels
        for i in range(matrix.n):
            label = "" if labels is None else str(int(labels[i]))
            writer.writerow([*(repr(float(v)) for v in matrix.rows[i]),
                             label, matrix.sample_ids[i]])


def read_matrix_csv(path: str | Path) -> FeatureMatrix:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"feature matrix not found: {path}")
    with path.open("r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[-2:] != ["label", "id"]:
            raise ValueError(f"{path}: expected header ending in 'label,id'")
        names = header[:-2]
        rows, ids, labels = [], [], []
        labeled = False
        for rec in reader:
            if not rec:
                continue
            rows.append([float(v) for v in rec[: len(names)]])
            raw_label = rec[len(names)]
            labels.append(int(raw_label) if raw_label != "" else -1)
            if raw_label != "":
                labeled = True
            ids.append(rec[len(names) + 1])
    data = np.array(rows, dtype=np.float64).reshape(len(rows), len(names))
    return FeatureMatrix(
        feature_names=names,
        rows=data,
        sample_ids=ids,
        labels=np.array(labels, dtype=np.int64) if labeled else None,
    )
