"""Accuracy assessment and experiment harnesses.

Covers the confusion-matrix report (overall, user's, and producer's accuracy
with binomial standard errors), the spatial accuracy grid, the training-set
size curve, area-proportion regression against survey statistics, map
reclassification, and the preprocessing-ablation driver.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from . import forest as rf
from .features import FeatureMatrix
from .grid import Raster
from .reference import CLASS_IDS

log = logging.getLogger(__name__)


# --- confusion matrix and accuracy report ------------------------------------


@dataclass
class ConfusionMatrix:
    """Prediction-row by reference-column count table."""

    classes: list[int]
    counts: np.ndarray

    def __post_init__(self) -> None:
        self.counts = np.asarray(self.counts, dtype=np.int64)
        k = len(self.classes)
        if self.counts.shape != (k, k):
            raise ValueError(f"counts shape {self.counts.shape} does not match {k} classes")
        if (self.counts < 0).any():
            raise ValueError("confusion counts must be non-negative")

    @property
    def row_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def col_totals(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion(pred, ref, classes: list[int] | None = None) -> ConfusionMatrix:
    """Tally predictions against reference labels."""
    pred = np.asarray(pred, dtype=np.int64)
    ref = np.asarray(ref, dtype=np.int64)
    if pred.shape != ref.shape or pred.ndim != 1 or len(pred) == 0:
        raise ValueError("pred and ref must be equal-length non-empty 1-D sequences")
    if classes is None:
        classes = sorted(set(pred.tolist()) | set(ref.tolist()))
    index = {c: i for i, c in enumerate(classes)}
    unknown = (set(pred.tolist()) | set(ref.tolist())) - set(classes)
    if unknown:
        raise ValueError(f"labels outside the class list: {sorted(unknown)}")
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for p, r in zip(pred, ref):
        counts[index[p], index[r]] += 1
    return ConfusionMatrix(list(classes), counts)


@dataclass
class AccuracyReport:
    """Percent accuracies with binomial standard errors.

    SE = sqrt(p (1 - p) / n) * 100 where n is the row total (user's), column
    total (producer's), or grand total (overall). Entries with a zero
    denominator are None.
    """

    classes: list[int]
    oa: float
    oa_se: float
    ua: list[float | None]
    ua_se: list[float | None]
    pa: list[float | None]
    pa_se: list[float | None]


def _se_pct(p: float, n: float) -> float:
    return math.sqrt(p * (1.0 - p) / n) * 100.0


def accuracy_report(cm: ConfusionMatrix) -> AccuracyReport:
    if cm.total == 0:
        raise ValueError("empty confusion matrix")
    diag = np.diag(cm.counts).astype(np.float64)
    rows = cm.row_totals.astype(np.float64)
    cols = cm.col_totals.astype(np.float64)
    oa = float(diag.sum() / cm.total)

    ua: list[float | None] = []
    ua_se: list[float | None] = []
    pa: list[float | None] = []
    pa_se: list[float | None] = []
    for i in range(len(cm.classes)):
        if rows[i] > 0:
            u = diag[i] / rows[i]
            ua.append(u * 100.0)
            ua_se.append(_se_pct(u, rows[i]))
        else:
            ua.append(None)
            ua_se.append(None)
        if cols[i] > 0:
            p = diag[i] / cols[i]
            pa.append(p * 100.0)
            pa_se.append(_se_pct(p, cols[i]))
        else:
            pa.append(None)
            pa_se.append(None)
    return AccuracyReport(list(cm.classes), oa * 100.0, _se_pct(oa, cm.total),
                          ua, ua_se, pa, pa_se)


# --- spatial accuracy grid ----------------------------------------------------


@dataclass
class GridAccuracyCell:
    cell_id: str
    bounds: tuple[float, float, float, float]  # x0, y0, x1, y1
    n: int
    oa: float | None  # None when flagged insufficient
    flag: str | None = None


def grid_accuracy(
    samples: list[tuple[float, float, int, int]],
    cell_size: float,
    min_n: int = 20,
    bins: int = 10,
) -> tuple[list[GridAccuracyCell], tuple[np.ndarray, np.ndarray]]:
    """Bucket (x, y, pred, ref) samples into square cells and score each.

    Cells with fewer than ``min_n`` samples or fewer than two distinct
    reference classes are flagged instead of scored. Also returns a histogram
    (edges, counts) of overall accuracy across the eligible cells.
    """
    if cell_size <= 0:
        raise ValueError(f"cell_size must be positive, got {cell_size}")
    buckets: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for x, y, pred, ref in samples:
        if not (math.isfinite(x) and math.isfinite(y)):
            raise ValueError(f"non-finite sample coordinate ({x}, {y})")
        key = (int(math.floor(x / cell_size)), int(math.floor(y / cell_size)))
        buckets.setdefault(key, []).append((int(pred), int(ref)))

    cells: list[GridAccuracyCell] = []
    oas: list[float] = []
    for key in sorted(buckets):
        pairs = buckets[key]
        refs = {r for _, r in pairs}
        bounds = (key[0] * cell_size, key[1] * cell_size,
                  (key[0] + 1) * cell_size, (key[1] + 1) * cell_size)
        cell_id = f"{key[0]}_{key[1]}"
        if len(pairs) < min_n:
            cells.append(GridAccuracyCell(cell_id, bounds, len(pairs), None, "insufficient_samples"))
        elif len(refs) < 2:
            cells.append(GridAccuracyCell(cell_id, bounds, len(pairs), None, "single_reference_class"))
        else:
            oa = 100.0 * sum(p == r for p, r in pairs) / len(pairs)
            oas.append(oa)
            cells.append(GridAccuracyCell(cell_id, bounds, len(pairs), oa))
    hist, edges = np.histogram(np.array(oas), bins=bins, range=(0.0, 100.0))
    return cells, (edges, hist)


# --- sample-size curve ----------------------------------------------------------


@dataclass
class CurvePoint:
    fraction: float
    class_id: int | None  # None = overall
    mean: float
    variance: float


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def stratified_subsample(
    matrix: FeatureMatrix, fraction: float, rng: np.random.Generator
) -> FeatureMatrix | None:
    """Per-class subsample at ``fraction``; None when any class would vanish."""
    assert matrix.labels is not None
    keep: list[np.ndarray] = []
    for cid in np.unique(matrix.labels):
        rows = np.flatnonzero(matrix.labels == cid)
        count = _round_half_up(fraction * len(rows))
        if count == 0:
            return None
        keep.append(rng.choice(rows, size=count, replace=False))
    idx = np.sort(np.concatenate(keep))
    return matrix.select_rows(idx)


def sample_size_curve(
    matrix: FeatureMatrix,
    step: float = 0.05,
    bootstraps: int = 10,
    ntree: int = 100,
    mtry: int | None = None,
    seed: int = 0,
    threads: int = 1,
) -> list[CurvePoint]:
    """Accuracy as a function of training-set size.

    Fractions run 1.0, 1.0 - step, ... while every class keeps at least one
    sample; each fraction is evaluated over ``bootstraps`` seeded stratified
    subsamples with OOB overall and per-class accuracy, reported as mean and
    variance. Stops (reporting the usable range) once a class would be lost.
    """
    if matrix.labels is None:
        raise ValueError("sample size curve needs a labeled matrix")
    if not 0 < step < 1:
        raise ValueError(f"step must be in (0, 1), got {step}")

    classes = np.unique(matrix.labels)
    points: list[CurvePoint] = []
    f_idx = 0
    fraction = 1.0
    while fraction > 1e-9:
        overall = np.zeros(bootstraps)
        per_class = np.zeros((bootstraps, len(classes)))
        lost = False
        for b in range(bootstraps):
            rng = np.random.default_rng(np.random.SeedSequence((seed, 606, f_idx, b)))
            sub = stratified_subsample(matrix, fraction, rng)
            if sub is None:
                lost = True
                break
            forest = rf.train(sub, ntree=ntree, mtry=mtry,
                              seed=rf.derive_seed(seed, 607, f_idx, b), threads=threads)
            result = rf.oob_evaluate(forest, sub)
            overall[b] = result.accuracy
            scored = result.predictions >= 0
            for ci, cid in enumerate(classes):
                mask = scored & (sub.labels == cid)
                per_class[b, ci] = (
                    float((result.predictions[mask] == cid).mean()) if mask.any() else np.nan
                )
        if lost:
            log.warning("stopping size curve at fraction %.2f: a class would be lost", fraction)
            break
        var = float(overall.var(ddof=1)) if bootstraps > 1 else 0.0
        points.append(CurvePoint(round(fraction, 10), None, float(overall.mean()), var))
        with np.errstate(invalid="ignore"):
            for ci, cid in enumerate(classes):
                vals = per_class[:, ci]
                vals = vals[~np.isnan(vals)]
                if len(vals):
                    cvar = float(vals.var(ddof=1)) if len(vals) > 1 else 0.0
                    points.append(CurvePoint(round(fraction, 10), int(cid),
                                             float(vals.mean()), cvar))
        f_idx += 1
        fraction = 1.0 - f_idx * step
    return points


# --- area statistics ------------------------------------------------------------


@dataclass
class AreaStatsReport:
    classes: list[int]
    unit_ids: list[int]
    mapped: np.ndarray  # (units, classes) proportions
    reference: np.ndarray  # (units, classes) proportions
    r2: float
    rmse: float
    mae: float
    slopes: dict[int, float]  # per-class OLS slope of mapped on reference
    excluded_units: int = 0


def area_stats(
    class_map: Raster,
    units: Raster,
    ref_points: list[tuple[float, float, int]],
    classes: list[int] | None = None,
) -> AreaStatsReport:
    """Compare mapped class proportions against point-survey proportions per
    statistical unit, with a pooled OLS fit of mapped on reference.

    RMSE and MAE are computed directly on the pooled (reference, mapped)
    proportion pairs. Units without valid map cells or without any reference
    point are excluded and counted.
    """
    if class_map.grid != units.grid:
        raise ValueError("class map and unit raster must share one grid")
    classes = list(classes) if classes is not None else list(CLASS_IDS)

    map_vals = class_map.astype64()
    unit_vals = units.astype64()
    both = np.isfinite(map_vals) & np.isfinite(unit_vals)

    # mapped proportions per unit
    unit_ids = sorted({int(v) for v in np.unique(unit_vals[np.isfinite(unit_vals)])})
    mapped: dict[int, np.ndarray] = {}
    for uid in unit_ids:
        sel = both & (unit_vals == uid)
        total = int(sel.sum())
        if total == 0:
            continue
        props = np.array([(map_vals[sel] == c).sum() / total for c in classes])
        mapped[uid] = props

    # reference proportions from points
    ref_counts: dict[int, np.ndarray] = {}
    for x, y, cid in ref_points:
        cell = units.grid.cell_of(float(x), float(y))
        if cell is None or not np.isfinite(unit_vals[cell]):
            raise ValueError(f"reference point ({x}, {y}) falls outside every unit")
        uid = int(unit_vals[cell])
        if cid not in classes:
            raise ValueError(f"reference class {cid} not in class list")
        ref_counts.setdefault(uid, np.zeros(len(classes)))[classes.index(int(cid))] += 1

    usable = [uid for uid in unit_ids if uid in mapped and uid in ref_counts]
    excluded = len(unit_ids) - len(usable)
    if not usable:
        raise ValueError("no unit has both valid map cells and reference points")
    m = np.vstack([mapped[uid] for uid in usable])
    r = np.vstack([ref_counts[uid] / ref_counts[uid].sum() for uid in usable])

    mapped_flat = m.ravel()
    ref_flat = r.ravel()
    resid = mapped_flat - ref_flat
    rmse = float(np.sqrt(np.mean(resid**2)))
    mae = float(np.mean(np.abs(resid)))
    if np.allclose(ref_flat, ref_flat[0]) or np.allclose(mapped_flat, mapped_flat[0]):
        r2 = 1.0 if np.allclose(mapped_flat, ref_flat) else 0.0
    else:
        r2 = float(np.corrcoef(ref_flat, mapped_flat)[0, 1] ** 2)

    slopes: dict[int, float] = {}
    for ci, cid in enumerate(classes):
        xs = r[:, ci]
        ys = m[:, ci]
        varx = float(np.var(xs))
        slopes[cid] = float(np.cov(xs, ys, bias=True)[0, 1] / varx) if varx > 0 else float("nan")

    return AreaStatsReport(classes, usable, m, r, r2, rmse, mae, slopes, excluded)


# --- reclassification ------------------------------------------------------------


@dataclass
class ReclassTable:
    """Total mapping from a source legend onto the engine's class ids.

    ``legend`` maps raw raster values to source class names; ``mapping`` sends
    every source class name to a target class id.
    """

    legend: dict[int, str]
    mapping: dict[str, int]

    def __post_init__(self) -> None:
        unmapped = [name for name in self.legend.values() if name not in self.mapping]
        if unmapped:
            raise ValueError(f"legend classes without a mapping: {sorted(set(unmapped))}")

    def target_for_value(self, value: int) -> int:
        if value not in self.legend:
            raise KeyError(value)
        return self.mapping[self.legend[value]]


def load_standard_mappings() -> dict[str, dict[str, int]]:
    """Bundled source-name to class-id mappings for the common European and
    global land-cover products (keys: from_glc10, s2glc, pflugmacher, corine)."""
    text = resources.files("landcover").joinpath("data/reclass_tables.json").read_text("utf-8")
    raw = json.loads(text)
    return {product: {name: int(cid) for name, cid in table.items()}
            for product, table in raw.items()}


def reclassify(class_map: Raster, table: ReclassTable) -> Raster:
    """Value-for-value legend translation; nodata passes through."""
    vals = class_map.astype64()
    out = np.full(vals.shape, np.nan)
    present = np.unique(vals[np.isfinite(vals)])
    for v in present:
        iv = int(v)
        if iv != v or iv not in table.legend:
            raise ValueError(f"map value {v} missing from the reclass legend")
        out[vals == v] = table.target_for_value(iv)
    return Raster.from_float64(class_map.grid, out, class_map.nodata)


# --- ablation driver ------------------------------------------------------------


@dataclass
class AblationRow:
    question: str
    variant: str
    oa: float
    per_class: dict[int, float]
    chosen: bool = False


def ablation_run(
    variants: list[tuple[str, str, FeatureMatrix]],
    ntree: int = 100,
    mtry: int | None = None,
    seed: int = 0,
    threads: int = 1,
) -> list[AblationRow]:
    """Train and OOB-score one forest per (question, variant, matrix) with a
    fixed seed, then flag the best variant per question as chosen.

    Identical matrices under the same seed yield identical rows, so variant
    comparisons isolate the preprocessing decision under test.
    """
    rows: list[AblationRow] = []
    for question, name, matrix in variants:
        forest = rf.train(matrix, ntree=ntree, mtry=mtry, seed=seed, threads=threads)
        result = rf.oob_evaluate(forest, matrix)
        per_class: dict[int, float] = {}
        scored = result.predictions >= 0
        for cid in np.unique(matrix.labels):
            mask = scored & (matrix.labels == cid)
            if mask.any():
                per_class[int(cid)] = float((result.predictions[mask] == cid).mean())
        rows.append(AblationRow(question, name, result.accuracy, per_class))

    by_question: dict[str, list[AblationRow]] = {}
    for row in rows:
        by_question.setdefault(row.question, []).append(row)
    for group in by_question.values():
        best = max(group, key=lambda r: r.oa)
        best.chosen = True
    return rows
