"""Delimited-text serialization for every report the pipeline emits.

Writers are deterministic (fixed column order, shortest round-trip floats)
so repeated runs with equal configs produce byte-identical files.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .assessment import (
    AblationRow,
    AccuracyReport,
    AreaStatsReport,
    ConfusionMatrix,
    CurvePoint,
    GridAccuracyCell,
)
from .forest import ImportanceReport
from .reference import CLASS_NAMES


def _open_writer(path: str | Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fh = path.open("w", newline="", encoding="utf-8")
    return fh, csv.writer(fh, lineterminator="\n")


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(float(value))  # plain-float repr even for numpy scalars
    return str(value)


def write_confusion_csv(cm: ConfusionMatrix, path: str | Path) -> None:
    fh, writer = _open_writer(path)
    with fh:
        writer.writerow(["class", *cm.classes])
        for i, cid in enumerate(cm.classes):
            writer.writerow([cid, *cm.counts[i].tolist()])


def read_confusion_csv(path: str | Path) -> ConfusionMatrix:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"confusion matrix not found: {path}")
    with path.open("r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "class":
            raise ValueError(f"{path}: expected header starting with 'class'")
        classes = [int(c) for c in header[1:]]
        rows = []
        row_classes = []
        for rec in reader:
            if not rec:
                continue
            row_classes.append(int(rec[0]))
            rows.append([int(v) for v in rec[1:]])
    if row_classes != classes:
        raise ValueError(f"{path}: row class order must match the header")
    return ConfusionMatrix(classes, np.array(rows, dtype=np.int64))


def write_accuracy_csv(report: AccuracyReport, path: str | Path) -> None:
    fh, writer = _open_writer(path)
    with fh:
        writer.writerow(["class", "name", "ua_pct", "ua_se", "pa_pct", "pa_se"])
        for i, cid in enumerate(report.classes):
            writer.writerow([cid, CLASS_NAMES.get(cid, ""),
                             _fmt(report.ua[i]), _fmt(report.ua_se[i]),
                             _fmt(report.pa[i]), _fmt(report.pa_se[i])])
        writer.writerow(["overall", "", _fmt(report.oa), _fmt(report.oa_se), "", ""])


def write_grid_cells_csv(cells: list[GridAccuracyCell], path: str | Path) -> None:
    fh, writer = _open_writer(path)
    with fh:
        writer.writerow(["cell_id", "x0", "y0", "x1", "y1", "n", "oa_pct", "flag"])
        for c in cells:
            writer.writerow([c.cell_id, *(_fmt(v) for v in c.bounds), c.n,
                             _fmt(c.oa), c.flag or ""])


def write_histogram_csv(edges: np.ndarray, hist: np.ndarray, path: str | Path) -> None:
    fh, writer = _open_writer(path)
    with fh:
        writer.writerow(["bin_low", "bin_high", "cells"])
        for lo, hi, n in zip(edges[:-1], edges[1:], hist):
            writer.writerow([_fmt(float(lo)), _fmt(float(hi)), int(n)])


def write_curve_csv(points: list[CurvePoint], path: str | Path) -> None:
    fh, writer = _open_writer(path)
    with fh:
        writer.writerow(["fraction", "class", "mean_accuracy", "variance"])
        for p in points:
            writer.writerow([_fmt(p.fraction), "overall" if p.class_id is None else p.class_id,
                             _fmt(p.mean), _fmt(p.variance)])


def write_area_stats_csv(report: AreaStatsReport, path: str | Path) -> None:
    fh, writer = _open_writer(path)
    with fh:
        writer.writerow(["unit", "class", "mapped_proportion", "reference_proportion"])
        for ui, uid in enumerate(report.unit_ids):
            for ci, cid in enumerate(report.classes):
                writer.writerow([uid, cid, _fmt(float(report.mapped[ui, ci])),
                                 _fmt(float(report.reference[ui, ci]))])
        writer.writerow(["summary", "r2", _fmt(report.r2), ""])
        writer.writerow(["summary", "rmse", _fmt(report.rmse), ""])
        writer.writerow(["summary", "mae", _fmt(report.mae), ""])
        for cid in report.classes:
            writer.writerow(["slope", cid, _fmt(report.slopes[cid]), ""])


def write_ablation_csv(rows: list[AblationRow], path: str | Path) -> None:
    fh, writer = _open_writer(path)
    with fh:
        writer.writerow(["question", "variant", "oa", "chosen",
                         *(f"class_{cid}" for cid in sorted(CLASS_NAMES))])
        for r in rows:
            per = [(_fmt(r.per_class[cid]) if cid in r.per_class else "")
                   for cid in sorted(CLASS_NAMES)]
            writer.writerow([r.question, r.variant, _fmt(r.oa), int(r.chosen), *per])


def write_tune_csv(surface: list[tuple[int, int, float]], best: tuple[int, int],
                   path: str | Path) -> None:
    fh, writer = _open_writer(path)
    with fh:
        writer.writerow(["ntree", "mtry", "oob_error", "best"])
        for nt, mt, err in surface:
            writer.writerow([nt, mt, _fmt(err), int((nt, mt) == best)])


def write_rfe_csv(selected: list[str], trace: list[tuple[int, float]],
                  path: str | Path) -> None:
    fh, writer = _open_writer(path)
    with fh:
        writer.writerow(["step", "feature_count", "oob_accuracy"])
        for i, (size, acc) in enumerate(trace):
            writer.writerow([i, size, _fmt(acc)])
        writer.writerow(["selected", len(selected), " ".join(selected)])


def write_importance_csv(report: ImportanceReport, path: str | Path) -> None:
    fh, writer = _open_writer(path)
    with fh:
        writer.writerow(["feature", "mda_mean", "mda_se", "mdg_mean", "mdg_se"])
        for i, name in enumerate(report.feature_names):
            writer.writerow([name, _fmt(float(report.mda_mean[i])), _fmt(float(report.mda_se[i])),
                             _fmt(float(report.mdg_mean[i])), _fmt(float(report.mdg_se[i]))])


def write_ranked_proportions_csv(realized: dict[int, float], added: dict[int, int],
                                 target: dict[int, float], path: str | Path) -> None:
    fh, writer = _open_writer(path)
    with fh:
        writer.writerow(["class", "name", "target", "realized", "points_added"])
        for cid in sorted(realized):
            writer.writerow([cid, CLASS_NAMES.get(cid, ""), _fmt(target.get(cid, 0.0)),
                             _fmt(realized[cid]), added.get(cid, 0)])
