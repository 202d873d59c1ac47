"""Figure renderers for the report-producing pipeline stages.

Every stage that writes a delimited report can also render a companion PNG
through one of these helpers. All functions write to a file path and return
it; nothing touches an interactive backend.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .assessment import AblationRow, AreaStatsReport, CurvePoint
from .forest import ImportanceReport
from .reference import CLASS_NAMES

_CLASS_COLORS = matplotlib.colormaps["tab10"]


def _finish(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_sample_size_curve(points: list[CurvePoint], path: str | Path) -> Path:
    """Accuracy against training fraction; one line per class plus overall."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    by_class: dict[int | None, list[CurvePoint]] = {}
    for p in points:
        by_class.setdefault(p.class_id, []).append(p)
    for cid, pts in sorted(by_class.items(), key=lambda kv: (kv[0] is not None, kv[0] or 0)):
        pts = sorted(pts, key=lambda p: p.fraction)
        x = [p.fraction for p in pts]
        y = [100 * p.mean for p in pts]
        err = [100 * np.sqrt(p.variance) for p in pts]
        if cid is None:
            ax.errorbar(x, y, yerr=err, color="black", lw=2, label="overall", zorder=5)
        else:
            ax.plot(x, y, lw=1, alpha=0.7, color=_CLASS_COLORS(cid % 10),
                    label=CLASS_NAMES.get(cid, str(cid)))
    ax.set_xlabel("training fraction")
    ax.set_ylabel("accuracy (%)")
    ax.legend(fontsize=7, ncol=2)
    ax.grid(alpha=0.3)
    return _finish(fig, path)


def plot_accuracy_histogram(edges: np.ndarray, hist: np.ndarray, path: str | Path) -> Path:
    """Abundance of grid cells across the accuracy range."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(edges[:-1], hist, width=np.diff(edges), align="edge",
           color="steelblue", edgecolor="white")
    ax.set_xlabel("cell overall accuracy (%)")
    ax.set_ylabel("grid cells")
    return _finish(fig, path)


def plot_area_stats(report: AreaStatsReport, path: str | Path) -> Path:
    """Mapped against reference proportions per unit and class, with the
    pooled fit and headline metrics."""
    fig, ax = plt.subplots(figsize=(5.5, 5.5))
    for ci, cid in enumerate(report.classes):
        ax.scatter(report.reference[:, ci], report.mapped[:, ci], s=12, alpha=0.6,
                   color=_CLASS_COLORS(cid % 10), label=CLASS_NAMES.get(cid, str(cid)))
    lim = max(report.reference.max(), report.mapped.max()) * 1.05 + 1e-9
    ax.plot([0, lim], [0, lim], color="grey", lw=1, ls="--")
    ref = report.reference.ravel()
    mapped = report.mapped.ravel()
    if np.ptp(ref) > 0:
        slope, intercept = np.polyfit(ref, mapped, 1)
        xs = np.linspace(0, lim, 50)
        ax.plot(xs, slope * xs + intercept, color="black", lw=1.5)
    ax.text(0.03, 0.97,
            f"$R^2$ = {report.r2:.2f}\nRMSE = {100 * report.rmse:.2f}%\nMAE = {100 * report.mae:.2f}%",
            transform=ax.transAxes, va="top", fontsize=9)
    ax.set_xlabel("reference proportion")
    ax.set_ylabel("mapped proportion")
    ax.legend(fontsize=7)
    return _finish(fig, path)


def plot_ablation(rows: list[AblationRow], path: str | Path) -> Path:
    """Overall accuracy per variant, grouped by question; chosen variants
    are hatched."""
    fig, ax = plt.subplots(figsize=(max(6, 0.9 * len(rows)), 4))
    labels = [f"{r.question}\n{r.variant}" for r in rows]
    values = [100 * r.oa for r in rows]
    colors = ["darkseagreen" if r.chosen else "lightsteelblue" for r in rows]
    bars = ax.bar(range(len(rows)), values, color=colors, edgecolor="grey")
    for bar, row in zip(bars, rows):
        if row.chosen:
            bar.set_hatch("//")
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, fontsize=7)
    ax.set_ylabel("OOB overall accuracy (%)")
    ax.set_ylim(0, 100)
    return _finish(fig, path)


def plot_importance(report: ImportanceReport, path: str | Path, top: int = 15) -> Path:
    """Top features by mean decrease in accuracy, with standard-error bars."""
    order = np.argsort(report.mda_mean)[::-1][:top]
    fig, ax = plt.subplots(figsize=(6, 0.35 * len(order) + 1.5))
    ypos = np.arange(len(order))[::-1]
    ax.errorbar(report.mda_mean[order] * 100, ypos, xerr=report.mda_se[order] * 100,
                fmt="o", color="firebrick", capsize=2)
    ax.set_yticks(ypos)
    ax.set_yticklabels([report.feature_names[i] for i in order], fontsize=8)
    ax.set_xlabel("mean decrease in accuracy (pp)")
    ax.grid(alpha=0.3, axis="x")
    return _finish(fig, path)


def plot_rfe_trace(trace: list[tuple[int, float]], path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    if trace:
        sizes = [t[0] for t in trace]
        accs = [100 * t[1] for t in trace]
        ax.plot(sizes, accs, "o-", color="steelblue")
        ax.invert_xaxis()
    ax.set_xlabel("feature count")
    ax.set_ylabel("OOB accuracy (%)")
    ax.grid(alpha=0.3)
    return _finish(fig, path)


def plot_tune_surface(surface: list[tuple[int, int, float]], path: str | Path) -> Path:
    """OOB error over the hyperparameter grid."""
    ntrees = sorted({s[0] for s in surface})
    mtrys = sorted({s[1] for s in surface})
    grid = np.full((len(mtrys), len(ntrees)), np.nan)
    for nt, mt, err in surface:
        grid[mtrys.index(mt), ntrees.index(nt)] = err * 100
    fig, ax = plt.subplots(figsize=(7, 4))
    im = ax.imshow(grid, aspect="auto", origin="lower", cmap="viridis")
    ax.set_xticks(range(len(ntrees)))
    ax.set_xticklabels(ntrees, fontsize=7)
    ax.set_yticks(range(len(mtrys)))
    ax.set_yticklabels(mtrys, fontsize=7)
    ax.set_xlabel("trees")
    ax.set_ylabel("features per split")
    fig.colorbar(im, ax=ax, label="OOB error (%)")
    return _finish(fig, path)
