"""Reference-sample handling: typology recoding, metadata filtering,
vote-fraction outlier ranking, and class-proportion bias correction.

Survey points arrive as CSV rows carrying the original single-letter-prefixed
land-cover code, the sampling source (quality-assured polygon centroid or raw
grid point), and the parcel metadata the grid-point filter needs.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import forest as rf
from .features import FeatureMatrix

log = logging.getLogger(__name__)

# (class id, display name, code letter); the order is fixed and doubles as
# the deterministic tie-break order everywhere classes compete.
CLASS_CATALOG: tuple[tuple[int, str, str], ...] = (
    (1, "Artificial land", "A"),
    (2, "Bare land", "F"),
    (3, "Cropland", "B"),
    (4, "Grassland", "E"),
    (5, "Shrubland", "D"),
    (6, "Water", "G"),
    (7, "Wetland", "H"),
    (8, "Woodland", "C"),
)

CLASS_IDS = tuple(c[0] for c in CLASS_CATALOG)
CLASS_NAMES = {c[0]: c[1] for c in CLASS_CATALOG}
_LETTER_TO_ID = {c[2]: c[0] for c in CLASS_CATALOG}

EXCLUDED_CODES = frozenset({"A22", "A39", "B55", "E30", "F40"})

POLYGON_CENTROID = "polygon_centroid"
GRID_POINT = "grid_point"

AREA_SMALL = "lt_0_5ha"
AREA_OK = "ge_0_5ha"
AREA_UNKNOWN = "unknown"


def recode_toplevel(lc1_code: str) -> int:
    """Top-level class id from the leading letter of a survey code."""
    if not lc1_code:
        raise ValueError("empty land cover code")
    letter = lc1_code[0].upper()
    if letter not in _LETTER_TO_ID:
        raise ValueError(f"unknown land cover code letter {letter!r} in {lc1_code!r}")
    return _LETTER_TO_ID[letter]


@dataclass(frozen=True)
class ReferencePoint:
    id: str
    x: float
    y: float
    lc1_code: str
    source: str = GRID_POINT
    parcel_area_class: str = AREA_UNKNOWN
    cover_percent: float | None = None

    @property
    def toplevel(self) -> int:
        return recode_toplevel(self.lc1_code)


@dataclass(frozen=True)
class RankedPoint:
    point: ReferencePoint
    vote_fraction: float


def metadata_filter(
    points: list[ReferencePoint],
) -> tuple[list[ReferencePoint], list[tuple[ReferencePoint, str]]]:
    """Quality filter for raw grid points; polygon centroids pass untouched.

    A grid point is rejected when its parcel is known to be under 0.5 ha,
    when its cover share is known to be under 50 percent, or when its code is
    one of the thematically ambiguous excluded classes. The first matching
    reason (in that order) tags the rejection. Kept and rejected partition
    the input.
    """
    kept: list[ReferencePoint] = []
    rejected: list[tuple[ReferencePoint, str]] = []
    for point in points:
        if point.source != GRID_POINT:
            kept.append(point)
            continue
        if point.parcel_area_class == AREA_SMALL:
            rejected.append((point, "parcel_area"))
        elif point.cover_percent is not None and point.cover_percent < 50:
            rejected.append((point, "cover"))
        elif point.lc1_code.upper() in EXCLUDED_CODES:
            rejected.append((point, "excluded_class"))
        else:
            kept.append(point)
    return kept, rejected


def _sort_ranked(ranked: list[RankedPoint]) -> list[RankedPoint]:
    return sorted(ranked, key=lambda r: (-r.vote_fraction, r.point.toplevel, r.point.id))


def outlier_rank(
    points: list[ReferencePoint],
    matrix: FeatureMatrix,
    bootstraps: int = 100,
    ntree: int = 100,
    mtry: int | None = None,
    seed: int = 0,
    threads: int = 1,
) -> list[RankedPoint]:
    """Rank points by the mean fraction of forest votes for their own label.

    For each bootstrap run a forest is trained on the full matrix with a seed
    derived from (seed, run); every point then records the fraction of that
    forest's trees voting its labeled class. Points are returned sorted by
    descending mean vote fraction (ties by class order, then id). The result
    does not depend on the row order of the matrix: rows are canonicalized by
    sample id before training.
    """
    if matrix.labels is None:
        raise ValueError("outlier ranking needs a labeled matrix")
    if len(points) != matrix.n:
        raise ValueError(f"{len(points)} points but {matrix.n} matrix rows")
    if len(np.unique(matrix.labels)) < 2:
        raise ValueError("outlier ranking needs at least two classes")

    by_id = {p.id: p for p in points}
    if set(by_id) != set(matrix.sample_ids):
        raise ValueError("point ids and matrix sample ids do not align")

    order = np.argsort(np.array(matrix.sample_ids, dtype=object))
    canon = matrix.select_rows(order)

    votes = np.zeros(canon.n, dtype=np.float64)
    for b in range(bootstraps):
        run_seed = rf.derive_seed(seed, 101, b)
        forest = rf.train(canon, ntree=ntree, mtry=mtry, seed=run_seed, threads=threads)
        fractions = rf.predict_matrix(forest, canon.rows)[1]
        class_col = np.searchsorted(np.array(forest.classes), canon.labels)
        votes += fractions[np.arange(canon.n), class_col]
    votes /= bootstraps

    ranked = [RankedPoint(by_id[pid], float(v)) for pid, v in zip(canon.sample_ids, votes)]
    return _sort_ranked(ranked)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass
class BiasCorrection:
    combined: list[ReferencePoint]
    added_per_class: dict[int, int]
    shortfall_per_class: dict[int, int]
    target_total: int
    realized_proportions: dict[int, float]


def bias_correct(
    polygons: list[ReferencePoint],
    ranked_points: list[RankedPoint],
    target: dict[int, float],
) -> BiasCorrection:
    """Top up the polygon sample with the best-ranked points per class until
    the class proportions match the target table.

    The total is anchored on the most abundant polygon class c*: with n* of
    them and target share p*, the corrected sample aims at T = round(n*/p*)
    locations, and each class c takes its top max(0, round(T p_c) - n_c)
    ranked points. Short supply is taken in full and reported.
    """
    if abs(sum(target.values()) - 1.0) > 1e-9:
        raise ValueError(f"target proportions sum to {sum(target.values())}, expected 1")
    if any(v < 0 for v in target.values()):
        raise ValueError("target proportions must be non-negative")

    poly_counts = {cid: 0 for cid in CLASS_IDS}
    for p in polygons:
        poly_counts[p.toplevel] += 1
    star = max(CLASS_IDS, key=lambda cid: (poly_counts[cid], -cid))
    n_star = poly_counts[star]
    p_star = target.get(star, 0.0)
    if n_star > 0 and p_star == 0:
        raise ValueError(
            f"most abundant polygon class {star} has target proportion 0; total undefined"
        )
    total = _round_half_up(n_star / p_star) if n_star > 0 else 0

    ranked_by_class: dict[int, list[RankedPoint]] = {cid: [] for cid in CLASS_IDS}
    for r in ranked_points:
        ranked_by_class[r.point.toplevel].append(r)

    combined = list(polygons)
    added: dict[int, int] = {}
    shortfall: dict[int, int] = {}
    for cid in CLASS_IDS:
        need = max(0, _round_half_up(total * target.get(cid, 0.0)) - poly_counts[cid])
        pool = ranked_by_class[cid]
        take = pool[:need]
        combined.extend(r.point for r in take)
        added[cid] = len(take)
        if need > len(pool):
            shortfall[cid] = need - len(pool)
            log.warning("class %d: wanted %d supplemental points, only %d ranked available",
                        cid, need, len(pool))

    counts = {cid: 0 for cid in CLASS_IDS}
    for p in combined:
        counts[p.toplevel] += 1
    grand = len(combined)
    realized = {cid: (counts[cid] / grand if grand else 0.0) for cid in CLASS_IDS}
    return BiasCorrection(combined, added, shortfall, total, realized)


# --- CSV / JSON interchange -------------------------------------------------

_REF_FIELDS = ["id", "x", "y", "lc1_code", "source", "parcel_area_class", "cover_percent"]


def write_reference_csv(
    points: list[ReferencePoint] | list[RankedPoint], path: str | Path
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ranked = bool(points) and isinstance(points[0], RankedPoint)
    fields = _REF_FIELDS + (["vote_fraction"] if ranked else [])
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(fields)
        for item in points:
            p = item.point if ranked else item
            row = [p.id, repr(float(p.x)), repr(float(p.y)), p.lc1_code, p.source,
                   p.parcel_area_class,
                   "" if p.cover_percent is None else repr(float(p.cover_percent))]
            if ranked:
                row.append(repr(float(item.vote_fraction)))
            writer.writerow(row)


def read_reference_csv(path: str | Path) -> list[ReferencePoint] | list[RankedPoint]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"reference CSV not found: {path}")
    out: list = []
    with path.open("r", newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(_REF_FIELDS) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        ranked = "vote_fraction" in (reader.fieldnames or [])
        for rec in reader:
            point = ReferencePoint(
                id=rec["id"],
                x=float(rec["x"]),
                y=float(rec["y"]),
                lc1_code=rec["lc1_code"],
                source=rec["source"] or GRID_POINT,
                parcel_area_class=rec["parcel_area_class"] or AREA_UNKNOWN,
                cover_percent=float(rec["cover_percent"]) if rec["cover_percent"] else None,
            )
            out.append(RankedPoint(point, float(rec["vote_fraction"])) if ranked else point)
    return out


def read_target_proportions(path: str | Path) -> dict[int, float]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"target proportions not found: {path}")
    raw = json.loads(path.read_text(encoding="utf-8"))
    return {int(k): float(v) for k, v in raw.items()}
