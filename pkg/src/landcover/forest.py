"""From-scratch random forest classifier with OOB evaluation, dual variable
importance, recursive feature elimination, and hyperparameter grid search.

Trees are fully grown (minimum node size 1, no depth cap) on seeded bootstrap
samples; each node draws ``mtry`` candidate features without replacement and
takes the split minimizing weighted Gini impurity over the midpoints of
consecutive distinct sorted values. Everything is deterministic given
(matrix, parameters, seed): per-tree generators derive from the master seed
and the tree index, so tree training order (and threading) cannot change the
result.

Trees are stored as flat parallel arrays (feature < 0 marks a leaf) which
keeps batch prediction a handful of vectorized index hops.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import FeatureMatrix

FORMAT_NAME = "landcover-forest"
FORMAT_VERSION = 1


def derive_seed(*parts: int) -> int:
    """Stable child seed from integer context parts."""
    ss = np.random.SeedSequence([int(p) for p in parts])
    return int(ss.generate_state(1, np.uint64)[0])


def default_mtry(n_features: int) -> int:
    """floor(sqrt(p)), clamped to at least 1."""
    return max(1, int(math.floor(math.sqrt(n_features))))


def gini_impurity(counts) -> float:
    """1 - sum(p_c^2) over class shares."""
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        return 0.0
    shares = counts / total
    return float(1.0 - (shares * shares).sum())


@dataclass
class Tree:
    """Flat-array decision tree: node i is a split (feature[i] >= 0, value <=
    threshold goes left) or a leaf (feature[i] == -1, class from counts)."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray  # (n_nodes, n_classes) training rows reaching the node
    node_class: np.ndarray  # argmax of counts, ties to the earlier class

    def predict_idx(self, X: np.ndarray) -> np.ndarray:
        """Leaf class index for every row of X."""
        node = np.zeros(X.shape[0], dtype=np.int32)
        while True:
            feat = self.feature[node]
            live = feat >= 0
            if not live.any():
                return self.node_class[node]
            rows = np.flatnonzero(live)
            go_left = X[rows, feat[rows]] <= self.threshold[node[rows]]
            node[rows] = np.where(go_left, self.left[node[rows]], self.right[node[rows]])

    @property
    def n_nodes(self) -> int:
        return len(self.feature)


@dataclass
class Forest:
    trees: list[Tree]
    ntree: int
    mtry: int
    mtry_exact: float  # sqrt(p) before flooring, recorded for run reports
    feature_names: list[str]
    classes: np.ndarray  # sorted class ids
    sample_ids: list[str]
    inbag_rows: list[np.ndarray]  # per tree, sorted unique in-bag row positions
    master_seed: int
    gini_importance: np.ndarray = field(default=None)  # type: ignore[assignment]

    @property
    def n_classes(self) -> int:
        return len(self.classes)


def _grow_tree(
    X: np.ndarray,
    y_idx: np.ndarray,
    n_classes: int,
    mtry: int,
    rng: np.random.Generator,
) -> tuple[Tree, np.ndarray, np.ndarray]:
    """Grow one tree on a bootstrap of (X, y_idx).

    Returns the tree, the sorted unique in-bag row positions, and the raw
    Gini-importance accumulator (weighted impurity decrease per feature).
    """
    n, p = X.shape
    boot = rng.integers(0, n, size=n)
    Xb = X[boot]
    yb = y_idx[boot]
    onehot = np.eye(n_classes)

    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    counts: list[np.ndarray] = []
    gini_acc = np.zeros(p)

    def new_node() -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        counts.append(None)  # type: ignore[arg-type]
        return len(feature) - 1

    root = new_node()
    stack: list[tuple[int, np.ndarray]] = [(root, np.arange(n))]
    while stack:
        node, idx = stack.pop()
        ys = yb[idx]
        cnt = np.bincount(ys, minlength=n_classes).astype(np.float64)
        counts[node] = cnt
        n_node = len(idx)
        if n_node < 2 or (cnt > 0).sum() <= 1:
            continue
        feats = rng.choice(p, size=mtry, replace=False)
        total_sq = float((cnt * cnt).sum())
        best_score = -np.inf
        best_feat = -1
        best_thr = 0.0
        for f in feats:
            v = Xb[idx, f]
            order = np.argsort(v, kind="stable")
            sv = v[order]
            cut = sv[:-1] < sv[1:]
            if not cut.any():
                continue
            prefix = np.cumsum(onehot[ys[order]], axis=0)
            nl = np.arange(1, n_node, dtype=np.float64)
            cl = prefix[:-1][cut]
            nl = nl[cut]
            nr = n_node - nl
            cr = cnt - cl
            # maximizing sum(counts^2)/n over both children minimizes the
            # weighted Gini impurity
            score = (cl * cl).sum(axis=1) / nl + (cr * cr).sum(axis=1) / nr
            j = int(np.argmax(score))
            if score[j] > best_score:
                best_score = score[j]
                pos = np.flatnonzero(cut)[j]
                mid = (sv[pos] + sv[pos + 1]) / 2.0
                # guard against the midpoint rounding up onto the right value
                best_thr = float(sv[pos]) if mid >= sv[pos + 1] else float(mid)
                best_feat = int(f)
        if best_feat < 0:
            continue
        go_left = Xb[idx, best_feat] <= best_thr
        li = new_node()
        ri = new_node()
        feature[node] = best_feat
        threshold[node] = best_thr
        left[node] = li
        right[node] = ri
        # impurity decrease, weighted by the share of rows reaching the node
        nl_rows = int(go_left.sum())
        nr_rows = n_node - nl_rows
        cnt_l = np.bincount(ys[go_left], minlength=n_classes).astype(np.float64)
        cnt_r = cnt - cnt_l
        g_node = 1.0 - total_sq / (n_node * n_node)
        g_l = 1.0 - float((cnt_l * cnt_l).sum()) / (nl_rows * nl_rows)
        g_r = 1.0 - float((cnt_r * cnt_r).sum()) / (nr_rows * nr_rows)
        delta = g_node - (nl_rows * g_l + nr_rows * g_r) / n_node
        gini_acc[best_feat] += (n_node / n) * delta
        stack.append((ri, idx[~go_left]))
        stack.append((li, idx[go_left]))

    counts_arr = np.vstack(counts)
    tree = Tree(
        feature=np.array(feature, dtype=np.int32),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.int32),
        right=np.array(right, dtype=np.int32),
        counts=counts_arr,
        node_class=np.argmax(counts_arr, axis=1).astype(np.int32),
    )
    return tree, np.unique(boot), gini_acc


def train(
    matrix: FeatureMatrix,
    ntree: int = 100,
    mtry: int | None = None,
    seed: int = 0,
    threads: int = 1,
) -> Forest:
    """Train a forest on a labeled matrix.

    ``mtry`` defaults to floor(sqrt(p)). The exact square root is kept on the
    forest for run reports.
    """
    if matrix.labels is None:
        raise ValueError("training needs a labeled matrix")
    classes = np.unique(matrix.labels)
    if len(classes) < 2:
        raise ValueError("training needs at least two classes")
    if ntree < 1:
        raise ValueError(f"ntree must be >= 1, got {ntree}")
    p = matrix.p
    mtry_exact = math.sqrt(p)
    if mtry is None:
        mtry = default_mtry(p)
    if not 1 <= mtry <= p:
        raise ValueError(f"mtry must be in [1, {p}], got {mtry}")

    X = matrix.rows
    y_idx = np.searchsorted(classes, matrix.labels).astype(np.int64)

    def build(t: int):
        rng = np.random.default_rng(np.random.SeedSequence((seed, t)))
        return _grow_tree(X, y_idx, len(classes), mtry, rng)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(build, range(ntree)))
    else:
        results = [build(t) for t in range(ntree)]

    trees = [r[0] for r in results]
    inbag = [r[1] for r in results]
    gini = np.mean([r[2] for r in results], axis=0)
    return Forest(
        trees=trees,
        ntree=ntree,
        mtry=mtry,
        mtry_exact=mtry_exact,
        feature_names=list(matrix.feature_names),
        classes=classes,
        sample_ids=list(matrix.sample_ids),
        inbag_rows=inbag,
        master_seed=seed,
        gini_importance=gini,
    )


def predict_matrix(forest: Forest, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batch prediction.

    Returns (predicted class ids, vote-fraction matrix) with fraction columns
    ordered like ``forest.classes``. Vote ties resolve to the earlier class.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != len(forest.feature_names):
        raise ValueError(
            f"expected rows of width {len(forest.feature_names)}, got shape {X.shape}"
        )
    votes = np.zeros((X.shape[0], forest.n_classes), dtype=np.float64)
    rows = np.arange(X.shape[0])
    for tree in forest.trees:
        votes[rows, tree.predict_idx(X)] += 1.0
    fractions = votes / forest.ntree
    pred = forest.classes[np.argmax(fractions, axis=1)]
    return pred, fractions


def predict(forest: Forest, row: np.ndarray) -> tuple[int, dict[int, float]]:
    """Single-row prediction: (class id, vote vector keyed by class id)."""
    pred, fractions = predict_matrix(forest, np.asarray(row, dtype=np.float64)[None, :])
    vote_vector = {int(c): float(v) for c, v in zip(forest.classes, fractions[0])}
    return int(pred[0]), vote_vector


@dataclass
class OOBResult:
    accuracy: float
    predictions: np.ndarray  # class id per sample, -1 where never out-of-bag
    n_scored: int
    n_skipped: int


def oob_evaluate(forest: Forest, matrix: FeatureMatrix) -> OOBResult:
    """Out-of-bag evaluation: each sample is voted on only by trees whose
    bootstrap excluded it. Samples that were in-bag everywhere are skipped."""
    if matrix.labels is None:
        raise ValueError("OOB evaluation needs a labeled matrix")
    if set(matrix.sample_ids) != set(forest.sample_ids):
        raise ValueError("matrix sample ids do not match the forest's training ids")
    # map forest row positions onto the (possibly reordered) matrix rows
    pos_in_matrix = {sid: i for i, sid in enumerate(matrix.sample_ids)}
    forest_to_matrix = np.array([pos_in_matrix[sid] for sid in forest.sample_ids])

    n = matrix.n
    votes = np.zeros((n, forest.n_classes), dtype=np.float64)
    oob_any = np.zeros(n, dtype=bool)
    for tree, inbag in zip(forest.trees, forest.inbag_rows):
        inbag_matrix_rows = forest_to_matrix[inbag]
        oob_mask = np.ones(n, dtype=bool)
        oob_mask[inbag_matrix_rows] = False
        if not oob_mask.any():
            continue
        idx = np.flatnonzero(oob_mask)
        pred_idx = tree.predict_idx(matrix.rows[idx])
        votes[idx, pred_idx] += 1.0
        oob_any[idx] = True

    predictions = np.full(n, -1, dtype=np.int64)
    scored = np.flatnonzero(oob_any)
    predictions[scored] = forest.classes[np.argmax(votes[scored], axis=1)]
    correct = predictions[scored] == matrix.labels[scored]
    accuracy = float(correct.mean()) if len(scored) else float("nan")
    return OOBResult(accuracy, predictions, len(scored), n - len(scored))


@dataclass
class ImportanceReport:
    feature_names: list[str]
    mda_mean: np.ndarray
    mda_se: np.ndarray
    mdg_mean: np.ndarray
    mdg_se: np.ndarray
    runs: int


def importance(forest: Forest, matrix: FeatureMatrix, bootstraps: int = 10) -> ImportanceReport:
    """Mean-decrease-accuracy (OOB permutation) and mean-decrease-Gini scores,
    aggregated over independently seeded retrains of the given forest's
    configuration (mean and standard error over runs)."""
    B = max(1, bootstraps)
    p = matrix.p
    mda = np.zeros((B, p))
    mdg = np.zeros((B, p))
    for b in range(B):
        run_seed = derive_seed(forest.master_seed, 202, b)
        fb = train(matrix, ntree=forest.ntree, mtry=forest.mtry, seed=run_seed)
        mdg[b] = fb.gini_importance
        base = oob_evaluate(fb, matrix).accuracy
        for j in range(p):
            rng = np.random.default_rng(np.random.SeedSequence((run_seed, 303, j)))
            shuffled = matrix.rows.copy()
            shuffled[:, j] = shuffled[rng.permutation(matrix.n), j]
            permuted = FeatureMatrix(list(matrix.feature_names), shuffled,
                                     list(matrix.sample_ids), matrix.labels.copy())
            mda[b, j] = base - oob_evaluate(fb, permuted).accuracy

    def se(a: np.ndarray) -> np.ndarray:
        if B < 2:
            return np.zeros(p)
        return a.std(axis=0, ddof=1) / math.sqrt(B)

    return ImportanceReport(list(matrix.feature_names), mda.mean(axis=0), se(mda),
                            mdg.mean(axis=0), se(mdg), B)


def rfe(
    matrix: FeatureMatrix,
    target_count: int = 15,
    drop_fraction: float = 0.2,
    ntree: int = 100,
    mtry: int | None = None,
    seed: int = 0,
    threads: int = 1,
) -> tuple[list[str], list[tuple[int, float]]]:
    """Recursive feature elimination down to exactly ``target_count`` features.

    Each step trains a forest, records (feature count, OOB accuracy), and
    drops the ceil(drop_fraction * current) lowest-Gini features, never
    overshooting the target. Surviving names keep their original order. An
    input already at the target size returns unchanged with an empty trace.
    """
    if target_count < 1:
        raise ValueError(f"target_count must be >= 1, got {target_count}")
    if matrix.p < target_count:
        raise ValueError(f"matrix has {matrix.p} features, fewer than target {target_count}")

    current = matrix
    trace: list[tuple[int, float]] = []
    step = 0
    while current.p > target_count:
        step_mtry = mtry if mtry is not None and mtry <= current.p else None
        forest = train(current, ntree=ntree, mtry=step_mtry,
                       seed=derive_seed(seed, 404, step), threads=threads)
        trace.append((current.p, oob_evaluate(forest, current).accuracy))
        n_drop = min(math.ceil(drop_fraction * current.p), current.p - target_count)
        ranked = sorted(range(current.p), key=lambda j: (forest.gini_importance[j], j))
        dropped = set(ranked[:n_drop])
        keep = [name for j, name in enumerate(current.feature_names) if j not in dropped]
        current = current.select_features(keep)
        step += 1
    return list(current.feature_names), trace


def tune(
    matrix: FeatureMatrix,
    ntree_grid: list[int] | None = None,
    mtry_grid: list[int] | None = None,
    seed: int = 0,
    threads: int = 1,
) -> tuple[int, int, list[tuple[int, int, float]]]:
    """Full-grid OOB error search.

    Returns the (ntree, mtry) minimizing OOB error plus the whole error
    surface; ties prefer smaller ntree, then smaller mtry.
    """
    if ntree_grid is None:
        ntree_grid = list(range(50, 501, 25))
    if mtry_grid is None:
        mtry_grid = list(range(1, 11))
    if not ntree_grid or not mtry_grid:
        raise ValueError("empty tuning grid")
    if max(mtry_grid) > matrix.p:
        raise ValueError(f"mtry grid exceeds feature count {matrix.p}")

    surface: list[tuple[int, int, float]] = []
    best = None
    for nt in sorted(ntree_grid):
        for mt in sorted(mtry_grid):
            forest = train(matrix, ntree=nt, mtry=mt,
                           seed=derive_seed(seed, 505, nt, mt), threads=threads)
            err = 1.0 - oob_evaluate(forest, matrix).accuracy
            surface.append((nt, mt, err))
            if best is None or err < best[2]:
                best = (nt, mt, err)
    assert best is not None
    return best[0], best[1], surface


# --- serialization -----------------------------------------------------------


def save_forest(forest: Forest, path: str | Path) -> None:
    """Serialize to a self-describing JSON document (deterministic bytes)."""
    doc = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "ntree": forest.ntree,
        "mtry": forest.mtry,
        "mtry_exact": forest.mtry_exact,
        "master_seed": forest.master_seed,
        "feature_names": forest.feature_names,
        "classes": [int(c) for c in forest.classes],
        "sample_ids": forest.sample_ids,
        "gini_importance": [float(g) for g in forest.gini_importance],
        "inbag_rows": [[int(i) for i in rows] for rows in forest.inbag_rows],
        "trees": [
            {
                "feature": tree.feature.tolist(),
                "threshold": tree.threshold.tolist(),
                "left": tree.left.tolist(),
                "right": tree.right.tolist(),
                "counts": tree.counts.astype(int).tolist(),
            }
            for tree in forest.trees
        ],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def load_forest(path: str | Path) -> Forest:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"model file not found: {path}")
    doc = json.loads(path.read_text(encoding="utf-8"))
    if doc.get("format") != FORMAT_NAME:
        raise ValueError(f"{path} is not a forest model document")
    trees = []
    for td in doc["trees"]:
        counts = np.array(td["counts"], dtype=np.float64)
        trees.append(Tree(
            feature=np.array(td["feature"], dtype=np.int32),
            threshold=np.array(td["threshold"], dtype=np.float64),
            left=np.array(td["left"], dtype=np.int32),
            right=np.array(td["right"], dtype=np.int32),
            counts=counts,
            node_class=np.argmax(counts, axis=1).astype(np.int32),
        ))
    return Forest(
        trees=trees,
        ntree=int(doc["ntree"]),
        mtry=int(doc["mtry"]),
        mtry_exact=float(doc["mtry_exact"]),
        feature_names=list(doc["feature_names"]),
        classes=np.array(doc["classes"], dtype=np.int64),
        sample_ids=[str(s) for s in doc["sample_ids"]],
        inbag_rows=[np.array(rows, dtype=np.int64) for rows in doc["inbag_rows"]],
        master_seed=int(doc["master_seed"]),
        gini_importance=np.array(doc["gini_importance"], dtype=np.float64),
    )
