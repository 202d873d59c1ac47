"""Command-line pipeline orchestration.

Every stage is a subcommand driven by one JSON config (see ``config.py``);
stages communicate only through files, so any slice of the workflow can be
re-run in isolation. All randomness derives from the config seed, and each
run ends by writing a manifest with input/output digests and timings.

Exit codes: 0 success, 1 usage or config-schema error, 2 data error
(missing or malformed inputs).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, assessment, plots, reports
from . import forest as rf
from .config import ConfigError, MissingInputError, RunConfig, validate_config
from .features import (
    AuxLayerSet,
    assemble,
    read_matrix_csv,
    sample_at,
    write_matrix_csv,
)
from .grid import Raster
from .optical import OpticalConfig, mask_clouds, optical_feature_set, scene_cloud_filter
from .radar import SigmaFilterConfig, radar_feature_set
from .raster_io import TileError, read_cube, read_raster, read_stack, write_cube, write_raster
from .reducers import resample_to
from .reference import (
    bias_correct,
    metadata_filter,
    outlier_rank,
    read_reference_csv,
    read_target_proportions,
    write_reference_csv,
)

log = logging.getLogger("landcover")

SUBCOMMANDS = (
    "features", "clean-ref", "rank", "bias-correct", "train", "tune", "rfe",
    "predict", "assess", "grid-acc", "area-stats", "curve", "reclass", "ablate",
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); we reserve 2 for data errors
        raise UsageError(message)


class StageRun:
    """Collects input/output digests and writes the run manifest."""

    def __init__(self, stage: str, cfg: RunConfig, out_dir: Path):
        self.stage = stage
        self.cfg = cfg
        self.out_dir = out_dir
        self.inputs: dict[str, str] = {}
        self.outputs: dict[str, str] = {}
        self.started = time.time()

    @staticmethod
    def _digest(path: Path) -> str:
        h = hashlib.sha256()
        if path.is_dir():
            for child in sorted(path.rglob("*")):
                if child.is_file():
                    h.update(child.name.encode())
                    h.update(child.read_bytes())
        else:
            h.update(path.read_bytes())
        return h.hexdigest()

    def record_input(self, path: str | Path) -> Path:
        path = Path(path)
        self.inputs[str(path)] = self._digest(path)
        return path

    def record_output(self, path: str | Path) -> Path:
        path = Path(path)
        self.outputs[str(path)] = self._digest(path)
        return path

    def finish(self) -> None:
        manifest = {
            "stage": self.stage,
            "version": __version__,
            "config": self.cfg.raw,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "duration_s": round(time.time() - self.started, 3),
        }
        target = self.out_dir / "manifest.json"
        tmp = target.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")
        tmp.replace(target)
        log.info("stage %s finished in %.1fs, manifest at %s",
                 self.stage, manifest["duration_s"], target)


def _read_points_csv(path: Path, want_label: bool) -> list[tuple]:
    """(x, y[, class]) rows for area statistics or extraction."""
    import csv

    rows = []
    with path.open("r", newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        fields = set(reader.fieldnames or [])
        needed = {"x", "y"} | ({"class"} if want_label else set())
        if not needed.issubset(fields):
            raise ValueError(f"{path}: needs columns {sorted(needed)}")
        for rec in reader:
            if want_label:
                rows.append((float(rec["x"]), float(rec["y"]), int(rec["class"])))
            else:
                rows.append((float(rec["x"]), float(rec["y"])))
    return rows


def _read_samples_csv(path: Path) -> list[tuple[float, float, int, int]]:
    import csv

    rows = []
    with path.open("r", newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        fields = set(reader.fieldnames or [])
        if not {"x", "y", "pred", "ref"}.issubset(fields):
            raise ValueError(f"{path}: needs columns x, y, pred, ref")
        for rec in reader:
            rows.append((float(rec["x"]), float(rec["y"]), int(rec["pred"]), int(rec["ref"])))
    return rows


# --- stage implementations ----------------------------------------------------


def _stage_features(cfg: RunConfig, run: StageRun) -> None:
    cubes = {}
    if "optical_stack" in cfg.inputs:
        stack = read_stack(run.record_input(cfg.input_path("optical_stack")))
        stack = scene_cloud_filter(stack, cfg.optical["max_cloud_fraction"])
        stack = stack.subset([mask_clouds(s, cfg.optical["cloud_prob_threshold"])
                              for s in stack.scenes])
        ocfg = OpticalConfig(indices=tuple(cfg.optical["indices"]),
                             texture_window=int(cfg.optical["texture_window"]))
        cubes["optical"] = optical_feature_set(stack, ocfg)
    if "radar_stack" in cfg.inputs:
        stack = read_stack(run.record_input(cfg.input_path("radar_stack")))
        scfg = SigmaFilterConfig(window=cfg.radar["window"], enl=cfg.radar["enl"],
                                 k_sigma=cfg.radar["k_sigma"],
                                 min_selected=cfg.radar["min_selected"])
        cubes["radar"] = radar_feature_set(stack, scfg, speckle=bool(cfg.radar["speckle"]))
    aux = None
    if isinstance(cfg.inputs.get("aux"), dict):
        grid = next(iter(cubes.values())).grid if cubes else None
        tiles = {}
        for name, path in cfg.inputs["aux"].items():
            tile = read_raster(run.record_input(Path(path).with_suffix(".json")))
            if grid is not None and tile.grid != grid:
                log.info("resampling aux layer %s onto the analysis grid", name)
                tile = resample_to(tile, grid, "bilinear")
            tiles[name] = tile
        aux = AuxLayerSet(**tiles)
    if not cubes and aux is None:
        raise MissingInputError(["features stage needs optical_stack, radar_stack, or aux inputs"])

    for name, cube in cubes.items():
        out = run.out_dir / f"{name}_cube"
        write_cube(cube, out)
        run.record_output(out)
    merged = assemble(cubes.get("optical"), cubes.get("radar"), aux, cfg.assemble_mode)
    out = run.out_dir / "cube"
    write_cube(merged, out)
    run.record_output(out)

    if "reference_csv" in cfg.inputs:
        points = read_reference_csv(run.record_input(cfg.input_path("reference_csv")))
        tuples = [(p.x, p.y, p.toplevel, p.id) for p in points]
        # sample the cube as persisted so training rows match the exact
        # (float32-quantized) values later prediction will read back
        matrix = sample_at(read_cube(out), tuples)
        out = run.out_dir / "matrix.csv"
        write_matrix_csv(matrix, out)
        run.record_output(out)
        log.info("extracted %d rows (%d dropped)", matrix.n, len(matrix.dropped_ids))


def _stage_clean_ref(cfg: RunConfig, run: StageRun) -> None:
    points = read_reference_csv(run.record_input(cfg.input_path("reference_csv")))
    kept, rejected = metadata_filter(points)
    write_reference_csv(kept, run.out_dir / "kept.csv")
    run.record_output(run.out_dir / "kept.csv")
    import csv

    with (run.out_dir / "rejected.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "lc1_code", "reason"])
        for point, reason in rejected:
            writer.writerow([point.id, point.lc1_code, reason])
    run.record_output(run.out_dir / "rejected.csv")
    log.info("kept %d points, rejected %d", len(kept), len(rejected))


def _stage_rank(cfg: RunConfig, run: StageRun) -> None:
    points = read_reference_csv(run.record_input(cfg.input_path("reference_csv")))
    matrix = read_matrix_csv(run.record_input(cfg.input_path("matrix_csv")))
    # the extraction stage may have dropped nodata rows; rank what survived
    matrix_ids = set(matrix.sample_ids)
    aligned = [p for p in points if p.id in matrix_ids]
    if len(aligned) < len(points):
        log.info("rank: %d of %d points have no matrix row, skipped",
                 len(points) - len(aligned), len(points))
    ranked = outlier_rank(aligned, matrix, bootstraps=int(cfg.rank["bootstraps"]),
                          ntree=int(cfg.rf["ntree"]), mtry=cfg.rf.get("mtry"),
                          seed=cfg.rf_seed(), threads=cfg.threads)
    out = run.out_dir / "ranked.csv"
    write_reference_csv(ranked, out)
    run.record_output(out)


def _stage_bias_correct(cfg: RunConfig, run: StageRun) -> None:
    polygons = read_reference_csv(run.record_input(cfg.input_path("polygons_csv")))
    ranked = read_reference_csv(run.record_input(cfg.input_path("ranked_csv")))
    target = read_target_proportions(run.record_input(cfg.input_path("target_proportions")))
    result = bias_correct(polygons, ranked, target)
    write_reference_csv(result.combined, run.out_dir / "combined.csv")
    run.record_output(run.out_dir / "combined.csv")
    reports.write_ranked_proportions_csv(result.realized_proportions, result.added_per_class,
                                         target, run.out_dir / "proportions.csv")
    run.record_output(run.out_dir / "proportions.csv")
    log.info("target total %d, combined sample %d", result.target_total, len(result.combined))


def _stage_train(cfg: RunConfig, run: StageRun) -> None:
    matrix = read_matrix_csv(run.record_input(cfg.input_path("matrix_csv")))
    forest = rf.train(matrix, ntree=int(cfg.rf["ntree"]), mtry=cfg.rf.get("mtry"),
                      seed=cfg.rf_seed(), threads=cfg.threads)
    out = run.out_dir / "model.json"
    rf.save_forest(forest, out)
    run.record_output(out)
    result = rf.oob_evaluate(forest, matrix)
    log.info("trained %d trees (mtry %d, exact sqrt %.2f), OOB accuracy %.4f",
             forest.ntree, forest.mtry, forest.mtry_exact, result.accuracy)


def _stage_tune(cfg: RunConfig, run: StageRun) -> None:
    matrix = read_matrix_csv(run.record_input(cfg.input_path("matrix_csv")))
    t = cfg.tune
    ntree_grid = list(range(int(t["ntree_min"]), int(t["ntree_max"]) + 1, int(t["ntree_step"])))
    mtry_grid = [m for m in range(int(t["mtry_min"]), int(t["mtry_max"]) + 1) if m <= matrix.p]
    best_nt, best_mt, surface = rf.tune(matrix, ntree_grid, mtry_grid,
                                        seed=cfg.rf_seed(), threads=cfg.threads)
    reports.write_tune_csv(surface, (best_nt, best_mt), run.out_dir / "tune_surface.csv")
    run.record_output(run.out_dir / "tune_surface.csv")
    plots.plot_tune_surface(surface, run.out_dir / "tune_surface.png")
    run.record_output(run.out_dir / "tune_surface.png")
    (run.out_dir / "tune_best.json").write_text(
        json.dumps({"ntree": best_nt, "mtry": best_mt}, sort_keys=True) + "\n", encoding="utf-8")
    run.record_output(run.out_dir / "tune_best.json")
    log.info("best ntree=%d mtry=%d", best_nt, best_mt)


def _stage_rfe(cfg: RunConfig, run: StageRun) -> None:
    matrix = read_matrix_csv(run.record_input(cfg.input_path("matrix_csv")))
    selected, trace = rf.rfe(matrix, target_count=int(cfg.rfe["target_count"]),
                             drop_fraction=float(cfg.rfe["drop_fraction"]),
                             ntree=int(cfg.rf["ntree"]), mtry=cfg.rf.get("mtry"),
                             seed=cfg.rf_seed(), threads=cfg.threads)
    reports.write_rfe_csv(selected, trace, run.out_dir / "rfe_trace.csv")
    run.record_output(run.out_dir / "rfe_trace.csv")
    plots.plot_rfe_trace(trace, run.out_dir / "rfe_trace.png")
    run.record_output(run.out_dir / "rfe_trace.png")
    reduced = matrix.select_features(selected)
    write_matrix_csv(reduced, run.out_dir / "matrix_selected.csv")
    run.record_output(run.out_dir / "matrix_selected.csv")
    boots = int(cfg.rfe.get("importance_bootstraps", 0))
    if boots > 0:
        forest = rf.train(reduced, ntree=int(cfg.rf["ntree"]), mtry=cfg.rf.get("mtry"),
                          seed=cfg.rf_seed(), threads=cfg.threads)
        report = rf.importance(forest, reduced, bootstraps=boots)
        reports.write_importance_csv(report, run.out_dir / "importance.csv")
        run.record_output(run.out_dir / "importance.csv")
        plots.plot_importance(report, run.out_dir / "importance.png")
        run.record_output(run.out_dir / "importance.png")


def _stage_predict(cfg: RunConfig, run: StageRun) -> None:
    forest = rf.load_forest(run.record_input(cfg.input_path("model")))
    if "cube" in cfg.inputs:
        cube = read_cube(run.record_input(cfg.input_path("cube")))
        names = cube.layer_names()
        if names != sorted(forest.feature_names):
            missing = set(forest.feature_names) - set(names)
            if missing:
                raise ValueError(f"cube lacks model features: {sorted(missing)}")
        stack = np.stack([cube.layers[n].astype64() for n in forest.feature_names])
        h, w = cube.grid.shape
        flat = stack.reshape(len(forest.feature_names), h * w).T
        ok = ~np.isnan(flat).any(axis=1)
        out_vals = np.full(h * w, np.nan)
        if ok.any():
            pred, _ = rf.predict_matrix(forest, flat[ok])
            out_vals[ok] = pred
        out = run.out_dir / "classified"
        write_raster(Raster.from_float64(cube.grid, out_vals.reshape(h, w)), out)
        run.record_output(out.with_suffix(".json"))
        run.record_output(out.with_suffix(".bin"))
    elif "matrix_csv" in cfg.inputs:
        matrix = read_matrix_csv(run.record_input(cfg.input_path("matrix_csv")))
        ordered = matrix.select_features(forest.feature_names)
        pred, fractions = rf.predict_matrix(forest, ordered.rows)
        import csv

        out = run.out_dir / "predictions.csv"
        with out.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["id", "pred", *(f"vote_{c}" for c in forest.classes)])
            for i, sid in enumerate(matrix.sample_ids):
                writer.writerow([sid, int(pred[i]), *(repr(float(v)) for v in fractions[i])])
        run.record_output(out)
    else:
        raise MissingInputError(["predict needs inputs.cube or inputs.matrix_csv"])


def _stage_assess(cfg: RunConfig, run: StageRun) -> None:
    if "confusion_csv" in cfg.inputs:
        cm = reports.read_confusion_csv(run.record_input(cfg.input_path("confusion_csv")))
    elif "samples_csv" in cfg.inputs:
        samples = _read_samples_csv(run.record_input(cfg.input_path("samples_csv")))
        cm = assessment.confusion([s[2] for s in samples], [s[3] for s in samples])
        reports.write_confusion_csv(cm, run.out_dir / "confusion.csv")
        run.record_output(run.out_dir / "confusion.csv")
    else:
        raise MissingInputError(["assess needs inputs.confusion_csv or inputs.samples_csv"])
    report = assessment.accuracy_report(cm)
    reports.write_accuracy_csv(report, run.out_dir / "accuracy.csv")
    run.record_output(run.out_dir / "accuracy.csv")
    log.info("overall accuracy %.2f%% (SE %.2f)", report.oa, report.oa_se)


def _stage_grid_acc(cfg: RunConfig, run: StageRun) -> None:
    samples = _read_samples_csv(run.record_input(cfg.input_path("samples_csv")))
    cells, (edges, hist) = assessment.grid_accuracy(
        samples, float(cfg.grid_accuracy["cell_size"]), int(cfg.grid_accuracy["min_n"]))
    reports.write_grid_cells_csv(cells, run.out_dir / "grid_cells.csv")
    run.record_output(run.out_dir / "grid_cells.csv")
    reports.write_histogram_csv(edges, hist, run.out_dir / "grid_histogram.csv")
    run.record_output(run.out_dir / "grid_histogram.csv")
    plots.plot_accuracy_histogram(edges, hist, run.out_dir / "grid_histogram.png")
    run.record_output(run.out_dir / "grid_histogram.png")


def _stage_area_stats(cfg: RunConfig, run: StageRun) -> None:
    class_map = read_raster(run.record_input(cfg.input_path("map")))
    units = read_raster(run.record_input(cfg.input_path("units")))
    points = _read_points_csv(run.record_input(cfg.input_path("points_csv")), want_label=True)
    report = assessment.area_stats(class_map, units, points)
    reports.write_area_stats_csv(report, run.out_dir / "area_stats.csv")
    run.record_output(run.out_dir / "area_stats.csv")
    plots.plot_area_stats(report, run.out_dir / "area_stats.png")
    run.record_output(run.out_dir / "area_stats.png")
    log.info("area statistics: R2=%.3f RMSE=%.4f MAE=%.4f", report.r2, report.rmse, report.mae)


def _stage_curve(cfg: RunConfig, run: StageRun) -> None:
    matrix = read_matrix_csv(run.record_input(cfg.input_path("matrix_csv")))
    points = assessment.sample_size_curve(matrix, step=float(cfg.curve["step"]),
                                          bootstraps=int(cfg.curve["bootstraps"]),
                                          ntree=int(cfg.rf["ntree"]), mtry=cfg.rf.get("mtry"),
                                          seed=cfg.rf_seed(), threads=cfg.threads)
    reports.write_curve_csv(points, run.out_dir / "curve.csv")
    run.record_output(run.out_dir / "curve.csv")
    plots.plot_sample_size_curve(points, run.out_dir / "curve.png")
    run.record_output(run.out_dir / "curve.png")


def _stage_reclass(cfg: RunConfig, run: StageRun) -> None:
    class_map = read_raster(run.record_input(cfg.input_path("map")))
    table_doc = json.loads(run.record_input(cfg.input_path("reclass_table")).read_text("utf-8"))
    if "mapping" in table_doc:
        mapping = {str(k): int(v) for k, v in table_doc["mapping"].items()}
    elif "product" in table_doc:
        mapping = assessment.load_standard_mappings()[table_doc["product"]]
    else:
        raise ValueError("reclass table needs a 'mapping' object or a 'product' name")
    legend = {int(k): str(v) for k, v in table_doc["legend"].items()}
    table = assessment.ReclassTable(legend, mapping)
    out = run.out_dir / "reclassified"
    write_raster(assessment.reclassify(class_map, table), out)
    run.record_output(out.with_suffix(".json"))
    run.record_output(out.with_suffix(".bin"))


def _stage_ablate(cfg: RunConfig, run: StageRun) -> None:
    if not cfg.ablate:
        raise MissingInputError(["ablate stage needs an 'ablate' variant list in the config"])
    variants = []
    curve_entries = []
    for entry in cfg.ablate:
        matrix = read_matrix_csv(run.record_input(Path(entry["matrix"])))
        if entry.get("fractions"):
            curve_entries.append((entry, matrix))
        else:
            variants.append((entry["question"], entry["name"], matrix))
    rows = assessment.ablation_run(variants, ntree=int(cfg.rf["ntree"]),
                                   mtry=cfg.rf.get("mtry"), seed=cfg.rf_seed(),
                                   threads=cfg.threads) if variants else []
    reports.write_ablation_csv(rows, run.out_dir / "ablation.csv")
    run.record_output(run.out_dir / "ablation.csv")
    if rows:
        plots.plot_ablation(rows, run.out_dir / "ablation.png")
        run.record_output(run.out_dir / "ablation.png")
    for entry, matrix in curve_entries:
        points = assessment.sample_size_curve(
            matrix, step=float(entry.get("step", cfg.curve["step"])),
            bootstraps=int(entry.get("bootstraps", cfg.curve["bootstraps"])),
            ntree=int(cfg.rf["ntree"]), mtry=cfg.rf.get("mtry"),
            seed=cfg.rf_seed(), threads=cfg.threads)
        out = run.out_dir / f"ablation_{entry['name']}_curve.csv"
        reports.write_curve_csv(points, out)
        run.record_output(out)


_STAGES = {
    "features": _stage_features,
    "clean-ref": _stage_clean_ref,
    "rank": _stage_rank,
    "bias-correct": _stage_bias_correct,
    "train": _stage_train,
    "tune": _stage_tune,
    "rfe": _stage_rfe,
    "predict": _stage_predict,
    "assess": _stage_assess,
    "grid-acc": _stage_grid_acc,
    "area-stats": _stage_area_stats,
    "curve": _stage_curve,
    "reclass": _stage_reclass,
    "ablate": _stage_ablate,
}


def _build_parser() -> _Parser:
    parser = _Parser(prog="landcover",
                     description="Batch land-cover classification pipeline")
    sub = parser.add_subparsers(dest="stage")
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="run configuration JSON")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--threads", type=int, help="worker threads (overrides config)")
        p.add_argument("--seed", type=int, help="master seed (overrides config)")
        p.add_argument("--log-level", default="INFO",
                       choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.stage is None:
        print(f"usage error: expected a subcommand, one of: {', '.join(SUBCOMMANDS)}",
              file=sys.stderr)
        return EXIT_USAGE

    logging.basicConfig(stream=sys.stderr, level=getattr(logging, args.log_level),
                        format="%(asctime)s %(levelname)s %(name)s %(message)s")
    try:
        cfg = validate_config(args.config)
    except ConfigError as exc:
        for err in exc.errors:
            print(f"config error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except MissingInputError as exc:
        for err in exc.errors:
            print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA

    if args.seed is not None:
        cfg.seed = args.seed
        cfg.raw["seed"] = args.seed
    out_dir = Path(args.out or os.environ.get("LANDCOVER_OUT") or cfg.out_dir)
    threads_env = os.environ.get("LANDCOVER_THREADS")
    if args.threads is not None:
        cfg.threads = args.threads
    elif threads_env:
        cfg.threads = int(threads_env)
    cfg.out_dir = out_dir
    out_dir.mkdir(parents=True, exist_ok=True)

    run = StageRun(args.stage, cfg, out_dir)
    try:
        _STAGES[args.stage](cfg, run)
    except MissingInputError as exc:
        for err in exc.errors:
            print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (FileNotFoundError, TileError, ValueError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    run.finish()
    return EXIT_OK


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
