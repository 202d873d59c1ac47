import csv
import datetime as dt
import json

import numpy as np
import pytest

from landcover.cli import main
from landcover.config import ConfigError, MissingInputError, validate_config
from landcover.raster_io import read_raster, write_raster, write_stack

from conftest import grid_for, raster_of, scene_of, stack_of


def write_config(tmp_path, **overrides):
    cfg = {"seed": 42, "out_dir": str(tmp_path / "out")}
    cfg.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


class TestValidateConfig:
    def test_minimal_config_resolves_documented_defaults(self, tmp_path):
        cfg = validate_config(write_config(tmp_path))
        assert cfg.optical["cloud_prob_threshold"] == 40.0
        assert cfg.optical["max_cloud_fraction"] == 0.60
        assert cfg.optical["texture_window"] == 6
        assert cfg.radar["window"] == 7
        assert cfg.rf["ntree"] == 100
        assert cfg.rfe["target_count"] == 15
        assert cfg.rank["bootstraps"] == 100
        assert cfg.curve["step"] == 0.05
        assert cfg.tune["ntree_min"] == 50 and cfg.tune["ntree_max"] == 500
        assert cfg.grid_accuracy["min_n"] == 20

    def test_negative_ntree_error_names_field(self, tmp_path):
        path = write_config(tmp_path, rf={"ntree": -5})
        with pytest.raises(ConfigError) as exc:
            validate_config(path)
        assert any("rf.ntree" in e for e in exc.value.errors)

    def test_multiple_errors_all_reported(self, tmp_path):
        path = write_config(tmp_path, rf={"ntree": -5}, radar={"window": 4})
        with pytest.raises(ConfigError) as exc:
            validate_config(path)
        assert len(exc.value.errors) == 2

    def test_seed_is_mandatory(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text("{}")
        with pytest.raises(ConfigError, match="seed"):
            validate_config(path)

    def test_missing_input_path_is_data_error(self, tmp_path):
        path = write_config(tmp_path, inputs={"reference_csv": str(tmp_path / "nope.csv")})
        with pytest.raises(MissingInputError) as exc:
            validate_config(path)
        assert "nope.csv" in exc.value.errors[0]


class TestExitCodes:
    def test_unknown_subcommand_is_usage_error(self, capsys):
        assert main(["frobnicate", "--config", "x"]) == 1

    def test_no_subcommand_is_usage_error(self):
        assert main([]) == 1

    def test_schema_error_exits_one(self, tmp_path, capsys):
        path = write_config(tmp_path, rf={"ntree": -1})
        assert main(["train", "--config", str(path)]) == 1
        assert "rf.ntree" in capsys.readouterr().err

    def test_missing_reference_csv_exits_two_with_path(self, tmp_path, capsys):
        path = write_config(tmp_path,
                            inputs={"reference_csv": str(tmp_path / "missing_ref.csv")})
        assert main(["clean-ref", "--config", str(path)]) == 2
        assert "missing_ref.csv" in capsys.readouterr().err


def build_world(tmp_path):
    """Tiny but complete input set: optical + radar stacks, aux tiles,
    reference points."""
    rng = np.random.default_rng(99)
    grid = grid_for(12, 12, cell=10.0)

    def optical_scene(month, day, cloudy="0.1"):
        bands = {}
        for name in ("blue", "green", "red", "nir", "swir1", "swir2"):
            bands[name] = raster_of(rng.uniform(0.05, 0.9, grid.shape).astype(np.float32),
                                    grid=grid)
        bands["cloud_prob"] = raster_of(np.zeros(grid.shape, dtype=np.float32), grid=grid)
        return scene_of(bands, timestamp=dt.date(2018, month, day),
                        metadata={"cloudy_pixel_fraction": cloudy}, grid=grid)

    optical = stack_of([optical_scene(m, 5) for m in (1, 4, 7, 10)])
    write_stack(optical, tmp_path / "optical")

    def radar_scene(day, mode):
        return scene_of({
            "vv": raster_of(rng.gamma(4, 0.02, grid.shape).astype(np.float32), grid=grid),
            "vh": raster_of(rng.gamma(4, 0.01, grid.shape).astype(np.float32), grid=grid),
        }, timestamp=dt.date(2018, 1, day), metadata={"orbit_mode": mode}, grid=grid)

    radar = stack_of([radar_scene(1, "ASC"), radar_scene(2, "DESC"), radar_scene(3, "ASC"),
                      radar_scene(4, "DESC")], "radar")
    write_stack(radar, tmp_path / "radar")

    aux = {}
    # elevation arrives on a coarse overlapping grid to exercise resampling
    coarse = grid_for(5, 5, cell=60.0, origin=(-90.0, -90.0))
    write_raster(raster_of(rng.uniform(0, 2000, coarse.shape).astype(np.float32),
                           grid=coarse), tmp_path / "aux" / "elevation")
    aux["elevation"] = str(tmp_path / "aux" / "elevation")
    for name in ("precip_mean_10y", "precip_std_10y",
                 "temp_mean_10y", "temp_std_10y", "nightlights"):
        path = tmp_path / "aux" / name
        write_raster(raster_of(rng.uniform(0, 100, grid.shape).astype(np.float32),
                               grid=grid), path)
        aux[name] = str(path)

    letters = {1: "A", 3: "B", 8: "C"}
    with (tmp_path / "ref.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "x", "y", "lc1_code", "source",
                         "parcel_area_class", "cover_percent"])
        i = 0
        for r in range(12):
            for c in range(12):
                if (r + c) % 2:
                    continue
                cid = [1, 3, 8][i % 3]
                x, y = grid.center(r, c)
                writer.writerow([f"pt{i:03d}", x, y, letters[cid] + "11",
                                 "grid_point", "ge_0_5ha", "100"])
                i += 1
    return aux


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Run features -> train once; several tests inspect the artifacts."""
    tmp_path = tmp_path_factory.mktemp("pipeline")
    aux = build_world(tmp_path)
    config = {
        "seed": 7,
        "out_dir": str(tmp_path / "out"),
        "inputs": {
            "optical_stack": str(tmp_path / "optical"),
            "radar_stack": str(tmp_path / "radar"),
            "aux": aux,
            "reference_csv": str(tmp_path / "ref.csv"),
        },
        "rf": {"ntree": 15},
    }
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(config))
    assert main(["features", "--config", str(cfg_path)]) == 0

    train_cfg = dict(config)
    train_cfg["inputs"] = {"matrix_csv": str(tmp_path / "out" / "matrix.csv")}
    train_path = tmp_path / "train.json"
    train_path.write_text(json.dumps(train_cfg))
    assert main(["train", "--config", str(train_path), "--out", str(tmp_path / "model1")]) == 0
    return tmp_path, config


class TestPipeline:
    def test_feature_cube_and_matrix_written(self, pipeline):
        tmp_path, _ = pipeline
        out = tmp_path / "out"
        assert (out / "cube" / "cube.json").exists()
        assert (out / "optical_cube" / "cube.json").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["stage"] == "features"
        assert manifest["outputs"]
        header = (out / "matrix.csv").read_text().splitlines()[0]
        assert header.endswith("label,id")
        # 43 optical + 12 radar + 6 aux feature columns
        assert len(header.split(",")) == 61 + 2

    def test_train_is_deterministic_across_runs(self, pipeline):
        tmp_path, config = pipeline
        train_cfg = dict(config)
        train_cfg["inputs"] = {"matrix_csv": str(tmp_path / "out" / "matrix.csv")}
        path = tmp_path / "train2.json"
        path.write_text(json.dumps(train_cfg))
        assert main(["train", "--config", str(path), "--out", str(tmp_path / "model2")]) == 0
        a = (tmp_path / "model1" / "model.json").read_bytes()
        b = (tmp_path / "model2" / "model.json").read_bytes()
        assert a == b

    def test_predict_over_cube_writes_classified_tile(self, pipeline):
        tmp_path, config = pipeline
        cfg = dict(config)
        cfg["inputs"] = {"model": str(tmp_path / "model1" / "model.json"),
                         "cube": str(tmp_path / "out" / "cube")}
        path = tmp_path / "predict.json"
        path.write_text(json.dumps(cfg))
        assert main(["predict", "--config", str(path), "--out", str(tmp_path / "pred")]) == 0
        classified = read_raster(tmp_path / "pred" / "classified")
        vals = classified.values[classified.values != np.float32(-9999.0)]
        assert set(np.unique(vals)).issubset({1.0, 3.0, 8.0})

    def test_seed_override_changes_model(self, pipeline):
        tmp_path, config = pipeline
        cfg = dict(config)
        cfg["inputs"] = {"matrix_csv": str(tmp_path / "out" / "matrix.csv")}
        path = tmp_path / "train3.json"
        path.write_text(json.dumps(cfg))
        assert main(["train", "--config", str(path), "--out", str(tmp_path / "model3"),
                     "--seed", "8"]) == 0
        a = (tmp_path / "model1" / "model.json").read_bytes()
        b = (tmp_path / "model3" / "model.json").read_bytes()
        assert a != b


class TestAssessStage:
    def test_error_matrix_report(self, tmp_path, error_matrix_csv, capsys):
        path = write_config(tmp_path, inputs={"confusion_csv": str(error_matrix_csv)})
        assert main(["assess", "--config", str(path)]) == 0
        rows = list(csv.DictReader((tmp_path / "out" / "accuracy.csv").open()))
        overall = [r for r in rows if r["class"] == "overall"][0]
        assert float(overall["ua_pct"]) == pytest.approx(62966 / 69847 * 100, abs=1e-6)
        artificial = [r for r in rows if r["class"] == "1"][0]
        assert float(artificial["ua_pct"]) == pytest.approx(96.1, abs=0.05)
        assert float(artificial["ua_se"]) == pytest.approx(0.4, abs=0.05)

    def test_sample_based_assess_and_grid(self, tmp_path):
        rng = np.random.default_rng(12)
        samples = tmp_path / "samples.csv"
        with samples.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x", "y", "pred", "ref"])
            for _ in range(300):
                ref = int(rng.integers(1, 4))
                pred = ref if rng.random() < 0.9 else int(1 + (ref % 3))
                writer.writerow([rng.uniform(0, 200), rng.uniform(0, 200), pred, ref])
        path = write_config(tmp_path, inputs={"samples_csv": str(samples)},
                            grid_accuracy={"cell_size": 100.0, "min_n": 10})
        assert main(["assess", "--config", str(path)]) == 0
        assert (tmp_path / "out" / "confusion.csv").exists()
        assert main(["grid-acc", "--config", str(path)]) == 0
        assert (tmp_path / "out" / "grid_histogram.png").exists()
        cells = list(csv.DictReader((tmp_path / "out" / "grid_cells.csv").open()))
        assert len(cells) == 4


class TestRankAndBiasCorrect:
    def test_rank_tolerates_dropped_rows_then_bias_corrects(self, tmp_path):
        from landcover import synthetic
        from landcover.features import write_matrix_csv
        from landcover.reference import read_reference_csv, write_reference_csv

        m = synthetic.make_cluster_benchmark(n=160, n_classes=4, n_features=6, seed=3)
        write_matrix_csv(m, tmp_path / "m.csv")
        points = synthetic.reference_points_for(m)
        # one extra survey point that has no matrix row (as if extraction
        # dropped it over nodata)
        from landcover.reference import ReferencePoint
        points.append(ReferencePoint(id="orphan", x=-1.0, y=-1.0, lc1_code="A11"))
        write_reference_csv(points, tmp_path / "pts.csv")

        cfg = {"seed": 5, "out_dir": str(tmp_path / "out"),
               "rf": {"ntree": 10}, "rank": {"bootstraps": 2},
               "inputs": {"reference_csv": str(tmp_path / "pts.csv"),
                          "matrix_csv": str(tmp_path / "m.csv")}}
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg))
        assert main(["rank", "--config", str(path)]) == 0
        ranked = read_reference_csv(tmp_path / "out" / "ranked.csv")
        assert len(ranked) == 160
        assert all(0.0 <= r.vote_fraction <= 1.0 for r in ranked)

        polygons = [("poly%d" % i, 5.0, 5.0, "B00", "polygon_centroid", "unknown", "")
                    for i in range(40)]
        with (tmp_path / "polys.csv").open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", "x", "y", "lc1_code", "source",
                             "parcel_area_class", "cover_percent"])
            writer.writerows(polygons)
        (tmp_path / "target.json").write_text(json.dumps({"1": 0.25, "3": 0.5,
                                                          "4": 0.125, "5": 0.125}))
        cfg["inputs"] = {"polygons_csv": str(tmp_path / "polys.csv"),
                         "ranked_csv": str(tmp_path / "out" / "ranked.csv"),
                         "target_proportions": str(tmp_path / "target.json")}
        path.write_text(json.dumps(cfg))
        assert main(["bias-correct", "--config", str(path)]) == 0
        combined = read_reference_csv(tmp_path / "out" / "combined.csv")
        assert len(combined) > 40
        assert (tmp_path / "out" / "proportions.csv").exists()

    def test_rfe_with_final_importance_report(self, tmp_path):
        from landcover import synthetic
        from landcover.features import write_matrix_csv

        m = synthetic.make_cluster_benchmark(n=200, n_features=10, seed=4)
        write_matrix_csv(m, tmp_path / "m.csv")
        cfg = {"seed": 2, "out_dir": str(tmp_path / "out"), "rf": {"ntree": 10},
               "rfe": {"target_count": 8, "drop_fraction": 0.2,
                       "importance_bootstraps": 2},
               "inputs": {"matrix_csv": str(tmp_path / "m.csv")}}
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg))
        assert main(["rfe", "--config", str(path)]) == 0
        assert (tmp_path / "out" / "importance.csv").exists()
        assert (tmp_path / "out" / "importance.png").exists()
        rows = list(csv.DictReader((tmp_path / "out" / "importance.csv").open()))
        assert len(rows) == 8


class TestReportingStages:
    def test_curve_rfe_tune_ablate_reclass_area(self, tmp_path):
        from landcover import synthetic
        from landcover.features import write_matrix_csv

        m = synthetic.make_cluster_benchmark(n=240, n_features=16, seed=5)
        write_matrix_csv(m, tmp_path / "m.csv")
        sub = synthetic.sensor_subset
        dual = synthetic.make_dual_sensor_benchmark(n=320)
        write_matrix_csv(dual, tmp_path / "dual.csv")
        write_matrix_csv(sub(dual, "s1_"), tmp_path / "dual_s1.csv")
        write_matrix_csv(sub(dual, "s2_"), tmp_path / "dual_s2.csv")

        base = {
            "seed": 3,
            "rf": {"ntree": 10},
            "curve": {"step": 0.5, "bootstraps": 2},
            "rfe": {"target_count": 14, "drop_fraction": 0.2},
            "tune": {"ntree_min": 10, "ntree_max": 20, "ntree_step": 10,
                     "mtry_min": 2, "mtry_max": 3},
            "inputs": {"matrix_csv": str(tmp_path / "m.csv")},
            "ablate": [
                {"question": "Q3", "name": "s1s2", "matrix": str(tmp_path / "dual.csv")},
                {"question": "Q3", "name": "s2", "matrix": str(tmp_path / "dual_s2.csv")},
                {"question": "Q3", "name": "s1", "matrix": str(tmp_path / "dual_s1.csv")},
                {"question": "Q6", "name": "size", "matrix": str(tmp_path / "m.csv"),
                 "fractions": True, "step": 0.5, "bootstraps": 2},
            ],
            "out_dir": str(tmp_path / "out"),
        }
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps(base))

        for stage, artifacts in [
            ("curve", ["curve.csv", "curve.png"]),
            ("rfe", ["rfe_trace.csv", "rfe_trace.png", "matrix_selected.csv"]),
            ("tune", ["tune_surface.csv", "tune_surface.png", "tune_best.json"]),
            ("ablate", ["ablation.csv", "ablation.png", "ablation_size_curve.csv"]),
        ]:
            assert main([stage, "--config", str(cfg)]) == 0, stage
            for name in artifacts:
                assert (tmp_path / "out" / name).exists(), (stage, name)

        sel = (tmp_path / "out" / "matrix_selected.csv").read_text().splitlines()[0]
        assert len(sel.split(",")) == 14 + 2

        # reclass + area-stats on small rasters
        grid = grid_for(6, 6, cell=10.0)
        class_map = raster_of(np.where(np.arange(36).reshape(6, 6) < 18, 10.0, 20.0)
                              .astype(np.float32), grid=grid)
        units = raster_of((np.arange(36).reshape(6, 6) % 2).astype(np.float32), grid=grid)
        write_raster(class_map, tmp_path / "map")
        write_raster(units, tmp_path / "units")
        (tmp_path / "table.json").write_text(json.dumps(
            {"legend": {"10": "Peatbogs", "20": "Water bodies"}, "product": "s2glc"}))
        points = tmp_path / "pts.csv"
        with points.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x", "y", "class"])
            for r in range(6):
                for c in range(6):
                    x, y = grid.center(r, c)
                    writer.writerow([x, y, 7 if r < 3 else 6])
        base["inputs"] = {"map": str(tmp_path / "map.json"), "units": str(tmp_path / "units.json"),
                          "reclass_table": str(tmp_path / "table.json"),
                          "points_csv": str(points)}
        cfg.write_text(json.dumps(base))
        assert main(["reclass", "--config", str(cfg)]) == 0
        reclassified = read_raster(tmp_path / "out" / "reclassified")
        assert set(np.unique(reclassified.values)) == {6.0, 7.0}

        write_raster(reclassified, tmp_path / "reclassified")
        base["inputs"]["map"] = str(tmp_path / "reclassified.json")
        cfg.write_text(json.dumps(base))
        assert main(["area-stats", "--config", str(cfg)]) == 0
        assert (tmp_path / "out" / "area_stats.png").exists()
