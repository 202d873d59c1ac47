import datetime as dt

import numpy as np
import pytest

from landcover.grid import NODATA
from landcover.radar import SigmaFilterConfig, radar_feature_set, sigma_filter
from landcover.reducers import moment_reduce

from conftest import scene_of, stack_of
from oracles import sigma_oracle

SHAPE = (9, 9)


def radar_scene(vv=0.08, vh=0.02, mode="ASC", day=1, mask=None):
    if np.isscalar(vv):
        vv = np.full(SHAPE, vv, dtype=np.float32)
    if np.isscalar(vh):
        vh = np.full(SHAPE, vh, dtype=np.float32)
    return scene_of({"vv": vv, "vh": vh}, timestamp=dt.date(2018, 1, day),
                    metadata={"orbit_mode": mode}, mask=mask)


class TestSigmaFilterConfig:
    def test_rejects_even_or_tiny_window(self):
        with pytest.raises(ValueError):
            SigmaFilterConfig(window=6)
        with pytest.raises(ValueError):
            SigmaFilterConfig(window=1)
        with pytest.raises(ValueError):
            SigmaFilterConfig(enl=0)


class TestSigmaFilter:
    def test_constant_image_is_identity(self):
        scene = radar_scene(vv=0.125, vh=0.5)
        out = sigma_filter(scene)
        np.testing.assert_array_equal(out.bands["vv"].values, scene.bands["vv"].values)
        np.testing.assert_array_equal(out.bands["vh"].values, scene.bands["vh"].values)

    def test_invalid_cells_pass_through(self):
        vv = np.full(SHAPE, 0.1, dtype=np.float32)
        vv[4, 4] = NODATA
        out = sigma_filter(radar_scene(vv=vv))
        assert out.bands["vv"].values[4, 4] == np.float32(NODATA)
        assert out.bands["vv"].values[0, 0] == np.float32(0.1)

    def test_all_nodata_stays_nodata(self):
        out = sigma_filter(radar_scene(vv=np.full(SHAPE, NODATA, dtype=np.float32)))
        assert (out.bands["vv"].values == np.float32(NODATA)).all()

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_selection_oracle(self, seed):
        rng = np.random.default_rng(seed)
        vv = (rng.gamma(4.0, 0.025, SHAPE)).astype(np.float32)
        vv[rng.random(SHAPE) < 0.1] = NODATA
        scene = radar_scene(vv=vv)
        cfg = SigmaFilterConfig(window=7, enl=4.0, k_sigma=2.0, min_selected=3)
        got = sigma_filter(scene, cfg).bands["vv"].values
        want = sigma_oracle(scene.bands["vv"].astype64(), 7, 4.0, 2.0, 3)
        for r in range(SHAPE[0]):
            for c in range(SHAPE[1]):
                if np.isnan(want[r, c]):
                    assert got[r, c] == np.float32(NODATA)
                else:
                    assert got[r, c] == pytest.approx(want[r, c], abs=1e-6)

    def test_output_within_window_bounds(self):
        rng = np.random.default_rng(8)
        vv = rng.gamma(4.0, 0.025, SHAPE).astype(np.float32)
        out = sigma_filter(radar_scene(vv=vv)).bands["vv"].values
        half = 3
        for r in range(SHAPE[0]):
            for c in range(SHAPE[1]):
                block = vv[max(0, r - half):r + half + 1, max(0, c - half):c + half + 1]
                assert block.min() - 1e-6 <= out[r, c] <= block.max() + 1e-6


class TestRadarFeatureSet:
    def test_single_orbit_copies_other_mode_with_flag(self):
        cube = radar_feature_set(stack_of([radar_scene(mode="ASC")], "radar"), speckle=False)
        assert len(cube) == 12
        np.testing.assert_array_equal(cube.layers["desc_vv_med"].values,
                                      cube.layers["asc_vv_med"].values)
        assert cube.flags["desc_vv_med"] == "copied_from_asc"
        assert "asc_vv_med" not in cube.flags
        # single scene: n < 2 means std is nodata
        assert (cube.layers["asc_vv_std"].values == np.float32(NODATA)).all()

    def test_ratio_nodata_where_vh_zero(self):
        vh = np.full(SHAPE, 0.02, dtype=np.float32)
        vh[3, 3] = 0.0
        stack = stack_of([radar_scene(vh=vh, day=d) for d in (1, 2)], "radar")
        cube = radar_feature_set(stack, speckle=False)
        assert cube.layers["asc_vvvh_med"].values[3, 3] == np.float32(NODATA)
        assert cube.layers["asc_vvvh_med"].values[0, 0] == pytest.approx(0.08 / 0.02, abs=1e-4)

    def test_speckle_toggle_is_identity_on_constant_stack(self):
        stack = lambda: stack_of([radar_scene(day=d) for d in (1, 2, 3)], "radar")
        on = radar_feature_set(stack(), speckle=True)
        off = radar_feature_set(stack(), speckle=False)
        for name in on.layer_names():
            np.testing.assert_array_equal(on.layers[name].values, off.layers[name].values)

    def test_speckle_off_composes_raw_reducers(self):
        rng = np.random.default_rng(17)
        scenes = [radar_scene(vv=rng.gamma(4, 0.02, SHAPE).astype(np.float32), day=d)
                  for d in (1, 2, 3)]
        stack = stack_of(scenes, "radar")
        cube = radar_feature_set(stack, speckle=False)
        want = moment_reduce(stack, "vv", "median")
        np.testing.assert_array_equal(cube.layers["asc_vv_med"].values, want.values)

    def test_orbit_relabel_swaps_layer_names_not_values(self):
        rng = np.random.default_rng(23)
        vvs = [rng.gamma(4, 0.02, SHAPE).astype(np.float32) for _ in range(2)]
        asc = stack_of([radar_scene(vv=v, mode="ASC", day=d + 1) for d, v in enumerate(vvs)],
                       "radar")
        desc = stack_of([radar_scene(vv=v, mode="DESC", day=d + 1) for d, v in enumerate(vvs)],
                        "radar")
        a = radar_feature_set(asc, speckle=False)
        b = radar_feature_set(desc, speckle=False)
        np.testing.assert_array_equal(a.layers["asc_vv_med"].values,
                                      b.layers["desc_vv_med"].values)

    def test_rejects_negative_backscatter(self):
        vv = np.full(SHAPE, 0.1, dtype=np.float32)
        vv[0, 0] = -0.2
        with pytest.raises(ValueError, match="linear power"):
            radar_feature_set(stack_of([radar_scene(vv=vv)], "radar"), speckle=False)

    def test_rejects_missing_orbit_mode(self):
        scene = scene_of({"vv": np.zeros(SHAPE, dtype=np.float32),
                          "vh": np.zeros(SHAPE, dtype=np.float32)})
        with pytest.raises(ValueError, match="orbit_mode"):
            radar_feature_set(stack_of([scene], "radar"))

    def test_empty_stack_rejected(self):
        from landcover.grid import SceneStack
        with pytest.raises(ValueError, match="at least one scene"):
            radar_feature_set(SceneStack([], "radar"))
