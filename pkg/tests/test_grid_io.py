import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from landcover.grid import NODATA, GridSpec, Raster, SceneStack
from landcover.raster_io import TileError, read_raster, read_stack, write_raster, write_stack

from conftest import grid_for, raster_of, scene_of, stack_of


class TestGridSpec:
    def test_rejects_bad_dimensions(self):
        with pytest.raises(ValueError):
            GridSpec(0, 4, 0.0, 0.0, 10.0)
        with pytest.raises(ValueError):
            GridSpec(4, 4, 0.0, 0.0, -1.0)

    def test_compatibility_is_field_equality(self):
        a = grid_for()
        assert a == grid_for()
        assert a != grid_for(cell=5.0)
        assert a != grid_for(crs="other")

    def test_cell_lookup_and_center(self):
        g = grid_for(width=4, height=4, cell=10.0)
        assert g.cell_of(5.0, 5.0) == (0, 0)
        assert g.cell_of(35.0, 25.0) == (2, 3)
        assert g.cell_of(-1.0, 5.0) is None
        assert g.center(0, 0) == (5.0, 5.0)


class TestTileRoundTrip:
    def test_identity_round_trip(self, tmp_path):
        r = raster_of([[1, 2], [3, 4]])
        write_raster(r, tmp_path / "t")
        back = read_raster(tmp_path / "t")
        assert back.grid == r.grid
        np.testing.assert_array_equal(back.values, r.values)

    def test_single_cell_value(self, tmp_path):
        write_raster(raster_of([[7.5]]), tmp_path / "one")
        assert read_raster(tmp_path / "one").values[0, 0] == np.float32(7.5)

    def test_all_nodata_payload(self, tmp_path):
        r = raster_of(np.full((3, 3), NODATA))
        write_raster(r, tmp_path / "nd")
        raw = np.frombuffer((tmp_path / "nd.bin").read_bytes(), dtype="<f4")
        assert (raw == np.float32(NODATA)).all()

    def test_write_read_write_is_byte_identical(self, tmp_path):
        rng = np.random.default_rng(5)
        r = raster_of(rng.normal(size=(64, 64)).astype(np.float32),
                      grid=grid_for(64, 64))
        write_raster(r, tmp_path / "a", timestamp=dt.date(2018, 3, 2),
                     metadata={"k": "v"})
        back = read_raster(tmp_path / "a")
        write_raster(back, tmp_path / "b", timestamp=dt.date(2018, 3, 2),
                     metadata={"k": "v"})
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
        assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2**31 - 1))
    def test_payload_round_trips_any_shape(self, w, h, seed):
        rng = np.random.default_rng(seed)
        values = rng.normal(scale=100, size=(h, w)).astype(np.float32)
        r = Raster(grid_for(width=w, height=h), values)
        import tempfile
        from pathlib import Path

        with tempfile.TemporaryDirectory() as d:
            write_raster(r, Path(d) / "t")
            back = read_raster(Path(d) / "t")
        np.testing.assert_array_equal(back.values, values)


class TestTileErrors:
    def test_dimension_payload_mismatch(self, tmp_path):
        write_raster(raster_of([[1, 2], [3, 4]]), tmp_path / "t")
        header = (tmp_path / "t.json").read_text().replace('"width": 2', '"width": 5')
        (tmp_path / "t.json").write_text(header)
        with pytest.raises(TileError, match="bytes"):
            read_raster(tmp_path / "t")

    def test_malformed_header(self, tmp_path):
        (tmp_path / "bad.json").write_text("{not json")
        (tmp_path / "bad.bin").write_bytes(b"\x00" * 4)
        with pytest.raises(TileError):
            read_raster(tmp_path / "bad")

    def test_missing_fields(self, tmp_path):
        (tmp_path / "bad.json").write_text('{"width": 2}')
        (tmp_path / "bad.bin").write_bytes(b"\x00" * 8)
        with pytest.raises(TileError, match="missing fields"):
            read_raster(tmp_path / "bad")

    def test_unreadable_path(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_raster(tmp_path / "nope")


class TestStackIO:
    def test_round_trip_preserves_scenes(self, tmp_path):
        s1 = scene_of({"b": [[1.0, 2.0], [3.0, 4.0]]}, timestamp=dt.date(2018, 1, 5),
                      metadata={"cloudy_pixel_fraction": "0.25"})
        mask = np.array([[True, False], [True, True]])
        s2 = scene_of({"b": [[5.0, 6.0], [7.0, 8.0]]}, timestamp=dt.date(2018, 2, 5),
                      metadata={"cloudy_pixel_fraction": "0.10"}, mask=mask)
        write_stack(stack_of([s1, s2]), tmp_path / "stk")
        back = read_stack(tmp_path / "stk")
        assert back.sensor == "optical"
        assert [s.timestamp for s in back.scenes] == [dt.date(2018, 1, 5), dt.date(2018, 2, 5)]
        assert back.scenes[0].metadata["cloudy_pixel_fraction"] == "0.25"
        np.testing.assert_array_equal(back.scenes[1].valid_mask, mask)

    def test_timestamps_must_be_ordered(self):
        s1 = scene_of({"b": [[1.0]]}, timestamp=dt.date(2018, 5, 1))
        s2 = scene_of({"b": [[1.0]]}, timestamp=dt.date(2018, 4, 1))
        with pytest.raises(ValueError, match="non-decreasing"):
            SceneStack([s1, s2], "optical")

    def test_scenes_must_share_grid(self):
        s1 = scene_of({"b": [[1.0]]})
        s2 = scene_of({"b": [[1.0, 2.0]]})
        with pytest.raises(ValueError, match="share one grid"):
            SceneStack([s1, s2], "optical")
