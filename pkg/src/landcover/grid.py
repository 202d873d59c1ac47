"""Grid and time-stack data model shared by the optical and radar feature paths.

Conventions used throughout the engine:

* A grid anchors at ``(origin_x, origin_y)`` (the corner of cell ``(0, 0)``)
  and cell ``(row, col)`` covers the half-open square
  ``[origin + index * cell_size, origin + (index + 1) * cell_size)`` in both
  axes. Row index grows with y; no north-up semantics are assumed because
  ``crs_tag`` is opaque.
* Tile payloads are 32-bit floats on disk; in memory rasters are held in
  float64 because the statistical accuracy contract (reducers agree with
  reference computations to 1e-9) is tighter than float32 resolution. A cell
  is a valid observation only when it is finite and different from the nodata
  sentinel; masked or nodata cells never enter any statistic.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field

import numpy as np

NODATA = -9999.0

OPTICAL = "optical"
RADAR = "radar"


@dataclass(frozen=True)
class GridSpec:
    """Regular cell grid. Two grids are compatible only when every field
    compares equal."""

    width: int
    height: int
    origin_x: float
    origin_y: float
    cell_size: float
    crs_tag: str = "local"

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"grid dimensions must be positive, got {self.width}x{self.height}")
        if self.cell_size <= 0:
            raise ValueError(f"cell_size must be positive, got {self.cell_size}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def cell_of(self, x: float, y: float) -> tuple[int, int] | None:
        """Row/col of the cell containing map point (x, y), or None outside."""
        col = int(np.floor((x - self.origin_x) / self.cell_size))
        row = int(np.floor((y - self.origin_y) / self.cell_size))
        if 0 <= row < self.height and 0 <= col < self.width:
            return row, col
        return None

    def center(self, row: int, col: int) -> tuple[float, float]:
        """Map coordinates of a cell center."""
        x = self.origin_x + (col + 0.5) * self.cell_size
        y = self.origin_y + (row + 0.5) * self.cell_size
        return x, y


@dataclass
class Raster:
    """Single-band raster on a :class:`GridSpec`.

    ``values`` is held as float64 in memory (tiles quantize to float32 on
    write); invalid cells carry the nodata sentinel.
    """

    grid: GridSpec
    values: np.ndarray
    nodata: float = NODATA

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != self.grid.shape:
            raise ValueError(
                f"raster shape {self.values.shape} does not match grid {self.grid.shape}"
            )

    def valid(self) -> np.ndarray:
        """Boolean mask of cells holding a real observation."""
        return np.isfinite(self.values) & (self.values != self.nodata)

    def astype64(self) -> np.ndarray:
        """Float64 copy with invalid cells as NaN, for numeric work."""
        out = self.values.astype(np.float64)
        out[~self.valid()] = np.nan
        return out

    @classmethod
    def filled(cls, grid: GridSpec, value: float, nodata: float = NODATA) -> "Raster":
        return cls(grid, np.full(grid.shape, value, dtype=np.float64), nodata)

    @classmethod
    def from_float64(cls, grid: GridSpec, values64: np.ndarray, nodata: float = NODATA) -> "Raster":
        """Wrap a float64 working array, mapping NaN to the nodata sentinel."""
        out = np.asarray(values64, dtype=np.float64).copy()
        out[~np.isfinite(out)] = nodata
        return cls(grid, out, nodata)


@dataclass
class TimedScene:
    """Multi-band acquisition at one timestamp.

    ``valid_mask`` is the per-pixel usability mask (cloud masking clears it);
    ``metadata`` is a flat string table carrying e.g. ``cloudy_pixel_fraction``
    for optical scenes and ``orbit_mode`` (ASC or DESC) for radar scenes.
    """

    grid: GridSpec
    timestamp: dt.date
    bands: dict[str, Raster]
    valid_mask: np.ndarray | None = None
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name, band in self.bands.items():
            if band.grid != self.grid:
                raise ValueError(f"band {name!r} grid differs from scene grid")
        if self.valid_mask is None:
            self.valid_mask = np.ones(self.grid.shape, dtype=bool)
        else:
            self.valid_mask = np.asarray(self.valid_mask, dtype=bool)
            if self.valid_mask.shape != self.grid.shape:
                raise ValueError("valid_mask shape does not match scene grid")

    def band_values64(self, name: str) -> np.ndarray:
        """Band as float64 with NaN wherever masked or nodata."""
        band = self.bands[name]
        out = band.astype64()
        out[~self.valid_mask] = np.nan
        return out

    def with_mask(self, mask: np.ndarray) -> "TimedScene":
        return TimedScene(self.grid, self.timestamp, self.bands, mask, dict(self.metadata))


@dataclass
class SceneStack:
    """Time-ordered list of scenes from one sensor on one grid."""

    scenes: list[TimedScene]
    sensor: str

    def __post_init__(self) -> None:
        if self.sensor not in (OPTICAL, RADAR):
            raise ValueError(f"unknown sensor {self.sensor!r}")
        if self.scenes:
            grid = self.scenes[0].grid
            for scene in self.scenes:
                if scene.grid != grid:
                    raise ValueError("all scenes in a stack must share one grid")
            stamps = [s.timestamp for s in self.scenes]
            if any(b < a for a, b in zip(stamps, stamps[1:])):
                raise ValueError("scene timestamps must be non-decreasing")

    @property
    def grid(self) -> GridSpec:
        if not self.scenes:
            raise ValueError("empty stack has no grid")
        return self.scenes[0].grid

    def band_tensor(self, band: str) -> np.ndarray:
        """(n_scenes, height, width) float64 tensor of one band, NaN where a
        scene lacks the band or the observation is masked/nodata."""
        if not any(band in s.bands for s in self.scenes):
            raise ValueError(f"band {band!r} not present in any scene")
        grid = self.grid
        layers = []
        for scene in self.scenes:
            if band in scene.bands:
                layers.append(scene.band_values64(band))
            else:
                layers.append(np.full(grid.shape, np.nan))
        return np.stack(layers, axis=0)

    def subset(self, keep: list[TimedScene]) -> "SceneStack":
        return SceneStack(keep, self.sensor)
