"""Optical preprocessing and spectro-temporal feature derivation.

Works on stacks whose scenes carry the reflectance bands blue, green, red,
nir, swir1, swir2 plus a ``cloud_prob`` band holding a cloud probability in
percent. Band names follow the tile-manifest convention (for Sentinel-2 style
inputs: nir=B8, swir1=B11, swir2=B12, green=B3, red=B4); the engine itself
only sees the names.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .features import FeatureCube
from .grid import Raster, SceneStack, TimedScene
from .reducers import moment_reduce, moving_window_std, percentile_reduce

log = logging.getLogger(__name__)

REFLECTANCE_BANDS = ("blue", "green", "red", "nir", "swir1", "swir2")
CLOUD_PROB_BAND = "cloud_prob"

# numerator band, denominator band of (a - b) / (a + b)
INDEX_FORMULAS = {
    "NDVI": ("nir", "red"),
    "NBR": ("nir", "swir2"),
    "NDBI": ("swir1", "nir"),
    "NDSI": ("green", "swir1"),
}

SEASON_MONTHS = {
    "summer": (6, 7, 8),
    "winter": (12, 1, 2),
    "spring": (3, 4, 5),
    "fall": (9, 10, 11),
}


def scene_cloud_filter(stack: SceneStack, max_fraction: float = 0.60) -> SceneStack:
    """Drop scenes whose scene-level cloudy fraction is not strictly below
    ``max_fraction``. Scenes without the metadata key are rejected with a
    warning."""
    kept = []
    rejected = 0
    for scene in stack.scenes:
        raw = scene.metadata.get("cloudy_pixel_fraction")
        if raw is None:
            rejected += 1
            log.warning("scene %s lacks cloudy_pixel_fraction metadata, rejected", scene.timestamp)
            continue
        if float(raw) < max_fraction:
            kept.append(scene)
    if rejected:
        log.warning("%d scene(s) rejected for missing cloud metadata", rejected)
    return stack.subset(kept)


def mask_clouds(scene: TimedScene, threshold: float = 40.0) -> TimedScene:
    """Clear the validity mask wherever cloud probability reaches the
    threshold (in percent). Band values are left untouched."""
    if CLOUD_PROB_BAND not in scene.bands:
        raise ValueError(f"scene {scene.timestamp} has no {CLOUD_PROB_BAND!r} band")
    prob = scene.bands[CLOUD_PROB_BAND]
    cloudy = prob.valid() & (prob.values >= np.float32(threshold))
    return scene.with_mask(scene.valid_mask & ~cloudy)


def spectral_index(scene: TimedScene, index: str) -> Raster:
    """Normalized-difference index for one scene; nodata where either input
    is invalid or the denominator is zero."""
    if index not in INDEX_FORMULAS:
        raise ValueError(f"unknown index {index!r}, expected one of {sorted(INDEX_FORMULAS)}")
    a_name, b_name = INDEX_FORMULAS[index]
    for name in (a_name, b_name):
        if name not in scene.bands:
            raise ValueError(f"scene {scene.timestamp} lacks band {name!r} for {index}")
    a = scene.band_values64(a_name)
    b = scene.band_values64(b_name)
    denom = a + b
    with np.errstate(invalid="ignore", divide="ignore"):
        out = (a - b) / denom
    out[denom == 0] = np.nan
    return Raster.from_float64(scene.grid, out)


def _index_stack(stack: SceneStack, index: str) -> SceneStack:
    scenes = []
    for scene in stack.scenes:
        layer = spectral_index(scene, index)
        scenes.append(TimedScene(scene.grid, scene.timestamp, {index: layer},
                                 scene.valid_mask, scene.metadata))
    return SceneStack(scenes, stack.sensor)


def seasonal_median(stack: SceneStack, index: str, season: str) -> Raster:
    """Median of a spectral index over the scenes falling in one season.

    Seasons partition the year by month (winter spans the year boundary).
    An empty season yields an all-nodata raster.
    """
    if season not in SEASON_MONTHS:
        raise ValueError(f"unknown season {season!r}")
    months = SEASON_MONTHS[season]
    keep = [s for s in stack.scenes if s.timestamp.month in months]
    if not keep:
        return Raster.from_float64(stack.grid, np.full(stack.grid.shape, np.nan))
    sub = _index_stack(stack.subset(keep), index)
    return moment_reduce(sub, index, "median")


@dataclass
class OpticalConfig:
    """Layer selection for :func:`optical_feature_set`."""

    indices: tuple[str, ...] = ("NDVI", "NBR", "NDBI", "NDSI")
    percentiles: tuple[int, ...] = (5, 25, 50, 75, 95)
    moments: tuple[str, ...] = ("std", "kurtosis", "skewness")
    band_medians: bool = True
    seasonal_ndvi: bool = True
    texture_window: int = 6
    texture: bool = True


_MOMENT_SUFFIX = {"std": "std", "kurtosis": "kurt", "skewness": "skew"}


def optical_feature_set(stack: SceneStack, config: OpticalConfig | None = None) -> FeatureCube:
    """Full optical feature cube: per-band temporal medians, per-index
    percentile and moment mosaics, seasonal NDVI medians, and the moving
    window texture of the NDVI median.

    The stack is expected to be scene-filtered and cloud-masked already.
    With the default configuration this yields 43 layers.
    """
    cfg = config or OpticalConfig()
    layers: dict[str, Raster] = {}

    if cfg.band_medians:
        for band in REFLECTANCE_BANDS:
            layers[f"{band}_med"] = moment_reduce(stack, band, "median")

    ndvi_median: Raster | None = None
    for index in cfg.indices:
        sub = _index_stack(stack, index)
        key = index.lower()
        for pct in cfg.percentiles:
            layers[f"{key}_p{pct:02d}"] = percentile_reduce(sub, index, pct / 100.0)
        for stat in cfg.moments:
            layers[f"{key}_{_MOMENT_SUFFIX[stat]}"] = moment_reduce(sub, index, stat)
        if index == "NDVI":
            ndvi_median = moment_reduce(sub, index, "median")

    if "NDVI" in cfg.indices:
        if cfg.seasonal_ndvi:
            for season in ("summer", "winter", "spring", "fall"):
                layers[f"ndvi_med_{season}"] = seasonal_median(stack, "NDVI", season)
        if cfg.texture:
            assert ndvi_median is not None
            layers["ndvi_texture"] = moving_window_std(ndvi_median, cfg.texture_window)

    provenance = {name: "optical" for name in layers}
    return FeatureCube(grid=stack.grid, layers=layers, provenance=provenance)
