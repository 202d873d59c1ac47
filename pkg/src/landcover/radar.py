"""Radar preprocessing: sigma speckle filtering and per-orbit-mode mosaics.

Scenes carry co- and cross-polarized backscatter bands ``vv`` and ``vh`` in
linear power plus an ``orbit_mode`` metadata entry (ASC or DESC). The speckle
filter is the classic sigma-selection form: average the window neighbours
whose intensity falls inside a noise-scaled band around the window mean, and
fall back to the window median when too few qualify.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .features import FeatureCube
from .grid import Raster, SceneStack, TimedScene
from .reducers import moment_reduce

log = logging.getLogger(__name__)

RADAR_BANDS = ("vv", "vh")
ORBIT_MODES = ("ASC", "DESC")
RATIO_BAND = "vvvh"


@dataclass(frozen=True)
class SigmaFilterConfig:
    window: int = 7
    enl: float = 4.0
    k_sigma: float = 2.0
    min_selected: int = 3

    def __post_init__(self) -> None:
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError(f"window must be odd and >= 3, got {self.window}")
        if self.enl <= 0:
            raise ValueError(f"enl must be positive, got {self.enl}")
        if self.k_sigma <= 0:
            raise ValueError(f"k_sigma must be positive, got {self.k_sigma}")


def _sigma_filter_band(vals: np.ndarray, cfg: SigmaFilterConfig) -> np.ndarray:
    """Filter one float64 band (NaN = invalid); NaN cells pass through."""
    h, w = vals.shape
    half = cfg.window // 2
    padded = np.pad(vals, half, mode="constant", constant_values=np.nan)
    win = np.lib.stride_tricks.sliding_window_view(padded, (cfg.window, cfg.window))
    win = win.reshape(h, w, -1)

    valid = np.isfinite(win)
    cnt = valid.sum(axis=2)
    with np.errstate(invalid="ignore"):
        m = np.nansum(win, axis=2) / cnt
    sigma_n = 1.0 / np.sqrt(cfg.enl)
    lo = m * (1.0 - cfg.k_sigma * sigma_n)
    hi = m * (1.0 + cfg.k_sigma * sigma_n)
    selected = valid & (win >= lo[..., None]) & (win <= hi[..., None])
    nsel = selected.sum(axis=2)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_sel = np.where(selected, win, 0.0).sum(axis=2) / nsel
        # guard the mean against summation rounding so it stays inside the
        # selected range (and constant windows come back bit-exact)
        sel_min = np.where(selected, win, np.inf).min(axis=2)
        sel_max = np.where(selected, win, -np.inf).max(axis=2)
        mean_sel = np.clip(mean_sel, sel_min, sel_max)

    out = mean_sel
    fallback = nsel < cfg.min_selected
    if fallback.any():
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            med = np.nanmedian(np.where(valid, win, np.nan), axis=2)
        out = np.where(fallback, med, out)
    out = np.where(np.isfinite(vals), out, np.nan)
    return out


def sigma_filter(scene: TimedScene, cfg: SigmaFilterConfig | None = None) -> TimedScene:
    """Speckle-filter the radar bands of one scene.

    Per cell: take the mean m of the valid window neighbours, keep neighbours
    within [m (1 - k sigma_n), m (1 + k sigma_n)] with sigma_n = 1 / sqrt(enl),
    and output their mean; if fewer than ``min_selected`` qualify, output the
    window median instead. Invalid cells stay invalid.
    """
    cfg = cfg or SigmaFilterConfig()
    bands: dict[str, Raster] = {}
    for name, band in scene.bands.items():
        if name in RADAR_BANDS:
            vals = band.astype64()
            vals[~scene.valid_mask] = np.nan
            bands[name] = Raster.from_float64(scene.grid, _sigma_filter_band(vals, cfg))
        else:
            bands[name] = band
    return TimedScene(scene.grid, scene.timestamp, bands, scene.valid_mask, dict(scene.metadata))


def _ratio_scene(scene: TimedScene) -> TimedScene:
    vv = scene.band_values64("vv")
    vh = scene.band_values64("vh")
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = vv / vh
    ratio[vh == 0] = np.nan
    bands = dict(scene.bands)
    bands[RATIO_BAND] = Raster.from_float64(scene.grid, ratio)
    return TimedScene(scene.grid, scene.timestamp, bands, scene.valid_mask, dict(scene.metadata))


def radar_feature_set(
    stack: SceneStack,
    cfg: SigmaFilterConfig | None = None,
    speckle: bool = True,
) -> FeatureCube:
    """Median and standard-deviation mosaics of vv, vh, and their per-scene
    ratio, grouped by orbit mode (up to 12 layers).

    When only one orbit mode is present, the missing mode's layers are
    emitted as copies of the present mode's and flagged in the cube so the
    feature matrix stays rectangular.
    """
    if not stack.scenes:
        raise ValueError("radar_feature_set needs at least one scene")
    cfg = cfg or SigmaFilterConfig()

    by_mode: dict[str, list[TimedScene]] = {mode: [] for mode in ORBIT_MODES}
    for scene in stack.scenes:
        mode = scene.metadata.get("orbit_mode")
        if mode not in ORBIT_MODES:
            raise ValueError(f"scene {scene.timestamp} has invalid orbit_mode {mode!r}")
        for band in RADAR_BANDS:
            vals = scene.band_values64(band)
            if np.isfinite(vals).any() and np.nanmin(vals) < 0:
                raise ValueError(
                    f"scene {scene.timestamp} band {band!r} holds negative backscatter; "
                    "inputs must be linear power"
                )
        if speckle:
            scene = sigma_filter(scene, cfg)
        by_mode[mode].append(_ratio_scene(scene))

    layers: dict[str, Raster] = {}
    flags: dict[str, str] = {}
    present = [m for m in ORBIT_MODES if by_mode[m]]
    for mode in ORBIT_MODES:
        source_mode = mode if by_mode[mode] else present[0]
        sub = SceneStack(by_mode[source_mode], stack.sensor)
        for band in ("vv", "vh", RATIO_BAND):
            for stat, suffix in (("median", "med"), ("std", "std")):
                name = f"{mode.lower()}_{band}_{suffix}"
                layers[name] = moment_reduce(sub, band, stat)
                if source_mode != mode:
                    flags[name] = f"copied_from_{source_mode.lower()}"
    if flags:
        log.warning("orbit mode missing, %d layer(s) copied from the present mode", len(flags))

    provenance = {name: "radar" for name in layers}
    return FeatureCube(grid=stack.grid, layers=layers, provenance=provenance, flags=flags)
