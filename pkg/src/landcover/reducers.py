"""Generic per-cell time-stack reducers and window statistics.

All reducers operate on the set of valid observations per cell (masked and
nodata values are simply absent), accumulate in float64, and write float32
rasters. They are pure and permutation-invariant in scene order.
"""

from __future__ import annotations

import warnings

import numpy as np

from .grid import GridSpec, Raster, SceneStack

MOMENT_STATS = ("mean", "median", "std", "skewness", "kurtosis")


def percentile_reduce(stack: SceneStack, band: str, p: float) -> Raster:
    """Per-cell percentile at fraction ``p``.

    Uses linear interpolation between order statistics: with n sorted valid
    observations the value sits at 1-based rank h = (n - 1) p + 1. Cells with
    no valid observation come out nodata.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"percentile fraction must be in [0, 1], got {p}")
    obs = stack.band_tensor(band)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        out = np.nanquantile(obs, p, axis=0, method="linear")
    return Raster.from_float64(stack.grid, out)


def moment_reduce(stack: SceneStack, band: str, stat: str) -> Raster:
    """Per-cell temporal moment statistic.

    Population moments (divide by n): std = sqrt(m2), skewness = m3 / m2^1.5,
    kurtosis = m4 / m2^2 - 3 (excess). std needs n >= 2; skewness and kurtosis
    need n >= 4 and m2 > 0; anything short of that is nodata.
    """
    if stat not in MOMENT_STATS:
        raise ValueError(f"unknown stat {stat!r}, expected one of {MOMENT_STATS}")
    # sort each cell's series so accumulation order (and with it the exact
    # float result) cannot depend on scene order; NaN sorts to the end
    obs = np.sort(stack.band_tensor(band), axis=0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        if stat == "median":
            out = np.nanquantile(obs, 0.5, axis=0, method="linear")
            return Raster.from_float64(stack.grid, out)
        n = np.sum(~np.isnan(obs), axis=0).astype(np.float64)
        mean = np.nanmean(obs, axis=0)
        if stat == "mean":
            return Raster.from_float64(stack.grid, mean)
        d = obs - mean
        m2 = np.nanmean(d * d, axis=0)
        # cancellation noise in m2 sits around eps^2 * mean^2; snap it to an
        # exact zero so constant series behave as degenerate variance
        m2[m2 <= 1e-24 * mean * mean] = 0.0
        if stat == "std":
            out = np.sqrt(m2)
            out[n < 2] = np.nan
            return Raster.from_float64(stack.grid, out)
        m3 = np.nanmean(d * d * d, axis=0)
        m4 = np.nanmean(d * d * d * d, axis=0)
        bad = (n < 4) | ~(m2 > 0)
        m2 = np.where(bad, np.nan, m2)
        if stat == "skewness":
            out = m3 / m2**1.5
        else:
            out = m4 / (m2 * m2) - 3.0
        out[bad] = np.nan
    return Raster.from_float64(stack.grid, out)


def moving_window_std(raster: Raster, window: int = 6) -> Raster:
    """Population standard deviation over a square moving window.

    Even windows anchor so the target cell is the upper-left of the central
    2x2 block: the window spans rows [row - ceil(w/2) + 1, row + floor(w/2)]
    and the same for columns. Windows shrink at the edges instead of padding.
    Cells with fewer than two valid neighbours are nodata.
    """
    if window < 2:
        raise ValueError(f"window must be >= 2, got {window}")
    vals = raster.astype64()
    valid = np.isfinite(vals)
    v = np.where(valid, vals, 0.0)

    lo = -(int(np.ceil(window / 2)) - 1)
    hi = int(np.floor(window / 2))
    h, w = vals.shape

    def window_sum(a: np.ndarray) -> np.ndarray:
        # integral image with a zero border, then four-corner differences
        s = np.zeros((h + 1, w + 1), dtype=np.float64)
        s[1:, 1:] = np.cumsum(np.cumsum(a, axis=0), axis=1)
        rows = np.arange(h)
        cols = np.arange(w)
        r0 = np.clip(rows + lo, 0, h)[:, None]
        r1 = np.clip(rows + hi + 1, 0, h)[:, None]
        c0 = np.clip(cols + lo, 0, w)[None, :]
        c1 = np.clip(cols + hi + 1, 0, w)[None, :]
        return s[r1, c1] - s[r0, c1] - s[r1, c0] + s[r0, c0]

    n = window_sum(valid.astype(np.float64))
    s1 = window_sum(v)
    s2 = window_sum(v * v)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = s1 / n
        m2 = np.maximum(s2 / n - mean * mean, 0.0)
        # the one-pass difference cancels to ~eps * mean^2 on (near-)constant
        # windows; snap that noise floor to zero
        m2[m2 <= 1e-12 * mean * mean] = 0.0
        out = np.sqrt(m2)
    out[n < 2] = np.nan
    return Raster.from_float64(raster.grid, out)


def resample_to(raster: Raster, target: GridSpec, method: str = "nearest") -> Raster:
    """Sample a raster at the cell centers of another grid.

    ``nearest`` takes the source cell containing each target center and is
    defined over the full source extent. ``bilinear`` interpolates between the
    four surrounding source cell centers, so its domain is the hull of those
    centers; nodata neighbours are dropped and the remaining weights
    renormalized. Target centers outside the domain come out nodata.
    """
    if raster.grid.crs_tag != target.crs_tag:
        raise ValueError(
            f"crs mismatch: source {raster.grid.crs_tag!r} vs target {target.crs_tag!r}"
        )
    if method not in ("nearest", "bilinear"):
        raise ValueError(f"unknown resampling method {method!r}")

    src = raster.grid
    cols = np.arange(target.width)
    rows = np.arange(target.height)
    x = target.origin_x + (cols + 0.5) * target.cell_size
    y = target.origin_y + (rows + 0.5) * target.cell_size
    u = (x - src.origin_x) / src.cell_size  # fractional source col + 0.5
    v = (y - src.origin_y) / src.cell_size
    uu, vv = np.meshgrid(u, v)

    vals = raster.astype64()
    out = np.full(target.shape, np.nan)

    if method == "nearest":
        ci = np.floor(uu).astype(np.int64)
        ri = np.floor(vv).astype(np.int64)
        inside = (ci >= 0) & (ci < src.width) & (ri >= 0) & (ri < src.height)
        out[inside] = vals[ri[inside], ci[inside]]
        return Raster.from_float64(target, out)

    # bilinear in source cell-center coordinates
    fu = uu - 0.5
    fv = vv - 0.5
    inside = (fu >= 0) & (fu <= src.width - 1) & (fv >= 0) & (fv <= src.height - 1)
    c0 = np.clip(np.floor(fu).astype(np.int64), 0, src.width - 2) if src.width > 1 else np.zeros_like(fu, dtype=np.int64)
    r0 = np.clip(np.floor(fv).astype(np.int64), 0, src.height - 2) if src.height > 1 else np.zeros_like(fv, dtype=np.int64)
    c1 = np.minimum(c0 + 1, src.width - 1)
    r1 = np.minimum(r0 + 1, src.height - 1)
    wu = fu - c0
    wv = fv - r0
    corners = ((r0, c0, (1 - wu) * (1 - wv)), (r0, c1, wu * (1 - wv)),
               (r1, c0, (1 - wu) * wv), (r1, c1, wu * wv))
    acc = np.zeros(target.shape)
    wsum = np.zeros(target.shape)
    for ri, ci, wgt in corners:
        cv = vals[ri, ci]
        ok = np.isfinite(cv)
        acc += np.where(ok, cv * wgt, 0.0)
        wsum += np.where(ok, wgt, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        interp = acc / wsum
    out[inside & (wsum > 0)] = interp[inside & (wsum > 0)]
    return Raster.from_float64(target, out)
