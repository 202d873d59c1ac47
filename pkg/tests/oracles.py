"""Independent brute-force oracles for the statistics under test.

These are deliberately naive (explicit sorts, per-cell double loops, direct
summation) and share no code with the implementations they check.
"""

from __future__ import annotations

import math

import numpy as np


def percentile_oracle(values, p: float) -> float | None:
    xs = sorted(float(v) for v in values)
    n = len(xs)
    if n == 0:
        return None
    h = (n - 1) * p + 1  # 1-based rank
    fl = math.floor(h)
    if fl >= n:
        return xs[n - 1]
    frac = h - fl
    return xs[fl - 1] + frac * (xs[fl] - xs[fl - 1])


def moments_oracle(values) -> dict[str, float | None]:
    xs = [float(v) for v in values]
    n = len(xs)
    out: dict[str, float | None] = {
        "mean": None, "median": None, "std": None, "skewness": None, "kurtosis": None,
    }
    if n == 0:
        return out
    mean = sum(xs) / n
    out["mean"] = mean
    out["median"] = percentile_oracle(xs, 0.5)
    m2 = sum((x - mean) ** 2 for x in xs) / n
    if n >= 2:
        out["std"] = math.sqrt(m2)
    if n >= 4 and m2 > 0:
        m3 = sum((x - mean) ** 3 for x in xs) / n
        m4 = sum((x - mean) ** 4 for x in xs) / n
        out["skewness"] = m3 / m2**1.5
        out["kurtosis"] = m4 / m2**2 - 3.0
    return out


def window_std_oracle(vals: np.ndarray, window: int) -> np.ndarray:
    """Per-cell double-loop population std; vals has NaN at invalid cells."""
    h, w = vals.shape
    lo = -(math.ceil(window / 2) - 1)
    hi = math.floor(window / 2)
    out = np.full((h, w), np.nan)
    for r in range(h):
        for c in range(w):
            block = []
            for rr in range(max(0, r + lo), min(h, r + hi + 1)):
                for cc in range(max(0, c + lo), min(w, c + hi + 1)):
                    if math.isfinite(vals[rr, cc]):
                        block.append(float(vals[rr, cc]))
            if len(block) < 2:
                continue
            mean = sum(block) / len(block)
            m2 = sum((b - mean) ** 2 for b in block) / len(block)
            out[r, c] = math.sqrt(m2)
    return out


def _median_by_sort(xs: list[float]) -> float:
    xs = sorted(xs)
    k = len(xs)
    return (xs[(k - 1) // 2] + xs[k // 2]) / 2.0


def sigma_oracle(vals: np.ndarray, window: int, enl: float, k_sigma: float,
                 min_selected: int) -> np.ndarray:
    """Literal per-cell sigma-selection filter; vals has NaN at invalid."""
    h, w = vals.shape
    half = window // 2
    sigma_n = 1.0 / math.sqrt(enl)
    out = np.full((h, w), np.nan)
    for r in range(h):
        for c in range(w):
            if not math.isfinite(vals[r, c]):
                continue
            block = []
            for rr in range(max(0, r - half), min(h, r + half + 1)):
                for cc in range(max(0, c - half), min(w, c + half + 1)):
                    if math.isfinite(vals[rr, cc]):
                        block.append(float(vals[rr, cc]))
            m = sum(block) / len(block)
            lo = m * (1 - k_sigma * sigma_n)
            hi = m * (1 + k_sigma * sigma_n)
            sel = [b for b in block if lo <= b <= hi]
            if len(sel) < min_selected:
                out[r, c] = _median_by_sort(block)
            else:
                out[r, c] = sum(sel) / len(sel)
    return out
