"""Seasonal super images and ratio-based multitemporal speckle reduction.

The workflow has three steps:

1. average the co-registered seasonal time series pixel-wise into a single
   "super image" (speckle variance drops by the number of scenes averaged);
2. divide each scene by the super image to obtain a ratio image carrying the
   residual speckle, and clean it with an adaptive Lee filter;
3. multiply the denoised ratio back onto the super image to recover a
   despeckled scene that keeps the original radiometry.

All statistics are computed over the window clipped at the image border and
restricted to valid (non-nodata) samples; no values are invented by padding.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .raster import RasterGrid, SceneMeta, assert_aligned

EPS = 1e-12  # division guard, far below any physical backscatter


class Season(str, Enum):
    WINTER = "winter"
    SPRING = "spring"
    SUMMER = "summer"
    AUTUMN = "autumn"


SEASON_ORDER = (Season.WINTER, Season.SPRING, Season.SUMMER, Season.AUTUMN)


@dataclass(frozen=True)
class LeeParams:
    """Adaptive filter configuration.

    ``noise_cv`` is the coefficient of variation of the multiplicative noise;
    pass the string ``"auto"`` to estimate it as the median local cv of the
    image itself (1/sqrt(looks) is the usual closed form when the equivalent
    number of looks is known).
    """

    window: int = 5
    noise_cv: float | str = "auto"

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError(f"window must be odd and >= 3, got {self.window}")
        if isinstance(self.noise_cv, str):
            if self.noise_cv != "auto":
                raise ValueError(f"noise_cv must be a float or 'auto', got {self.noise_cv!r}")
        elif not self.noise_cv >= 0.0:
            raise ValueError(f"noise_cv must be >= 0, got {self.noise_cv}")


@dataclass(frozen=True)
class SeasonalStack:
    """Date-tagged single-band scenes falling inside one season."""

    season: Season
    scenes: list[tuple[SceneMeta, RasterGrid]]

    def __post_init__(self):
        if not self.scenes:
            raise ValueError("seasonal stack needs at least one scene")
        grids = [g for _, g in self.scenes]
        for i, g in enumerate(grids):
            if g.bands != 1:
                raise ValueError(f"scene {i} has {g.bands} bands, stacks are single-band")
        assert_aligned(grids)

    @property
    def count(self) -> int:
        return len(self.scenes)

    def grids(self) -> list[RasterGrid]:
        return [g for _, g in self.scenes]


def window_view(band: np.ndarray, window: int) -> np.ndarray:
    """(H, W, window, window) float64 view with NaN outside the image.

    NaN padding makes nan-aware reductions equivalent to statistics over the
    clipped window.
    """
    half = window // 2
    h, w = band.shape
    padded = np.full((h + 2 * half, w + 2 * half), np.nan, dtype=np.float64)
    padded[half : half + h, half : half + w] = band
    return sliding_window_view(padded, (window, window))


def _to_nan(grid: RasterGrid) -> np.ndarray:
    """Single band as float64 with nodata replaced by NaN."""
    band = grid.band(0).astype(np.float64)
    band[~grid.valid_mask()[0]] = np.nan
    return band


def _masked_result(result: np.ndarray, grid: RasterGrid) -> RasterGrid:
    """Cast back to f32, restoring the grid's own nodata sentinel."""
    out = result.astype(np.float32)
    invalid = ~grid.valid_mask()[0]
    out[invalid] = np.float32(grid.nodata)
    return grid.with_values(out[np.newaxis])


def super_image(stack: SeasonalStack) -> RasterGrid:
    """Pixel-wise mean over the stack's valid samples.

    A pixel is nodata in the result only where it is nodata in every scene.
    """
    bands = np.stack([_to_nan(g) for g in stack.grids()], axis=0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN columns
        mean = np.nanmean(bands, axis=0)
    first = stack.grids()[0]
    return RasterGrid(mean.astype(np.float32)[np.newaxis], nodata=np.nan, geo=first.geo)


def estimate_noise_cv(band: np.ndarray, window: int) -> float:
    """Median of local stddev / local mean over sufficiently-valid windows.

    Only windows with at least half their slots valid (and a valid centre)
    vote, so borders and nodata fringes do not skew the estimate.
    """
    view = window_view(band, window)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        counts = np.sum(~np.isnan(view), axis=(2, 3))
        mean = np.nanmean(view, axis=(2, 3))
        std = np.sqrt(np.nanvar(view, axis=(2, 3)))
    eligible = (~np.isnan(band)) & (counts >= (window * window) / 2.0) & (mean > EPS)
    if not np.any(eligible):
        raise ValueError("cannot estimate noise cv: no window has enough valid samples")
    return float(np.median(std[eligible] / mean[eligible]))


def lee_filter(grid: RasterGrid, params: LeeParams) -> RasterGrid:
    """Minimum-mean-square-error adaptive filter for multiplicative noise.

    At each valid pixel the output is ``mean + K * (x - mean)`` where mean and
    variance come from the valid neighbours in the clipped window,
    ``sigma_n^2 = (noise_cv * mean)^2`` models the noise contribution and
    ``K = clamp((var - sigma_n^2) / var, 0, 1)``. Flat areas get K = 0 (full
    smoothing), strong texture K -> 1 (preserved). Nodata stays nodata.
    """
    if grid.bands != 1:
        raise ValueError(f"lee_filter expects a single band, got {grid.bands}")
    band = _to_nan(grid)
    if isinstance(params.noise_cv, str):
        noise_cv = estimate_noise_cv(band, params.window)
    else:
        noise_cv = float(params.noise_cv)
    view = window_view(band, params.window)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        local_mean = np.nanmean(view, axis=(2, 3))
        local_var = np.nanvar(view, axis=(2, 3))
    noise_var = (noise_cv * local_mean) ** 2
    k = np.clip(np.maximum(local_var - noise_var, 0.0) / np.maximum(local_var, EPS), 0.0, 1.0)
    filtered = local_mean + k * (band - local_mean)
    return _masked_result(filtered, grid)


def multitemporal_despeckle(stack: SeasonalStack, params: LeeParams) -> list[RasterGrid]:
    """Despeckle every scene of a seasonal stack via the ratio workflow.

    Returns one grid per scene, in scene order. Ratio pixels where the super
    image is nodata or ~zero are set to 1 so the multiplication step
    reproduces the super image there.
    """
    mean_grid = super_image(stack)
    mean_band = _to_nan(mean_grid)
    unusable = np.isnan(mean_band) | (mean_band <= EPS)
    safe_mean = np.where(unusable, 1.0, mean_band)
    out: list[RasterGrid] = []
    for _, scene in stack.scenes:
        band = _to_nan(scene)
        ratio = band / safe_mean
        ratio[unusable] = 1.0
        ratio_grid = RasterGrid(ratio.astype(np.float32)[np.newaxis], nodata=np.nan, geo=scene.geo)
        smooth = lee_filter(ratio_grid, params)
        restored = _to_nan(smooth) * mean_band
        out.append(_masked_result(restored, scene))
    return out
