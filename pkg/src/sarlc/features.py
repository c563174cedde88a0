"""Seasonal clustering and the spatial filter bank.

Each season contributes seven channels computed from its despeckled super
image: the super image itself, then Lee, median, mean, max, min and range
(max - min) filters, every one over a 5x5 kernel. Four seasons x seven
filters = 28 channels, season-major, in the fixed order below.
"""

from __future__ import annotations

import datetime as _dt
import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .despeckle import (
    SEASON_ORDER,
    LeeParams,
    Season,
    SeasonalStack,
    lee_filter,
    multitemporal_despeckle,
    super_image,
    window_view,
)
from .raster import RasterGrid, SceneMeta, assert_aligned

KERNEL_SIZE = 5


class FilterKind(str, Enum):
    LEE = "lee"
    MEDIAN = "median"
    MEAN = "mean"
    MAX = "max"
    MIN = "min"
    RANGE = "range"


# channel order within one season; "super" is the despeckled super image
FILTER_ORDER = ("super", "lee", "median", "mean", "max", "min", "range")
N_FILTERS = len(FILTER_ORDER)
N_CHANNELS = len(SEASON_ORDER) * N_FILTERS


def channel_index(season: Season, filter_name: str) -> int:
    return SEASON_ORDER.index(season) * N_FILTERS + FILTER_ORDER.index(filter_name)


def channel_names() -> list[str]:
    return [f"{s.value}_{f}" for s in SEASON_ORDER for f in FILTER_ORDER]


@dataclass(frozen=True)
class SeasonDefinition:
    """Month-day ranges, inclusive on both ends, partitioning the year."""

    ranges: dict[Season, tuple[tuple[int, int], tuple[int, int]]]

    def __post_init__(self):
        if set(self.ranges) != set(SEASON_ORDER):
            raise ValueError("season definition must cover all four seasons")
        # partition check over both leap and non-leap calendars
        for year in (2020, 2021):
            day = _dt.date(year, 1, 1)
            while day.year == year:
                hits = [s for s in SEASON_ORDER if self._contains(s, day)]
                if len(hits) != 1:
                    raise ValueError(f"{day.strftime('%m-%d')} falls in {len(hits)} seasons")
                day += _dt.timedelta(days=1)

    def _contains(self, season: Season, date: _dt.date) -> bool:
        (sm, sd), (em, ed) = self.ranges[season]
        start, end, key = (sm, sd), (em, ed), (date.month, date.day)
        if start <= end:
            return start <= key <= end
        return key >= start or key <= end  # range wrapping the year end

    def season_of(self, date: _dt.date) -> Season:
        for season in SEASON_ORDER:
            if self._contains(season, date):
                return season
        raise ValueError(f"{date} matches no season")  # unreachable after validation

    @classmethod
    def default(cls) -> "SeasonDefinition":
        return cls(
            {
                Season.WINTER: ((1, 1), (3, 31)),
                Season.SPRING: ((4, 1), (6, 30)),
                Season.SUMMER: ((7, 1), (9, 30)),
                Season.AUTUMN: ((10, 1), (12, 31)),
            }
        )

    @classmethod
    def from_json(cls, doc: dict) -> "SeasonDefinition":
        ranges = {}
        for season in SEASON_ORDER:
            entry = doc[season.value]
            ranges[season] = (tuple(entry["start"]), tuple(entry["end"]))
        return cls(ranges)


@dataclass(frozen=True)
class FeatureCube:
    """28-band feature stack for one tile, plus optional per-band norm stats."""

    grid: RasterGrid
    norm_stats: list[tuple[float, float]] | None = None

    def __post_init__(self):
        if self.grid.bands != N_CHANNELS:
            raise ValueError(f"feature cube needs {N_CHANNELS} bands, got {self.grid.bands}")
        if self.norm_stats is not None and len(self.norm_stats) != N_CHANNELS:
            raise ValueError("norm_stats must carry one (min, max) pair per band")

    def band(self, season: Season, filter_name: str) -> np.ndarray:
        return self.grid.band(channel_index(season, filter_name))


def cluster_by_season(
    scenes: list[tuple[SceneMeta, RasterGrid]],
    defs: SeasonDefinition | None = None,
) -> dict[Season, SeasonalStack | None]:
    """Assign every scene to exactly one season by acquisition date.

    Empty seasons map to None; callers decide whether that is fatal.
    """
    defs = defs or SeasonDefinition.default()
    if scenes:
        assert_aligned([g for _, g in scenes])
    buckets: dict[Season, list[tuple[SceneMeta, RasterGrid]]] = {s: [] for s in SEASON_ORDER}
    for meta, grid in scenes:
        buckets[defs.season_of(meta.acquisition_date)].append((meta, grid))
    return {
        s: SeasonalStack(season=s, scenes=items) if items else None
        for s, items in buckets.items()
    }


def spatial_filter(grid: RasterGrid, kind: FilterKind) -> RasterGrid:
    """One 5x5 windowed statistic; clipped window, valid neighbours only.

    A nodata centre stays nodata even when its neighbours are valid.
    """
    if grid.bands != 1:
        raise ValueError(f"spatial_filter expects a single band, got {grid.bands}")
    if kind == FilterKind.LEE:
        return lee_filter(grid, LeeParams(window=KERNEL_SIZE, noise_cv="auto"))
    band = grid.band(0).astype(np.float64)
    invalid = ~grid.valid_mask()[0]
    band[invalid] = np.nan
    view = window_view(band, KERNEL_SIZE)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        if kind == FilterKind.MEDIAN:
            result = np.nanmedian(view, axis=(2, 3)).astype(np.float32)
        elif kind == FilterKind.MEAN:
            result = np.nanmean(view, axis=(2, 3)).astype(np.float32)
        elif kind == FilterKind.MAX:
            result = np.nanmax(view, axis=(2, 3)).astype(np.float32)
        elif kind == FilterKind.MIN:
            result = np.nanmin(view, axis=(2, 3)).astype(np.float32)
        elif kind == FilterKind.RANGE:
            # subtract in f32 so "range == max - min" holds bitwise across bands
            result = np.nanmax(view, axis=(2, 3)).astype(np.float32) - np.nanmin(
                view, axis=(2, 3)
            ).astype(np.float32)
        else:
            raise ValueError(f"unknown filter kind {kind!r}")
    out = result
    out[invalid] = np.float32(grid.nodata)
    return grid.with_values(out[np.newaxis])


def _season_channels(stack: SeasonalStack, ratio_lee: LeeParams) -> list[np.ndarray]:
    """Despeckle, rebuild the super image, run the filter bank."""
    despeckled = multitemporal_despeckle(stack, ratio_lee)
    rebuilt = SeasonalStack(
        season=stack.season,
        scenes=[(meta, grid) for (meta, _), grid in zip(stack.scenes, despeckled)],
    )
    base = super_image(rebuilt)
    channels = [base.band(0).copy()]
    filtered = {
        kind: spatial_filter(base, kind)
        for kind in (FilterKind.LEE, FilterKind.MEDIAN, FilterKind.MEAN, FilterKind.MAX, FilterKind.MIN)
    }
    channels.append(filtered[FilterKind.LEE].band(0).copy())
    channels.append(filtered[FilterKind.MEDIAN].band(0).copy())
    channels.append(filtered[FilterKind.MEAN].band(0).copy())
    max_band = filtered[FilterKind.MAX].band(0)
    min_band = filtered[FilterKind.MIN].band(0)
    channels.append(max_band.copy())
    channels.append(min_band.copy())
    channels.append(max_band - min_band)  # identical arithmetic to the range filter
    return channels


def build_feature_cube(
    stacks: dict[Season, SeasonalStack | None],
    lee: LeeParams | None = None,
) -> FeatureCube:
    """Assemble the 28-band cube; an empty season yields 7 nodata bands."""
    ratio_lee = lee or LeeParams(window=7, noise_cv="auto")
    live = [s for s in SEASON_ORDER if stacks.get(s) is not None]
    if not live:
        raise ValueError("all four seasons are empty")
    ref = stacks[live[0]].grids()[0]
    assert_aligned([stacks[s].grids()[0] for s in live])
    shape = (ref.height, ref.width)
    bands: list[np.ndarray] = []
    for season in SEASON_ORDER:
        stack = stacks.get(season)
        if stack is None:
            bands.extend([np.full(shape, np.nan, dtype=np.float32)] * N_FILTERS)
        else:
            bands.extend(_season_channels(stack, ratio_lee))
    cube = RasterGrid(np.stack(bands, axis=0), nodata=np.nan, geo=ref.geo)
    return FeatureCube(grid=cube)
