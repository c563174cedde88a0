"""Synthetic speckled SAR worlds with known class maps.

Scenes follow the multiplicative model for intensity imagery: every pixel is
its class's seasonal mean backscatter times an independent gamma speckle draw
with shape L and scale 1/L (mean 1, variance 1/L), L being the equivalent
number of looks. Because the noise-free world is known, every despeckling and
classification claim downstream can be checked against ground truth.
"""

from __future__ import annotations

import datetime as _dt
from dataclasses import dataclass

import numpy as np

from .features import SeasonDefinition
from .despeckle import SEASON_ORDER
from .raster import RasterGrid, SceneMeta


@dataclass(frozen=True)
class ClassParams:
    """Per-class radiometry: linear-intensity mean per season, texture knob."""

    mean_backscatter: tuple[float, float, float, float]
    texture_scale: float = 0.0

    def __post_init__(self):
        if len(self.mean_backscatter) != 4:
            raise ValueError("mean_backscatter needs one value per season")
        if any(m <= 0 for m in self.mean_backscatter):
            raise ValueError("mean backscatter must be positive")


@dataclass(frozen=True)
class SyntheticWorld:
    class_map: RasterGrid
    class_params: dict[int, ClassParams]
    enl: float
    seed: int

    def __post_init__(self):
        if self.enl < 1.0:
            raise ValueError(f"equivalent number of looks must be >= 1, got {self.enl}")
        present = np.unique(self.class_map.band(0)).astype(np.int64)
        missing = [int(c) for c in present if int(c) not in self.class_params]
        if missing:
            raise ValueError(f"class codes {missing} missing from class_params")


def generate_class_map(seed: int, width: int, height: int, n_classes: int) -> RasterGrid:
    """Piecewise-constant class map from seeded Voronoi cells.

    Codes run 0..n_classes-1 (0 doubles as the unlabeled class downstream).
    Every class owns at least one cell, so all codes appear.
    """
    if not 2 <= n_classes <= 9:
        raise ValueError(f"n_classes must be in [2, 9], got {n_classes}")
    if width * height < n_classes:
        raise ValueError(f"{width}x{height} grid cannot hold {n_classes} classes")
    rng = np.random.default_rng(np.random.SeedSequence([seed, width, height, n_classes]))
    n_sites = min(max(3 * n_classes, 12), width * height)
    # distinct pixel positions so every site owns at least its own pixel
    flat = rng.choice(width * height, size=n_sites, replace=False)
    rows, cols = flat // width, flat % width
    codes = np.concatenate(
        [np.arange(n_classes), rng.integers(0, n_classes, size=n_sites - n_classes)]
    )
    yy, xx = np.mgrid[0:height, 0:width]
    d2 = (yy[..., None] - rows) ** 2 + (xx[..., None] - cols) ** 2
    owner = np.argmin(d2, axis=-1)
    class_map = codes[owner].astype(np.float32)
    return RasterGrid(class_map[np.newaxis], nodata=-1.0)


def default_class_params(n_classes: int) -> dict[int, ClassParams]:
    """Geometric mean ladder in [0.05, 1.0] with one seasonally-ambiguous class.

    Class 1 mimics class 2 in winter/spring and class 3 (or class 2's
    opposite) in summer/autumn, so no single season separates everything and
    the seasonal stack carries real information.
    """
    if not 2 <= n_classes <= 9:
        raise ValueError(f"n_classes must be in [2, 9], got {n_classes}")
    lo, hi = 0.05, 1.0
    ratio = (hi / lo) ** (1.0 / (n_classes - 1))
    base = [lo * ratio**i for i in range(n_classes)]
    params: dict[int, ClassParams] = {}
    for code in range(n_classes):
        params[code] = ClassParams(mean_backscatter=(base[code],) * 4)
    if n_classes >= 4:
        cold, warm = base[2], base[3]
    elif n_classes == 3:
        cold, warm = base[2], base[0]
    else:
        cold, warm = base[0], base[1]
    params[1] = ClassParams(mean_backscatter=(cold, cold, warm, warm))
    return params


def confusable_class_params() -> dict[int, ClassParams]:
    """Profiles for a 5-code world (0 = unlabeled + 4 land classes) where no
    single season separates everything and one pair is radiometric twins.

    Two backscatter levels A < B drive four seasonal patterns:

    * classes 1 and 2 share (A, A, B, B); only their morphology differs
      (sprinkle class 1 as blobs), so pixel statistics alone cannot split
      them in any number of seasons;
    * class 3 runs (B, B, A, A): it swaps rank with the pair between winter
      and summer, separable from it in every season but only jointly
      distinct from class 4;
    * class 4 alternates (A, B, A, B): in each single season it collides
      with either the pair or class 3, so per-season classifiers always
      fuse some pair while the full year resolves everything but 1 vs 2.
    """
    a, b = 0.12, 0.28
    return {
        0: ClassParams(mean_backscatter=(0.55, 0.55, 0.55, 0.55)),
        1: ClassParams(mean_backscatter=(a, a, b, b)),
        2: ClassParams(mean_backscatter=(a, a, b, b)),
        3: ClassParams(mean_backscatter=(b, b, a, a)),
        4: ClassParams(mean_backscatter=(a, b, a, b)),
    }


def sprinkle_blobs(
    class_map: RasterGrid,
    code: int,
    fraction: float,
    radius: int,
    seed: int,
) -> RasterGrid:
    """Overwrite random small discs with ``code`` (roughly ``fraction`` of
    the area); at least one blob is always placed so the class exists."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"blob fraction must be in (0, 1), got {fraction}")
    codes = class_map.band(0).copy()
    height, width = codes.shape
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xB10B]))
    n_blobs = max(1, int(fraction * width * height / (np.pi * radius**2)))
    yy, xx = np.mgrid[0:height, 0:width]
    for _ in range(n_blobs):
        cy = int(rng.integers(radius, max(height - radius, radius + 1)))
        cx = int(rng.integers(radius, max(width - radius, radius + 1)))
        r = int(rng.integers(max(2, radius // 2), radius + 1))
        codes[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = float(code)
    return RasterGrid(codes[np.newaxis], nodata=class_map.nodata, geo=class_map.geo)


@dataclass(frozen=True)
class WorldSpec:
    """Everything needed to regenerate a world deterministically.

    With ``blob_class`` set, that code is removed from the Voronoi layout
    and painted back as small discs, giving it a morphology (blob vs cell)
    that pixel statistics cannot see.
    """

    seed: int
    width: int
    height: int
    n_classes: int
    enl: float = 4.0
    class_params: dict[int, ClassParams] | None = None
    blob_class: int | None = None
    blob_fraction: float = 0.10
    blob_radius: int = 6

    def build(self) -> SyntheticWorld:
        if self.blob_class is None:
            class_map = generate_class_map(self.seed, self.width, self.height, self.n_classes)
        else:
            if not 0 <= self.blob_class < self.n_classes:
                raise ValueError(f"blob_class {self.blob_class} outside 0..{self.n_classes - 1}")
            base = generate_class_map(self.seed, self.width, self.height, self.n_classes - 1)
            codes = base.band(0).copy()
            codes[codes >= self.blob_class] += 1.0  # free the blob code
            class_map = sprinkle_blobs(
                RasterGrid(codes[np.newaxis], nodata=base.nodata, geo=base.geo),
                self.blob_class,
                self.blob_fraction,
                self.blob_radius,
                self.seed,
            )
        params = self.class_params or default_class_params(self.n_classes)
        return SyntheticWorld(
            class_map=class_map, class_params=params, enl=self.enl, seed=self.seed
        )


def render_noise_free(world: SyntheticWorld, season_index: int) -> np.ndarray:
    """Noise-free seasonal backscatter map (float64)."""
    codes = world.class_map.band(0).astype(np.int64)
    height, width = codes.shape
    mean = np.zeros((height, width), dtype=np.float64)
    for code, params in world.class_params.items():
        sel = codes == code
        if not np.any(sel):
            continue
        level = params.mean_backscatter[season_index]
        if params.texture_scale:
            yy, xx = np.mgrid[0:height, 0:width]
            pattern = 0.5 * np.sin(2 * np.pi * xx / 32.0) * np.sin(2 * np.pi * yy / 32.0)
            mean[sel] = level * (1.0 + params.texture_scale * pattern[sel])
        else:
            mean[sel] = level
    return mean


def _scene_rng(world: SyntheticWorld, date: _dt.date, band: int) -> np.random.Generator:
    # one independent stream per (seed, date, band): any scene regenerates alone
    key = [world.seed, date.year, date.month, date.day, band]
    return np.random.default_rng(np.random.SeedSequence(key))


def generate_time_series(
    world: SyntheticWorld,
    dates: list[_dt.date],
    defs: SeasonDefinition | None = None,
) -> list[tuple[SceneMeta, RasterGrid]]:
    """One speckled scene per date; draws are independent across dates."""
    if not dates:
        raise ValueError("need at least one acquisition date")
    defs = defs or SeasonDefinition.default()
    scenes = []
    for date in dates:
        season_index = SEASON_ORDER.index(defs.season_of(date))
        mean = render_noise_free(world, season_index)
        rng = _scene_rng(world, date, 0)
        speckle = rng.gamma(shape=world.enl, scale=1.0 / world.enl, size=mean.shape)
        values = (mean * speckle).astype(np.float32)
        meta = SceneMeta(acquisition_date=date)
        scenes.append((meta, RasterGrid(values[np.newaxis], nodata=np.nan, geo=world.class_map.geo)))
    return scenes


def seasonal_dates(year: int, per_season: int) -> list[_dt.date]:
    """Evenly spread acquisition dates, per_season in each season."""
    anchors = {
        0: (_dt.date(year, 1, 5), _dt.date(year, 3, 25)),
        1: (_dt.date(year, 4, 5), _dt.date(year, 6, 25)),
        2: (_dt.date(year, 7, 5), _dt.date(year, 9, 25)),
        3: (_dt.date(year, 10, 5), _dt.date(year, 12, 25)),
    }
    dates = []
    for idx in range(4):
        start, end = anchors[idx]
        span = (end - start).days
        for k in range(per_season):
            frac = 0.5 if per_season == 1 else k / (per_season - 1)
            dates.append(start + _dt.timedelta(days=round(frac * span)))
    return dates
