"""Label handling, masking, normalization, patch extraction and splitting.

Label rasters use the consensus land-cover legend; external codes are
remapped to compact internal indices 0..8 where 0 means "no data" (map
disagreement). Feature values under label 0 are forced to zero before
training so the model cannot learn from them, and those pixels are excluded
from the per-band min/max statistics.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .features import FeatureCube, N_CHANNELS
from .raster import RasterGrid
from .rng import Xoshiro256StarStar

N_CLASSES = 9  # internal indices 0..8

DEFAULT_CODE_TABLE = {
    20: 1,  # Forest
    5: 2,  # Shrubland
    7: 3,  # Grassland
    8: 4,  # Cropland
    9: 5,  # Wetland
    12: 6,  # Bareland
    13: 7,  # Built-up
    15: 8,  # Water
    0: 0,  # No data
}

CLASS_NAMES = {
    0: "No data",
    1: "Forest",
    2: "Shrubland",
    3: "Grassland",
    4: "Cropland",
    5: "Wetland",
    6: "Bareland",
    7: "Built-up",
    8: "Water",
}

CLASS_COLORS = {
    0: "#000000",
    1: "#006400",
    2: "#966400",
    3: "#ffb432",
    4: "#ffff64",
    5: "#1bcbae",
    6: "#9b969b",
    7: "#c31400",
    8: "#0046c8",
}

# legend entries with zero samples everywhere; only mappable to 0 on request
EMPTY_LEGEND_CODES = (11, 16)  # Lichens and mosses, Permanent ice and snow


@dataclass(frozen=True)
class LabelMap:
    """External-to-internal class code table (bijective on listed codes)."""

    table: dict[int, int] = field(default_factory=lambda: dict(DEFAULT_CODE_TABLE))
    allow_empty_classes: bool = False

    def __post_init__(self):
        values = list(self.table.values())
        if len(set(values)) != len(values):
            raise ValueError("label map must be bijective on listed codes")

    def lookup(self, code: int) -> int:
        if code in self.table:
            return self.table[code]
        if self.allow_empty_classes and code in EMPTY_LEGEND_CODES:
            return 0
        raise KeyError(code)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.70
    random_state: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError(f"train_fraction must be in (0, 1), got {self.train_fraction}")


@dataclass
class PatchSample:
    """One training sample: feature channels, label patch, provenance."""

    features: np.ndarray  # (channels, size, size) float32
    labels: np.ndarray  # (size, size) int16
    tile_id: str
    offset: tuple[int, int]
    ecoregion: int | None = None

    @property
    def size(self) -> int:
        return self.labels.shape[0]


def _as_grid(features: FeatureCube | RasterGrid) -> RasterGrid:
    return features.grid if isinstance(features, FeatureCube) else features


def remap_labels(raw: RasterGrid, label_map: LabelMap | None = None) -> RasterGrid:
    """Translate external legend codes to internal indices 0..8."""
    label_map = label_map or LabelMap()
    values = raw.band(0)
    codes = values.astype(np.int64)
    if not np.array_equal(codes.astype(np.float32), values):
        raise ValueError("label raster contains non-integer values")
    out = np.zeros_like(codes)
    for code in np.unique(codes):
        try:
            out[codes == code] = label_map.lookup(int(code))
        except KeyError:
            rows, cols = np.nonzero(codes == code)
            raise ValueError(
                f"unknown label code {int(code)} at pixel ({rows[0]}, {cols[0]})"
            ) from None
    return RasterGrid(out.astype(np.float32)[np.newaxis], nodata=-1.0, geo=raw.geo)


def mask_nodata(features: FeatureCube | RasterGrid, labels: RasterGrid) -> FeatureCube | RasterGrid:
    """Zero every feature channel wherever the label is 0."""
    grid = _as_grid(features)
    if (labels.height, labels.width) != (grid.height, grid.width):
        raise ValueError(
            f"labels {labels.height}x{labels.width} do not match "
            f"features {grid.height}x{grid.width}"
        )
    masked = grid.values.copy()
    masked[:, labels.band(0) == 0] = 0.0
    out = grid.with_values(masked)
    if isinstance(features, FeatureCube):
        return FeatureCube(grid=out, norm_stats=features.norm_stats)
    return out


def compute_norm_stats(
    features: FeatureCube | RasterGrid, labels: RasterGrid | None = None
) -> list[tuple[float, float]]:
    """Per-band (min, max) over valid pixels, excluding label-0 pixels."""
    grid = _as_grid(features)
    valid = grid.valid_mask()
    if labels is not None:
        valid = valid & (labels.band(0) != 0)[np.newaxis]
    stats = []
    for b in range(grid.bands):
        sel = grid.band(b)[valid[b]]
        if sel.size == 0:
            stats.append((0.0, 0.0))
        else:
            stats.append((float(sel.min()), float(sel.max())))
    return stats


def minmax_normalize(
    features: FeatureCube | RasterGrid,
    stats: list[tuple[float, float]] | None = None,
    labels: RasterGrid | None = None,
) -> FeatureCube | RasterGrid:
    """Scale each band by (x - min) / (max - min).

    Without ``stats`` the statistics come from this cube (training data);
    pass training stats to normalize test data with the same scale. Values
    outside the training range are allowed to leave [0, 1]. Label-0 pixels
    are left untouched (they are zeroed by masking) and a degenerate band
    (max == min) collapses to 0.
    """
    grid = _as_grid(features)
    if stats is None:
        stats = compute_norm_stats(features, labels)
    for lo, hi in stats:
        if hi < lo:
            raise ValueError(f"invalid norm stats: max {hi} < min {lo}")
    out = grid.values.astype(np.float32).copy()
    valid = grid.valid_mask()
    for b, (lo, hi) in enumerate(stats):
        span = hi - lo
        band = out[b]
        sel = valid[b].copy()
        if labels is not None:
            sel &= labels.band(0) != 0
        if span <= 0.0:
            band[sel] = 0.0
        else:
            band[sel] = (band[sel] - np.float32(lo)) / np.float32(span)
    result = grid.with_values(out)
    if isinstance(features, FeatureCube):
        return FeatureCube(grid=result, norm_stats=list(stats))
    return result


def patch_grid_offsets(dim: int, size: int, stride: int) -> list[int]:
    """Top-left offsets: multiples of stride with offset + size <= dim."""
    if dim < size:
        raise ValueError(f"dimension {dim} smaller than patch size {size}")
    count = (dim - size) // stride + 1
    return [i * stride for i in range(count)]


def extract_patches(
    features: FeatureCube | RasterGrid,
    labels: RasterGrid,
    size: int = 256,
    stride: int = 128,
    tile_id: str = "tile",
    ecoregion: int | None = None,
) -> list[PatchSample]:
    """Overlapping patches in row-major offset order."""
    grid = _as_grid(features)
    if (labels.height, labels.width) != (grid.height, grid.width):
        raise ValueError("labels and features must share dimensions")
    label_band = labels.band(0).astype(np.int16)
    samples = []
    for r in patch_grid_offsets(grid.height, size, stride):
        for c in patch_grid_offsets(grid.width, size, stride):
            samples.append(
                PatchSample(
                    features=np.ascontiguousarray(grid.values[:, r : r + size, c : c + size]),
                    labels=np.ascontiguousarray(label_band[r : r + size, c : c + size]),
                    tile_id=tile_id,
                    offset=(r, c),
                    ecoregion=ecoregion,
                )
            )
    return samples


def most_diverse_patch(samples: list[PatchSample]) -> PatchSample:
    """Patch with the most distinct label classes; ties go top-left first."""
    if not samples:
        raise ValueError("no patches to select from")
    best = samples[0]
    best_count = len(np.unique(best.labels))
    for s in samples[1:]:
        count = len(np.unique(s.labels))
        if count > best_count:
            best, best_count = s, count
    return best


def split_train_test(
    samples: list[PatchSample], spec: SplitSpec
) -> tuple[list[PatchSample], list[PatchSample]]:
    """Deterministic shuffle + split; first ceil(fraction * n) go to train."""
    n = len(samples)
    if n < 2:
        raise ValueError(f"need at least 2 samples to split, got {n}")
    indices = list(range(n))
    Xoshiro256StarStar(spec.random_state).shuffle(indices)
    # round to 9 decimals first so 0.7 * n never ceils past the exact value
    n_train = math.ceil(round(spec.train_fraction * n, 9))
    train = [samples[i] for i in indices[:n_train]]
    test = [samples[i] for i in indices[n_train:]]
    return train, test


def patch_norm_stats(samples: list[PatchSample]) -> list[tuple[float, float]]:
    """Per-band (min, max) over labelled pixels of a patch collection.

    Call this on the training split only, then reuse the stats everywhere.
    """
    if not samples:
        raise ValueError("no samples to compute statistics from")
    n_bands = samples[0].features.shape[0]
    lo = np.full(n_bands, np.inf)
    hi = np.full(n_bands, -np.inf)
    for s in samples:
        keep = s.labels != 0
        if not np.any(keep):
            continue
        sel = s.features[:, keep]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN bands
            lo = np.fmin(lo, np.nanmin(sel, axis=1))
            hi = np.fmax(hi, np.nanmax(sel, axis=1))
    lo = np.where(np.isfinite(lo), lo, 0.0)
    hi = np.where(np.isfinite(hi), hi, 0.0)
    return [(float(a), float(b)) for a, b in zip(lo, hi)]


def normalize_patches(
    samples: list[PatchSample], stats: list[tuple[float, float]]
) -> list[PatchSample]:
    """Apply banded min-max scaling; label-0 pixels stay exactly 0."""
    out = []
    lo = np.array([s[0] for s in stats], dtype=np.float32)[:, None, None]
    span = np.array([max(s[1] - s[0], 0.0) for s in stats], dtype=np.float32)[:, None, None]
    scale = np.where(span > 0, 1.0 / np.where(span > 0, span, 1.0), 0.0).astype(np.float32)
    for s in samples:
        feats = (s.features - lo) * scale
        feats[:, s.labels == 0] = 0.0
        feats = np.nan_to_num(feats, nan=0.0, posinf=0.0, neginf=0.0)
        out.append(
            PatchSample(
                features=feats.astype(np.float32),
                labels=s.labels,
                tile_id=s.tile_id,
                offset=s.offset,
                ecoregion=s.ecoregion,
            )
        )
    return out


def save_norm_stats(stats: list[tuple[float, float]], path) -> None:
    with open(path, "w") as fh:
        json.dump({"bands": [{"min": lo, "max": hi} for lo, hi in stats]}, fh, indent=1)


def load_norm_stats(path) -> list[tuple[float, float]]:
    with open(path) as fh:
        doc = json.load(fh)
    return [(b["min"], b["max"]) for b in doc["bands"]]
