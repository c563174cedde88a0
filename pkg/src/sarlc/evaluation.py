"""Experiment harnesses: cross-ecoregion validation and time-series mode.

``ecoregion_cv`` trains one fresh model per ordered (train-region,
test-region) pair and reports an overall-accuracy matrix; the diagonal uses
a seeded 70/30 split inside the region so same-region numbers are not
measured on training data.

``timeseries_mode_dataset`` swaps the filter-bank features for k despeckled
scenes per season (4k channels in date order), excluding tiles that cannot
supply k fully-covered scenes for every season.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .baseline import ForestConfig, fit as rf_fit, predict_batch, subsample_per_class
from .dataset import PatchSample, SplitSpec, extract_patches, mask_nodata, split_train_test
from .despeckle import SEASON_ORDER, LeeParams, SeasonalStack, multitemporal_despeckle
from .metrics import confusion, overall_accuracy
from .model import ModelConfig, TrainConfig, build_model, predict_map, train_model
from .raster import RasterGrid
from .rng import derive_seed

# trainer: (train samples, seed) -> predictor mapping samples to label maps
Trainer = Callable[[list[PatchSample], int], Callable[[list[PatchSample]], list[np.ndarray]]]


@dataclass(frozen=True)
class EcoregionAssignment:
    map: dict[str, int]

    def require(self, tile_ids: list[str]) -> None:
        missing = [t for t in tile_ids if t not in self.map]
        if missing:
            raise ValueError(f"tiles without ecoregion assignment: {missing}")


@dataclass
class CrossRegionResult:
    regions: list[int]
    oa: np.ndarray  # oa[i][j]: train on regions[i], test on regions[j]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["train\\test"] + [str(r) for r in self.regions])
            for i, r in enumerate(self.regions):
                writer.writerow([str(r)] + [repr(float(v)) for v in self.oa[i]])

    def diagonal_mean(self) -> float:
        return float(np.mean(np.diag(self.oa)))

    def off_diagonal_mean(self) -> float:
        mask = ~np.eye(len(self.regions), dtype=bool)
        return float(np.mean(self.oa[mask]))


def swin_trainer(model_cfg: ModelConfig, train_cfg: TrainConfig) -> Trainer:
    def train(samples: list[PatchSample], seed: int):
        model = build_model(model_cfg, seed=seed)
        train_model(
            model,
            [s.features for s in samples],
            [s.labels for s in samples],
            train_cfg,
            seed=seed,
        )

        def predictor(batch: list[PatchSample]) -> list[np.ndarray]:
            return [predict_map(model, s.features) for s in batch]

        return predictor

    return train


def rf_trainer(cfg: ForestConfig, pixel_cap: int = 50_000) -> Trainer:
    """Pixel-wise forest; masked (all-zero) pixels shortcut to class 0."""

    def train(samples: list[PatchSample], seed: int):
        X, y = flatten_pixels(samples)
        X, y = subsample_per_class(X, y, pixel_cap, seed)
        forest = rf_fit(X, y, ForestConfig(
            n_trees=cfg.n_trees,
            max_depth=cfg.max_depth,
            min_leaf=cfg.min_leaf,
            features_per_split=cfg.features_per_split,
            seed=derive_seed(seed, cfg.seed),
        ))

        def predictor(batch: list[PatchSample]) -> list[np.ndarray]:
            return [predict_pixels(forest, s.features) for s in batch]

        return predictor

    return train


def flatten_pixels(samples: list[PatchSample]) -> tuple[np.ndarray, np.ndarray]:
    """Stack labelled (non-zero) pixels from every patch to (n, channels)."""
    xs, ys = [], []
    for s in samples:
        labels = s.labels.ravel()
        keep = labels != 0
        xs.append(s.features.reshape(s.features.shape[0], -1).T[keep])
        ys.append(labels[keep])
    return np.concatenate(xs), np.concatenate(ys)


def predict_pixels(forest, features: np.ndarray) -> np.ndarray:
    """Per-pixel forest prediction; all-zero feature vectors become class 0."""
    channels, h, w = features.shape
    flat = features.reshape(channels, -1).T
    masked = np.all(flat == 0.0, axis=1)
    out = np.zeros(h * w, dtype=np.int16)
    if np.any(~masked):
        out[~masked] = predict_batch(forest, flat[~masked]).astype(np.int16)
    return out.reshape(h, w)


def _samples_oa(predictor, samples: list[PatchSample]) -> float:
    preds = predictor(samples)
    cm = None
    for pred, sample in zip(preds, samples):
        c = confusion(pred, sample.labels)
        cm = c if cm is None else cm.merge(c)
    return overall_accuracy(cm)


def ecoregion_cv(
    samples: list[PatchSample],
    trainer: Trainer,
    seed: int = 0,
    split: SplitSpec | None = None,
) -> CrossRegionResult:
    """OA matrix over ordered (train region, test region) pairs."""
    by_region: dict[int, list[PatchSample]] = {}
    for s in samples:
        if s.ecoregion is None:
            raise ValueError(f"patch {s.tile_id}@{s.offset} has no ecoregion code")
        by_region.setdefault(s.ecoregion, []).append(s)
    regions = sorted(by_region)
    if len(regions) < 2:
        raise ValueError(f"cross-region validation needs >= 2 regions, got {len(regions)}")
    for r, items in by_region.items():
        if not items:
            raise ValueError(f"ecoregion {r} has no patches")
    split = split or SplitSpec(random_state=seed)
    oa = np.zeros((len(regions), len(regions)))
    for i, train_region in enumerate(regions):
        for j, test_region in enumerate(regions):
            pair_seed = derive_seed(seed, i, j)
            if i == j:
                train_set, test_set = split_train_test(by_region[train_region], split)
            else:
                train_set, test_set = by_region[train_region], by_region[test_region]
            predictor = trainer(train_set, pair_seed)
            oa[i, j] = _samples_oa(predictor, test_set)
    return CrossRegionResult(regions=regions, oa=oa)


class TileExcluded(Exception):
    """Tile cannot join the time-series dataset; .reason says why."""

    def __init__(self, tile_id: str, reason: str):
        super().__init__(f"{tile_id}: {reason}")
        self.tile_id = tile_id
        self.reason = reason


def timeseries_channels(
    stacks: dict, k: int, lee: LeeParams | None = None, tile_id: str = "tile",
    despeckle: bool = True,
) -> RasterGrid:
    """4k-channel stack: k despeckled scenes per season, date order.

    Raises TileExcluded when any season lacks k scenes with full coverage.
    """
    lee = lee or LeeParams(window=7, noise_cv="auto")
    chosen: list[np.ndarray] = []
    geo = None
    for season in SEASON_ORDER:
        stack = stacks.get(season)
        scenes = list(stack.scenes) if stack is not None else []
        scenes.sort(key=lambda item: item[0].acquisition_date)
        covered = [
            (meta, grid) for meta, grid in scenes if bool(np.all(grid.valid_mask()))
        ]
        if len(covered) < k:
            raise TileExcluded(
                tile_id,
                f"season {season.value} has {len(covered)} fully-covered scenes, needs {k}",
            )
        picked = SeasonalStack(season=season, scenes=covered[:k])
        if despeckle:
            grids = multitemporal_despeckle(picked, lee)
        else:
            grids = picked.grids()
        geo = geo or grids[0].geo
        chosen.extend(g.band(0) for g in grids)
    return RasterGrid(np.stack(chosen, axis=0), nodata=np.nan, geo=geo)


def timeseries_mode_dataset(
    tiles: list[tuple[str, dict, RasterGrid]],
    k: int = 5,
    lee: LeeParams | None = None,
    size: int = 256,
    stride: int = 128,
    ecoregions: dict[str, int] | None = None,
    despeckle: bool = True,
) -> tuple[list[PatchSample], list[str]]:
    """Masked (not yet normalized) patches for every admissible tile.

    ``tiles`` holds (tile_id, season->stack mapping, internal label grid).
    Returns the samples and a report line per excluded tile.
    """
    samples: list[PatchSample] = []
    report: list[str] = []
    for tile_id, stacks, labels in tiles:
        try:
            channels = timeseries_channels(stacks, k, lee, tile_id, despeckle=despeckle)
        except TileExcluded as exc:
            report.append(f"excluded {exc.tile_id}: {exc.reason}")
            continue
        masked = mask_nodata(channels, labels)
        region = None if ecoregions is None else ecoregions.get(tile_id)
        samples.extend(
            extract_patches(masked, labels, size=size, stride=stride, tile_id=tile_id, ecoregion=region)
        )
    return samples, report
