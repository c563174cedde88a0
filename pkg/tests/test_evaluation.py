import datetime as dt

import numpy as np
import pytest

from sarlc.baseline import ForestConfig
from sarlc.dataset import extract_patches, mask_nodata, remap_labels
from sarlc.despeckle import SEASON_ORDER, LeeParams, Season, SeasonalStack
from sarlc.evaluation import (
    CrossRegionResult,
    EcoregionAssignment,
    TileExcluded,
    ecoregion_cv,
    flatten_pixels,
    predict_pixels,
    rf_trainer,
    timeseries_channels,
    timeseries_mode_dataset,
)
from sarlc.features import build_feature_cube, cluster_by_season
from sarlc.raster import RasterGrid, SceneMeta
from sarlc.synthetic import (
    ClassParams,
    WorldSpec,
    default_class_params,
    generate_time_series,
    seasonal_dates,
)


def world_patches(seed, ecoregion, mean_scale=1.0, size=96, patch=48):
    params = default_class_params(3)
    if mean_scale != 1.0:
        params = {
            c: ClassParams(tuple(m * mean_scale for m in p.mean_backscatter))
            for c, p in params.items()
        }
    world = WorldSpec(seed=seed, width=size, height=size, n_classes=3, enl=4.0,
                      class_params=params).build()
    scenes = generate_time_series(world, seasonal_dates(2021, 3))
    cube = build_feature_cube(cluster_by_season(scenes), LeeParams(window=5, noise_cv="auto"))
    labels = world.class_map
    masked = mask_nodata(cube, labels)
    return extract_patches(
        masked, labels, size=patch, stride=patch, tile_id=f"tile{seed}", ecoregion=ecoregion
    )


FAST_RF = rf_trainer(ForestConfig(n_trees=15, max_depth=12, min_leaf=2, seed=0), pixel_cap=3000)


def test_same_distribution_regions_have_similar_oa():
    samples = world_patches(seed=1, ecoregion=0) + world_patches(seed=2, ecoregion=1)
    result = ecoregion_cv(samples, FAST_RF, seed=0)
    assert result.regions == [0, 1]
    assert abs(result.oa[0, 1] - result.oa[0, 0]) <= 0.1
    assert np.all(result.oa >= 0.0) and np.all(result.oa <= 1.0)


def test_shifted_regimes_favour_diagonal():
    samples = world_patches(seed=3, ecoregion=0) + world_patches(
        seed=4, ecoregion=1, mean_scale=2.5
    )
    result = ecoregion_cv(samples, FAST_RF, seed=0)
    assert result.diagonal_mean() > result.off_diagonal_mean()


def test_single_region_rejected():
    samples = world_patches(seed=5, ecoregion=0)
    with pytest.raises(ValueError, match=">= 2 regions"):
        ecoregion_cv(samples, FAST_RF, seed=0)


def test_missing_ecoregion_rejected():
    samples = world_patches(seed=6, ecoregion=None)
    with pytest.raises(ValueError, match="no ecoregion"):
        ecoregion_cv(samples, FAST_RF, seed=0)


def test_assignment_requires_all_tiles():
    assignment = EcoregionAssignment({"a": 0})
    with pytest.raises(ValueError, match="without ecoregion"):
        assignment.require(["a", "b"])


def test_result_csv(tmp_path):
    result = CrossRegionResult(regions=[0, 1], oa=np.array([[0.9, 0.5], [0.4, 0.8]]))
    result.write_csv(tmp_path / "oa.csv")
    lines = (tmp_path / "oa.csv").read_text().splitlines()
    assert lines[0] == "train\\test,0,1"
    assert result.diagonal_mean() == pytest.approx(0.85)
    assert result.off_diagonal_mean() == pytest.approx(0.45)


# ---------------------------------------------------------------------------
# time-series mode
# ---------------------------------------------------------------------------


def seasonal_stacks(per_season, size=32, seed=7, holes_in=None):
    world = WorldSpec(seed=seed, width=size, height=size, n_classes=2, enl=8.0).build()
    scenes = generate_time_series(world, seasonal_dates(2021, per_season))
    if holes_in is not None:
        patched = []
        for i, (meta, grid) in enumerate(scenes):
            if i in holes_in:
                values = grid.values.copy()
                values[0, 0, 0] = np.nan  # partial coverage
                grid = RasterGrid(values, nodata=grid.nodata, geo=grid.geo)
            patched.append((meta, grid))
        scenes = patched
    return cluster_by_season(scenes), world


def test_k5_builds_20_channels():
    stacks, _ = seasonal_stacks(per_season=5)
    grid = timeseries_channels(stacks, k=5, lee=LeeParams(window=5, noise_cv="auto"))
    assert grid.bands == 20


def test_underpopulated_season_excludes_tile():
    stacks, _ = seasonal_stacks(per_season=3)
    with pytest.raises(TileExcluded, match="has 3 fully-covered scenes, needs 5"):
        timeseries_channels(stacks, k=5, tile_id="t9")


def test_partial_coverage_does_not_count():
    stacks, _ = seasonal_stacks(per_season=5, holes_in={0})  # one winter scene has a hole
    with pytest.raises(TileExcluded, match="winter has 4"):
        timeseries_channels(stacks, k=5)


def test_k1_identical_scenes_equal_super_images():
    arr = (np.random.default_rng(0).random((16, 16)) + 0.3).astype(np.float32)
    dates = [dt.date(2021, 2, 1), dt.date(2021, 5, 1), dt.date(2021, 8, 1), dt.date(2021, 11, 1)]
    stacks = {}
    for season, date in zip(SEASON_ORDER, dates):
        scenes = [
            (SceneMeta(acquisition_date=date), RasterGrid(arr)),
            (SceneMeta(acquisition_date=date + dt.timedelta(days=7)), RasterGrid(arr)),
        ]
        stacks[season] = SeasonalStack(season=season, scenes=scenes)
    grid = timeseries_channels(stacks, k=1, lee=LeeParams(window=5, noise_cv=0.2))
    assert grid.bands == 4
    for b in range(4):
        assert np.array_equal(grid.band(b), arr)


def test_scenes_ordered_by_date():
    stacks, world = seasonal_stacks(per_season=5)
    winter = stacks[Season.WINTER]
    shuffled = SeasonalStack(season=Season.WINTER, scenes=list(reversed(winter.scenes)))
    stacks_shuffled = dict(stacks)
    stacks_shuffled[Season.WINTER] = shuffled
    a = timeseries_channels(stacks, k=5, lee=LeeParams(window=5, noise_cv=0.3))
    b = timeseries_channels(stacks_shuffled, k=5, lee=LeeParams(window=5, noise_cv=0.3))
    assert np.array_equal(a.values, b.values)  # sorting makes order canonical


def test_dataset_masks_and_reports():
    stacks_ok, world = seasonal_stacks(per_season=5, seed=8)
    stacks_bad, _ = seasonal_stacks(per_season=2, seed=9)
    labels = world.class_map
    tiles = [("good", stacks_ok, labels), ("bad", stacks_bad, labels)]
    samples, report = timeseries_mode_dataset(tiles, k=5, size=16, stride=16)
    assert len(report) == 1 and "bad" in report[0]
    assert samples and all(s.features.shape[0] == 20 for s in samples)
    for s in samples:
        assert np.all(s.features[:, s.labels == 0] == 0.0)


def test_flatten_and_predict_pixels_mask_shortcut():
    feats = np.random.default_rng(1).random((28, 8, 8)).astype(np.float32) + 0.1
    labels = np.ones((8, 8), dtype=np.int16)
    labels[0, :] = 0
    feats[:, labels == 0] = 0.0
    from sarlc.dataset import PatchSample

    sample = PatchSample(features=feats, labels=labels, tile_id="t", offset=(0, 0))
    X, y = flatten_pixels([sample])
    assert len(y) == 8 * 7  # zero-label row excluded
    trainer = rf_trainer(ForestConfig(n_trees=3, max_depth=3, min_leaf=1, seed=0), pixel_cap=100)

    class FakeForest:
        trees = [{"leaf": [0, 0, 5, 0, 0, 0, 0, 0, 0]}]

    pred = predict_pixels(FakeForest(), feats)
    assert np.all(pred[0, :] == 0)  # masked row shortcuts to class 0
    assert np.all(pred[1:, :] == 2)
