import datetime as dt
import itertools

import numpy as np
import pytest

from sarlc.despeckle import (
    LeeParams,
    Season,
    SeasonalStack,
    estimate_noise_cv,
    lee_filter,
    multitemporal_despeckle,
    super_image,
)
from sarlc.raster import RasterGrid, SceneMeta
from sarlc.synthetic import ClassParams, SyntheticWorld, generate_time_series


def make_stack(arrays, season=Season.WINTER, start=dt.date(2021, 1, 5)):
    scenes = []
    for i, arr in enumerate(arrays):
        meta = SceneMeta(acquisition_date=start + dt.timedelta(days=i))
        scenes.append((meta, RasterGrid(np.asarray(arr, dtype=np.float32))))
    return SeasonalStack(season=season, scenes=scenes)


def speckled_stack(mean, enl, n_scenes, size=96, seed=3):
    class_map = RasterGrid(np.zeros((size, size), dtype=np.float32), nodata=-1.0)
    world = SyntheticWorld(
        class_map=class_map,
        class_params={0: ClassParams(mean_backscatter=(mean,) * 4)},
        enl=enl,
        seed=seed,
    )
    dates = [dt.date(2021, 1, 2) + dt.timedelta(days=3 * i) for i in range(n_scenes)]
    return SeasonalStack(season=Season.WINTER, scenes=generate_time_series(world, dates))


# ---------------------------------------------------------------------------
# super image
# ---------------------------------------------------------------------------


def test_super_image_single_scene_identity():
    arr = np.random.default_rng(0).random((16, 16))
    stack = make_stack([arr])
    assert np.array_equal(super_image(stack).band(0), arr.astype(np.float32))


def test_super_image_is_pixel_mean():
    stack = make_stack([np.full((4, 4), 1.0), np.full((4, 4), 3.0)])
    assert np.all(super_image(stack).band(0) == 2.0)


def test_super_image_nodata_rules():
    a = np.array([[1.0, np.nan], [np.nan, 4.0]])
    b = np.array([[3.0, 2.0], [np.nan, 6.0]])
    out = super_image(make_stack([a, b])).band(0)
    assert out[0, 0] == 2.0  # mean of valid values
    assert out[0, 1] == 2.0  # single valid scene
    assert np.isnan(out[1, 0])  # nodata everywhere -> nodata
    assert out[1, 1] == 5.0


def test_super_image_permutation_invariant():
    rng = np.random.default_rng(1)
    arrays = [rng.random((8, 8)) for _ in range(4)]
    base = super_image(make_stack(arrays)).band(0)
    for perm in itertools.permutations(range(4)):
        out = super_image(make_stack([arrays[i] for i in perm])).band(0)
        assert np.array_equal(out, base)


def test_super_image_speckle_statistics():
    # cv^2 of the S-scene average of L-look speckle is 1/(S*L)
    s, enl = 20, 4.0
    stack = speckled_stack(mean=0.4, enl=enl, n_scenes=s, size=128)
    out = super_image(stack).band(0).astype(np.float64)
    cv2 = out.var() / out.mean() ** 2
    expected = 1.0 / (s * enl)
    assert abs(cv2 - expected) <= 0.25 * expected


# ---------------------------------------------------------------------------
# lee filter
# ---------------------------------------------------------------------------


def test_lee_constant_image_is_fixed_point():
    g = RasterGrid(np.full((12, 12), 2.5, dtype=np.float32))
    out = lee_filter(g, LeeParams(window=5, noise_cv=0.3))
    assert np.allclose(out.band(0), 2.5)


def test_lee_zero_noise_cv_passes_input_through():
    rng = np.random.default_rng(2)
    g = RasterGrid(rng.random((20, 20)).astype(np.float32) + 0.5)
    out = lee_filter(g, LeeParams(window=5, noise_cv=1e-9))
    assert np.allclose(out.band(0), g.band(0), rtol=1e-5)


def test_lee_reduces_variance_on_speckle():
    stack = speckled_stack(mean=0.5, enl=4.0, n_scenes=1, size=128)
    grid = stack.grids()[0]
    out = lee_filter(grid, LeeParams(window=5, noise_cv=0.5))  # 1/sqrt(4)
    assert out.band(0).var() < 0.5 * grid.band(0).var()


def test_lee_keeps_nodata_and_ignores_it_in_stats():
    values = np.full((9, 9), 4.0, dtype=np.float32)
    values[4, 4] = np.nan
    out = lee_filter(RasterGrid(values), LeeParams(window=3, noise_cv=0.2))
    assert np.isnan(out.band(0)[4, 4])
    # neighbours of the hole still average over valid pixels only
    assert np.allclose(out.band(0)[3, 3], 4.0)


def test_lee_rejects_multiband():
    g = RasterGrid(np.zeros((2, 8, 8), dtype=np.float32))
    with pytest.raises(ValueError, match="single band"):
        lee_filter(g, LeeParams())


def test_lee_params_validation():
    with pytest.raises(ValueError):
        LeeParams(window=4)
    with pytest.raises(ValueError):
        LeeParams(window=1)
    with pytest.raises(ValueError):
        LeeParams(noise_cv="bogus")
    with pytest.raises(ValueError):
        LeeParams(noise_cv=-0.1)


def test_auto_noise_cv_estimates_speckle_level():
    # homogeneous gamma speckle: local cv around 1/sqrt(L)
    stack = speckled_stack(mean=0.7, enl=9.0, n_scenes=1, size=128)
    band = stack.grids()[0].band(0).astype(np.float64)
    cv = estimate_noise_cv(band, 7)
    assert abs(cv - 1.0 / 3.0) < 0.08


# ---------------------------------------------------------------------------
# multitemporal despeckle
# ---------------------------------------------------------------------------


def test_identical_scenes_pass_through():
    arr = np.random.default_rng(3).random((16, 16)) + 0.2
    stack = make_stack([arr, arr, arr])
    for out in multitemporal_despeckle(stack, LeeParams(window=5, noise_cv=0.3)):
        assert np.array_equal(out.band(0), arr.astype(np.float32))


def test_cv_reduction_on_homogeneous_world():
    stack = speckled_stack(mean=0.4, enl=4.0, n_scenes=10, size=96)
    outputs = multitemporal_despeckle(stack, LeeParams(window=7, noise_cv="auto"))
    ratios = []
    for scene, out in zip(stack.grids(), outputs):
        cv_in = scene.band(0).std() / scene.band(0).mean()
        cv_out = out.band(0).std() / out.band(0).mean()
        ratios.append(cv_out / cv_in)
    assert float(np.mean(ratios)) < 0.6


def test_radiometry_preserved_on_step_edge():
    # two-class world: output contrast within 10% of the noise-free contrast
    codes = np.zeros((96, 96), dtype=np.float32)
    codes[:, 48:] = 1.0
    world = SyntheticWorld(
        class_map=RasterGrid(codes, nodata=-1.0),
        class_params={
            0: ClassParams(mean_backscatter=(0.2,) * 4),
            1: ClassParams(mean_backscatter=(0.8,) * 4),
        },
        enl=4.0,
        seed=11,
    )
    dates = [dt.date(2021, 1, 2) + dt.timedelta(days=5 * i) for i in range(8)]
    stack = SeasonalStack(season=Season.WINTER, scenes=generate_time_series(world, dates))
    outputs = multitemporal_despeckle(stack, LeeParams(window=7, noise_cv="auto"))
    for out in outputs:
        band = out.band(0).astype(np.float64)
        contrast = band[:, 64:].mean() / band[:, :32].mean()
        assert abs(contrast - 4.0) <= 0.4


def test_spatial_mean_preserved_per_scene():
    stack = speckled_stack(mean=0.3, enl=2.0, n_scenes=6, size=96)
    outputs = multitemporal_despeckle(stack, LeeParams(window=7, noise_cv="auto"))
    for scene, out in zip(stack.grids(), outputs):
        before = float(scene.band(0).mean())
        after = float(out.band(0).mean())
        assert abs(after - before) / before < 0.05


def test_outputs_non_negative():
    stack = speckled_stack(mean=0.1, enl=1.0, n_scenes=5, size=64)
    for out in multitemporal_despeckle(stack, LeeParams(window=5, noise_cv="auto")):
        assert np.all(out.band(0) >= 0.0)


def test_nodata_propagates_per_scene():
    a = np.random.default_rng(4).random((12, 12)) + 0.5
    b = a.copy()
    b[2, 3] = np.nan
    stack = make_stack([a, b])
    out_a, out_b = multitemporal_despeckle(stack, LeeParams(window=5, noise_cv=0.2))
    assert not np.any(np.isnan(out_a.band(0)))
    assert np.isnan(out_b.band(0)[2, 3])
    assert np.sum(np.isnan(out_b.band(0))) == 1


def test_empty_stack_rejected():
    with pytest.raises(ValueError):
        SeasonalStack(season=Season.WINTER, scenes=[])
