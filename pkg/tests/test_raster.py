import json
import math

import numpy as np
import pytest

from sarlc.raster import (
    AlignmentError,
    GeoRef,
    RasterFormatError,
    RasterGrid,
    SceneMeta,
    assert_aligned,
    read_raster,
    write_raster,
)


def grid_of(values, nodata=math.nan, geo=None):
    return RasterGrid(np.asarray(values, dtype=np.float32), nodata=nodata, geo=geo)


def test_single_pixel_round_trip(tmp_path):
    g = grid_of([[0.0]])
    write_raster(g, tmp_path / "one")
    back = read_raster(tmp_path / "one")
    assert (tmp_path / "one.bin").stat().st_size == 4
    assert np.array_equal(back.values, g.values)
    assert back.bands == back.width == back.height == 1


def test_nan_positions_preserved(tmp_path):
    values = np.arange(8, dtype=np.float32).reshape(2, 2, 2)
    values[0, 1, 0] = np.nan
    values[1, 0, 1] = np.nan
    g = RasterGrid(values)
    write_raster(g, tmp_path / "g")
    back = read_raster(tmp_path / "g")
    assert np.array_equal(np.isnan(back.values), np.isnan(values))
    assert np.array_equal(back.values[~np.isnan(values)], values[~np.isnan(values)])


def test_cube_payload_size(tmp_path):
    g = RasterGrid(np.zeros((28, 512, 512), dtype=np.float32))
    write_raster(g, tmp_path / "cube")
    # 512 * 512 * 28 * 4 bytes per float32 sample
    assert (tmp_path / "cube.bin").stat().st_size == 512 * 512 * 28 * 4 == 29_360_128


@pytest.mark.parametrize("seed", range(5))
def test_random_round_trip_bitwise(tmp_path, seed):
    rng = np.random.default_rng(seed)
    shape = (rng.integers(1, 4), rng.integers(1, 30), rng.integers(1, 30))
    values = rng.normal(size=shape).astype(np.float32)
    values[rng.random(shape) < 0.1] = np.nan
    geo = GeoRef((10.0, 0.0, 500000.0, 0.0, -10.0, 6000000.0), "EPSG:32633")
    g = RasterGrid(values, geo=geo)
    write_raster(g, tmp_path / f"r{seed}")
    back = read_raster(tmp_path / f"r{seed}")
    assert back.values.tobytes() == g.values.tobytes()
    assert back.geo == geo
    assert math.isnan(back.nodata)


def test_finite_nodata_round_trip(tmp_path):
    g = grid_of([[1.0, -9999.0]], nodata=-9999.0)
    write_raster(g, tmp_path / "f")
    back = read_raster(tmp_path / "f")
    assert back.nodata == -9999.0
    assert np.array_equal(back.valid_mask(), [[[True, False]]])


def test_truncated_payload_rejected(tmp_path):
    g = grid_of([[1.0, 2.0], [3.0, 4.0]])
    write_raster(g, tmp_path / "t")
    raw = (tmp_path / "t.bin").read_bytes()
    (tmp_path / "t.bin").write_bytes(raw[:-1])
    with pytest.raises(RasterFormatError, match="15 bytes"):
        read_raster(tmp_path / "t")


def test_unsupported_dtype_rejected(tmp_path):
    g = grid_of([[1.0]])
    write_raster(g, tmp_path / "d")
    header = json.loads((tmp_path / "d.json").read_text())
    header["dtype"] = "f64"
    (tmp_path / "d.json").write_text(json.dumps(header))
    with pytest.raises(RasterFormatError, match="f64"):
        read_raster(tmp_path / "d")


def test_missing_file_names_path(tmp_path):
    with pytest.raises(FileNotFoundError, match="nowhere"):
        read_raster(tmp_path / "nowhere")


def test_grid_invariants():
    with pytest.raises(ValueError):
        RasterGrid(np.zeros((0, 4, 4), dtype=np.float32))
    with pytest.raises(ValueError):
        RasterGrid(np.zeros(5, dtype=np.float32))
    g = grid_of([[1.0]])
    with pytest.raises(ValueError):
        g.values[0, 0, 0] = 2.0  # immutable after construction


def test_assert_aligned():
    a = grid_of(np.zeros((64, 64)))
    b = grid_of(np.ones((64, 64)))
    assert_aligned([a, b])
    assert_aligned([a])
    c = grid_of(np.zeros((64, 65)))
    with pytest.raises(AlignmentError, match="grid 1"):
        assert_aligned([a, c])
    geo1 = GeoRef((10, 0, 0, 0, -10, 0), "EPSG:4326")
    geo2 = GeoRef((20, 0, 0, 0, -20, 0), "EPSG:4326")
    with pytest.raises(AlignmentError):
        assert_aligned([grid_of(np.zeros((8, 8)), geo=geo1), grid_of(np.zeros((8, 8)), geo=geo2)])


def test_scene_meta_parsing():
    m = SceneMeta(acquisition_date="2021-03-31")
    assert m.acquisition_date.month == 3
    assert m.polarization == "VH"
    assert m.orbit == "descending"
    with pytest.raises(ValueError):
        SceneMeta(acquisition_date="not-a-date")
    d = m.to_dict()
    assert SceneMeta.from_dict(d) == m
