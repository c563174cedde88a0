"""Raster containers and bit-exact file I/O.

A raster on disk is a pair of files sharing a stem: ``<stem>.json`` carries
the header (width, height, bands, nodata, geo, byte_order, dtype) and
``<stem>.bin`` carries raw little-endian float32 samples, band-sequential and
row-major within each band. Reading back a written grid reproduces it bit for
bit, including NaN payloads, which keeps every downstream comparison exact.
"""

from __future__ import annotations

import datetime as _dt
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

HEADER_SUFFIX = ".json"
PAYLOAD_SUFFIX = ".bin"


class RasterFormatError(ValueError):
    """Raised when a raster file pair is malformed or inconsistent."""


class AlignmentError(ValueError):
    """Raised when grids that must share a pixel lattice do not."""


@dataclass(frozen=True)
class GeoRef:
    """Affine georeferencing: (a, b, c, d, e, f) mapping pixel to world."""

    transform: tuple[float, float, float, float, float, float]
    crs: str

    def __post_init__(self):
        if len(self.transform) != 6:
            raise ValueError("geo transform needs exactly 6 coefficients")
        object.__setattr__(self, "transform", tuple(float(v) for v in self.transform))


@dataclass(frozen=True)
class RasterGrid:
    """Immutable float32 grid, shape (bands, height, width).

    ``nodata`` is a sentinel value; by default NaN. Use :meth:`valid_mask`
    rather than equality checks, so NaN sentinels behave.
    """

    values: np.ndarray
    nodata: float = math.nan
    geo: GeoRef | None = None

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim == 2:
            v = v[np.newaxis, :, :]
        if v.ndim != 3:
            raise ValueError(f"values must be 2-D or 3-D, got {v.ndim}-D")
        if v.dtype != np.float32:
            v = v.astype(np.float32)
        if any(dim < 1 for dim in v.shape):
            raise ValueError(f"empty grid dimensions {v.shape}")
        if not v.flags.c_contiguous:
            v = np.ascontiguousarray(v)
        v = v.view()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "nodata", float(self.nodata))

    @property
    def bands(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    def band(self, index: int) -> np.ndarray:
        """Read-only 2-D view of one band."""
        return self.values[index]

    def valid_mask(self) -> np.ndarray:
        """Boolean array, True where the sample is not the nodata sentinel."""
        if math.isnan(self.nodata):
            return ~np.isnan(self.values)
        return self.values != np.float32(self.nodata)

    def is_nodata(self) -> np.ndarray:
        return ~self.valid_mask()

    def with_values(self, values: np.ndarray) -> "RasterGrid":
        """New grid with identical metadata and fresh samples."""
        return RasterGrid(values, nodata=self.nodata, geo=self.geo)

    def same_lattice(self, other: "RasterGrid") -> bool:
        if (self.width, self.height) != (other.width, other.height):
            return False
        if self.geo is not None and other.geo is not None:
            return self.geo.transform == other.geo.transform
        return True


@dataclass(frozen=True)
class SceneMeta:
    """Acquisition descriptors for one SAR scene."""

    acquisition_date: _dt.date
    orbit: str = "descending"
    polarization: str = "VH"
    platform: str = "S1A"

    def __post_init__(self):
        if isinstance(self.acquisition_date, str):
            object.__setattr__(
                self, "acquisition_date", _dt.date.fromisoformat(self.acquisition_date)
            )
        elif not isinstance(self.acquisition_date, _dt.date):
            raise ValueError(f"not a date: {self.acquisition_date!r}")

    def to_dict(self) -> dict:
        return {
            "date": self.acquisition_date.isoformat(),
            "orbit": self.orbit,
            "polarization": self.polarization,
            "platform": self.platform,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneMeta":
        return cls(
            acquisition_date=_dt.date.fromisoformat(d["date"]),
            orbit=d.get("orbit", "descending"),
            polarization=d.get("polarization", "VH"),
            platform=d.get("platform", "S1A"),
        )


def _stem(path: str | Path) -> Path:
    p = Path(path)
    if p.suffix in (HEADER_SUFFIX, PAYLOAD_SUFFIX):
        p = p.with_suffix("")
    return p


def write_raster(grid: RasterGrid, path: str | Path) -> None:
    """Write ``<path>.json`` + ``<path>.bin``; bit-exact round trip."""
    stem = _stem(path)
    header = {
        "width": grid.width,
        "height": grid.height,
        "bands": grid.bands,
        "nodata": grid.nodata,
        "geo": None
        if grid.geo is None
        else {"transform": list(grid.geo.transform), "crs": grid.geo.crs},
        "byte_order": "LE",
        "dtype": "f32",
    }
    try:
        with open(stem.with_suffix(HEADER_SUFFIX), "w") as fh:
            json.dump(header, fh)
            fh.write("\n")
        payload = np.ascontiguousarray(grid.values, dtype="<f4")
        with open(stem.with_suffix(PAYLOAD_SUFFIX), "wb") as fh:
            fh.write(payload.tobytes())
    except OSError as exc:
        raise OSError(f"cannot write raster {stem}: {exc}") from exc


def read_raster(path: str | Path) -> RasterGrid:
    """Read a raster pair written by :func:`write_raster`."""
    stem = _stem(path)
    header_path = stem.with_suffix(HEADER_SUFFIX)
    payload_path = stem.with_suffix(PAYLOAD_SUFFIX)
    for p in (header_path, payload_path):
        if not p.exists():
            raise FileNotFoundError(f"missing raster file {p}")
    with open(header_path) as fh:
        header = json.load(fh)
    dtype = header.get("dtype")
    if dtype != "f32":
        raise RasterFormatError(f"{header_path}: unsupported dtype {dtype!r}")
    if header.get("byte_order") != "LE":
        raise RasterFormatError(
            f"{header_path}: unsupported byte order {header.get('byte_order')!r}"
        )
    width, height, bands = (int(header[k]) for k in ("width", "height", "bands"))
    expected = width * height * bands * 4
    raw = payload_path.read_bytes()
    if len(raw) != expected:
        raise RasterFormatError(
            f"{payload_path}: payload is {len(raw)} bytes, header implies {expected}"
        )
    values = np.frombuffer(raw, dtype="<f4").reshape(bands, height, width)
    geo = None
    if header.get("geo") is not None:
        geo = GeoRef(tuple(header["geo"]["transform"]), header["geo"]["crs"])
    nodata = header.get("nodata")
    nodata = math.nan if nodata is None else float(nodata)
    return RasterGrid(values, nodata=nodata, geo=geo)


def assert_aligned(grids: list[RasterGrid]) -> None:
    """All grids must share width, height and (when both have one) geo."""
    if not grids:
        raise ValueError("no grids to align")
    ref = grids[0]
    for i, g in enumerate(grids[1:], start=1):
        if (g.width, g.height) != (ref.width, ref.height):
            raise AlignmentError(
                f"grid {i} is {g.width}x{g.height}, expected {ref.width}x{ref.height}"
            )
        if ref.geo is not None and g.geo is not None and ref.geo.transform != g.geo.transform:
            raise AlignmentError(f"grid {i} geo transform differs from grid 0")
