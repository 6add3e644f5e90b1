"""In-memory rasters and binary PPM/PGM I/O with world-file georeferencing.

Images are stored as 8-bit ``numpy`` arrays.  Georeferencing travels in two
sidecars next to the image: a six-line ``.wld`` world file and a ``.crs``
file holding the coordinate reference system as opaque text.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np


class RasterFormatError(ValueError):
    """Malformed PPM/PGM header or world file."""


class UnsupportedRasterError(ValueError):
    """Well-formed file using a feature this reader does not handle."""


@dataclass(frozen=True)
class Geotransform:
    """Affine pixel-to-world mapping.

    ``origin_x``/``origin_y`` are the world coordinates of the *center* of
    pixel (0, 0), matching the world-file convention.
    """

    origin_x: float
    origin_y: float
    pixel_w: float
    pixel_h: float
    rot_xy: float = 0.0
    rot_yx: float = 0.0

    def __post_init__(self):
        if self.pixel_w == 0 or self.pixel_h == 0:
            raise ValueError("pixel_w and pixel_h must be non-zero")
        if self.determinant == 0:
            raise ValueError("geotransform is not invertible")

    @property
    def determinant(self) -> float:
        return self.pixel_w * self.pixel_h - self.rot_xy * self.rot_yx

    @property
    def is_north_up(self) -> bool:
        return self.rot_xy == 0 and self.rot_yx == 0


def pixel_to_world(geo: Geotransform, col, row) -> Tuple[float, float]:
    x = geo.origin_x + col * geo.pixel_w + row * geo.rot_xy
    y = geo.origin_y + col * geo.rot_yx + row * geo.pixel_h
    return x, y


def world_to_pixel(geo: Geotransform, x, y) -> Tuple[float, float]:
    """Inverse of :func:`pixel_to_world`; returns fractional (col, row)."""
    dx = x - geo.origin_x
    dy = y - geo.origin_y
    det = geo.determinant
    col = (geo.pixel_h * dx - geo.rot_xy * dy) / det
    row = (geo.pixel_w * dy - geo.rot_yx * dx) / det
    return col, row


@dataclass
class Raster:
    """8-bit image, ``data`` shaped (height, width, channels)."""

    data: np.ndarray
    geo: Optional[Geotransform] = None
    crs: Optional[str] = None

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise ValueError(f"raster data must be (H, W, 1|3), got {data.shape}")
        if data.dtype != np.uint8:
            raise ValueError(f"raster data must be uint8, got {data.dtype}")
        self.data = data

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass
class BinaryMask:
    """Per-pixel {0, 1} mask, ``data`` shaped (height, width)."""

    data: np.ndarray
    geo: Optional[Geotransform] = None
    crs: Optional[str] = None

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 3 and data.shape[2] == 1:
            data = data[:, :, 0]
        if data.ndim != 2:
            raise ValueError(f"mask data must be 2-D, got {data.shape}")
        if data.dtype == bool:
            data = data.astype(np.uint8)
        if data.size and not np.isin(data, (0, 1)).all():
            raise ValueError("mask values must be exactly 0 or 1")
        self.data = data.astype(np.uint8, copy=False)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


PathLike = Union[str, os.PathLike]

_TOKEN = re.compile(rb"\s*(#[^\n]*\n\s*)*(\S+)")


def _header_tokens(buf: bytes, count: int):
    pos = 0
    tokens = []
    for _ in range(count):
        m = _TOKEN.match(buf, pos)
        if m is None:
            raise RasterFormatError("truncated header")
        tokens.append(m.group(2))
        pos = m.end()
    # exactly one whitespace byte separates maxval from the payload
    if pos >= len(buf) or buf[pos:pos + 1] not in b" \t\r\n":
        raise RasterFormatError("missing whitespace after header")
    return tokens, pos + 1


def world_file_path(path: PathLike) -> Path:
    return Path(path).with_suffix(".wld")


def crs_file_path(path: PathLike) -> Path:
    return Path(path).with_suffix(".crs")


def read_world_file(path: PathLike) -> Geotransform:
    text = Path(path).read_text()
    parts = text.split()
    if len(parts) != 6:
        raise RasterFormatError(f"{path}: world file needs 6 values, found {len(parts)}")
    try:
        a, d, b, e, c, f = (float(p) for p in parts)
    except ValueError as exc:
        raise RasterFormatError(f"{path}: {exc}") from None
    return Geotransform(origin_x=c, origin_y=f, pixel_w=a, pixel_h=e, rot_xy=b, rot_yx=d)


def write_world_file(geo: Geotransform, path: PathLike) -> None:
    values = (geo.pixel_w, geo.rot_yx, geo.rot_xy, geo.pixel_h, geo.origin_x, geo.origin_y)
    # repr keeps the shortest string that round-trips the double exactly
    Path(path).write_text("".join(repr(float(v)) + "\n" for v in values))


def read_image(path: PathLike) -> Raster:
    """Read a binary P6/P5 file plus optional ``.wld``/``.crs`` sidecars."""
    path = Path(path)
    buf = path.read_bytes()
    magic = buf[:2]
    if magic == b"P6":
        channels = 3
    elif magic == b"P5":
        channels = 1
    else:
        raise RasterFormatError(f"{path}: not a binary PPM/PGM (magic {magic!r})")
    tokens, offset = _header_tokens(buf[2:], 3)
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise RasterFormatError(f"{path}: non-integer header field") from None
    if width <= 0 or height <= 0:
        raise RasterFormatError(f"{path}: bad dimensions {width}x{height}")
    if maxval != 255:
        raise UnsupportedRasterError(f"{path}: maxval {maxval} not supported (need 255)")
    start = 2 + offset
    n = width * height * channels
    payload = buf[start:start + n]
    if len(payload) < n:
        raise OSError(f"{path}: truncated payload ({len(payload)} of {n} bytes)")
    data = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels).copy()

    geo = None
    wld = world_file_path(path)
    if wld.exists():
        geo = read_world_file(wld)
    crs = None
    crs_path = crs_file_path(path)
    if crs_path.exists():
        with open(crs_path, newline="") as fh:
            crs = fh.read()
    return Raster(data, geo=geo, crs=crs)


def read_mask(path: PathLike, threshold: int = 128) -> BinaryMask:
    """Read a single-channel file as a mask: byte > threshold is 1."""
    r = read_image(path)
    if r.channels != 1:
        raise UnsupportedRasterError(f"{path}: mask must be single-channel")
    return BinaryMask((r.data[:, :, 0] > threshold).astype(np.uint8), geo=r.geo, crs=r.crs)


def write_image(r: Union[Raster, BinaryMask], path: PathLike) -> None:
    path = Path(path)
    if isinstance(r, BinaryMask):
        data = (r.data * 255).astype(np.uint8)[:, :, None]
    else:
        data = r.data
    height, width, channels = data.shape
    magic = b"P6" if channels == 3 else b"P5"
    header = magic + b"\n%d %d\n255\n" % (width, height)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(data).tobytes())

    wld = world_file_path(path)
    if r.geo is not None:
        write_world_file(r.geo, wld)
    elif wld.exists():
        wld.unlink()
    crs_path = crs_file_path(path)
    if r.crs is not None:
        with open(crs_path, "w", newline="") as fh:
            fh.write(r.crs)
    elif crs_path.exists():
        crs_path.unlink()
