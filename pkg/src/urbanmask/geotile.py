"""Split rasters into fixed-size patches, stitch them back, and mosaic tiles."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .raster import BinaryMask, Geotransform, Raster

PAD_MODES = ("reflect", "zero")


class AssemblyError(ValueError):
    pass


class AlignmentError(ValueError):
    pass


class CRSMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class PatchGrid:
    """Layout of a patch decomposition.

    With ``overlap`` > 0 neighbouring windows share ``2 * overlap`` pixels of
    context and only the central ``patch - 2 * overlap`` square of each one
    is kept on merge.  ``overlap = 0`` is the plain non-overlapping grid.
    """

    source_w: int
    source_h: int
    patch: int
    cols: int
    rows: int
    pad_right: int
    pad_bottom: int
    pad_mode: str
    overlap: int = 0

    @property
    def stride(self) -> int:
        return self.patch - 2 * self.overlap

    def __len__(self) -> int:
        return self.cols * self.rows


@dataclass
class Patch:
    grid_col: int
    grid_row: int
    pixels: np.ndarray


def make_grid(width: int, height: int, patch: int = 256, pad_mode: str = "reflect",
              overlap: int = 0) -> PatchGrid:
    if pad_mode not in PAD_MODES:
        raise ValueError(f"pad_mode must be one of {PAD_MODES}")
    if width <= 0 or height <= 0:
        raise ValueError("cannot split an empty raster")
    if patch < 16:
        raise ValueError(f"patch size {patch} < 16")
    if patch > 4 * max(width, height):
        raise ValueError(f"patch size {patch} is more than 4x the raster size {width}x{height}")
    if overlap < 0 or 2 * overlap >= patch:
        raise ValueError(f"overlap {overlap} incompatible with patch {patch}")
    stride = patch - 2 * overlap
    cols = math.ceil(width / stride)
    rows = math.ceil(height / stride)
    return PatchGrid(width, height, patch, cols, rows,
                     cols * stride - width, rows * stride - height, pad_mode, overlap)


def _pixels(r) -> np.ndarray:
    return r.data if isinstance(r, (Raster, BinaryMask)) else np.asarray(r)


def pad_to_grid(arr: np.ndarray, grid: PatchGrid) -> np.ndarray:
    o = grid.overlap
    widths = [(o, grid.pad_bottom + o), (o, grid.pad_right + o)] + [(0, 0)] * (arr.ndim - 2)
    if grid.pad_mode == "zero":
        return np.pad(arr, widths, mode="constant")
    if min(arr.shape[:2]) == 1:
        # nothing to mirror along a single-pixel axis
        return np.pad(arr, widths, mode="edge")
    return np.pad(arr, widths, mode="reflect")


def split(r: Union[Raster, BinaryMask, np.ndarray], patch: int = 256, pad_mode: str = "reflect",
          overlap: int = 0) -> Tuple[PatchGrid, List[Patch]]:
    """Cut ``r`` into patch x patch windows in row-major grid order."""
    arr = _pixels(r)
    grid = make_grid(arr.shape[1], arr.shape[0], patch, pad_mode, overlap)
    padded = pad_to_grid(arr, grid)
    s = grid.stride
    patches = []
    for row in range(grid.rows):
        for col in range(grid.cols):
            win = padded[row * s:row * s + patch, col * s:col * s + patch]
            patches.append(Patch(col, row, win.copy()))
    return grid, patches


def merge_patches(grid: PatchGrid, patches: Sequence[Patch], geo: Optional[Geotransform] = None,
                  crs: Optional[str] = None, as_mask: Optional[bool] = None):
    """Reassemble patches keyed by grid position and crop the padding away.

    Returns a :class:`BinaryMask` for 2-D {0,1} patches (or when ``as_mask``
    is set), otherwise a :class:`Raster`.
    """
    seen = {}
    for p in patches:
        key = (p.grid_col, p.grid_row)
        if not (0 <= p.grid_col < grid.cols and 0 <= p.grid_row < grid.rows):
            raise AssemblyError(f"patch at {key} lies outside the {grid.cols}x{grid.rows} grid")
        if key in seen:
            raise AssemblyError(f"duplicate patch at grid cell {key}")
        if p.pixels.shape[:2] != (grid.patch, grid.patch):
            raise AssemblyError(f"patch at {key} has shape {p.pixels.shape[:2]}")
        seen[key] = p
    missing = [(c, r) for r in range(grid.rows) for c in range(grid.cols) if (c, r) not in seen]
    if missing:
        raise AssemblyError(f"{len(missing)} grid cells missing, first {missing[0]}")

    sample = next(iter(seen.values())).pixels
    s, o = grid.stride, grid.overlap
    out = np.empty((grid.rows * s, grid.cols * s) + sample.shape[2:], dtype=sample.dtype)
    for (col, row), p in seen.items():
        out[row * s:(row + 1) * s, col * s:(col + 1) * s] = p.pixels[o:o + s, o:o + s]
    out = out[:grid.source_h, :grid.source_w]
    if as_mask is None:
        as_mask = out.ndim == 2 and out.dtype == np.uint8 and bool(np.isin(out, (0, 1)).all())
    if as_mask:
        return BinaryMask(out, geo=geo, crs=crs)
    return Raster(out, geo=geo, crs=crs)


def _offset(delta: float, size: float, what: str) -> int:
    steps = delta / size
    k = round(steps)
    if abs(steps - k) > 1e-6:
        raise AlignmentError(f"{what} offset {steps} is not a whole number of pixels")
    return int(k)


def mosaic_tiles(tiles: Sequence[BinaryMask]) -> BinaryMask:
    """Place georeferenced masks on their union grid; overlaps combine by OR."""
    if not tiles:
        raise ValueError("no tiles to mosaic")
    ref = tiles[0]
    for t in tiles:
        if t.geo is None:
            raise AlignmentError("every tile needs a geotransform")
        if not t.geo.is_north_up:
            raise AlignmentError("rotated geotransforms are not supported")
        if (t.geo.pixel_w, t.geo.pixel_h) != (ref.geo.pixel_w, ref.geo.pixel_h):
            raise AlignmentError("tiles have different pixel sizes")
        if t.crs != ref.crs:
            raise CRSMismatchError(f"CRS mismatch: {ref.crs!r} vs {t.crs!r}")

    pw, ph = ref.geo.pixel_w, ref.geo.pixel_h
    # the output origin is copied from an actual tile so it never depends on tile order
    pick_x = min if pw > 0 else max
    pick_y = min if ph > 0 else max
    ox = pick_x(t.geo.origin_x for t in tiles)
    oy = pick_y(t.geo.origin_y for t in tiles)
    placed = []
    width = height = 0
    for t in tiles:
        c0 = _offset(t.geo.origin_x - ox, pw, "column")
        r0 = _offset(t.geo.origin_y - oy, ph, "row")
        placed.append((c0, r0, t))
        width = max(width, c0 + t.width)
        height = max(height, r0 + t.height)
    out = np.zeros((height, width), dtype=np.uint8)
    for c0, r0, t in placed:
        out[r0:r0 + t.height, c0:c0 + t.width] |= t.data
    geo = Geotransform(ox, oy, pw, ph)
    return BinaryMask(out, geo=geo, crs=ref.crs)
