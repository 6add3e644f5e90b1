"""Majority-vote block resampling of binary masks."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .raster import BinaryMask, Geotransform


@dataclass(frozen=True)
class ResampleSpec:
    factor: int = 20
    tie_rule: str = "negative"

    def __post_init__(self):
        if self.factor < 2:
            raise ValueError("factor must be >= 2")
        if self.tie_rule != "negative":
            raise ValueError("only the 'negative' tie rule is supported")


def block_counts(data: np.ndarray, factor: int):
    """Number of ones and number of pixels in each factor x factor block."""
    h, w = data.shape
    oh, ow = math.ceil(h / factor), math.ceil(w / factor)
    padded = np.zeros((oh * factor, ow * factor), dtype=np.int64)
    padded[:h, :w] = data
    ones = padded.reshape(oh, factor, ow, factor).sum(axis=(1, 3))
    rows = np.minimum(factor, h - factor * np.arange(oh))
    cols = np.minimum(factor, w - factor * np.arange(ow))
    return ones, np.outer(rows, cols)


def majority_resample(mask: BinaryMask, spec: ResampleSpec = ResampleSpec()) -> BinaryMask:
    """Each output pixel is 1 iff strictly more than half its block is 1.

    Border blocks that hang off the raster vote over the pixels they
    actually cover.  The geotransform is rescaled so that the new origin is
    the centre of the first block.
    """
    f = spec.factor
    ones, sizes = block_counts(mask.data, f)
    out = (2 * ones > sizes).astype(np.uint8)
    geo = None
    if mask.geo is not None:
        g = mask.geo
        half = (f - 1) / 2.0
        geo = Geotransform(
            origin_x=g.origin_x + half * g.pixel_w + half * g.rot_xy,
            origin_y=g.origin_y + half * g.rot_yx + half * g.pixel_h,
            pixel_w=g.pixel_w * f,
            pixel_h=g.pixel_h * f,
            rot_xy=g.rot_xy * f,
            rot_yx=g.rot_yx * f,
        )
    return BinaryMask(out, geo=geo, crs=mask.crs)
