"""Classical comparators: k-means colour clustering and luminance thresholding.

Both label dark ink as urban, which is exactly what the learned model has to
do better than: every black map symbol looks alike radiometrically.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .raster import BinaryMask, Raster

LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class KMeansConfig:
    k: int = 5
    max_iters: int = 100
    tol: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("k must be >= 2")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass(frozen=True)
class ThresholdConfig:
    mode: str = "otsu"
    luminance_cut: Optional[int] = None

    def __post_init__(self):
        if self.mode not in ("otsu", "fixed"):
            raise ValueError("mode must be 'otsu' or 'fixed'")
        if self.mode == "fixed":
            if self.luminance_cut is None or not 0 <= self.luminance_cut <= 255:
                raise ValueError("fixed mode needs luminance_cut in [0, 255]")


@dataclass
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    objective_history: List[float]
    iterations: int


def _rgb(img: Raster) -> np.ndarray:
    if img.channels != 3:
        raise ValueError("baselines need an RGB raster")
    return img.data


def _sq_dist(points, centroids):
    return ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=-1)


def _kmeans_pp(points, weights, k, rng) -> np.ndarray:
    """k-means++ seeding over weighted points (weights are pixel counts)."""
    first = rng.choice(len(points), p=weights / weights.sum())
    centroids = [points[first]]
    d2 = ((points - points[first]) ** 2).sum(axis=1)
    for _ in range(1, k):
        mass = weights * d2
        if mass.sum() <= 0:
            break
        nxt = rng.choice(len(points), p=mass / mass.sum())
        centroids.append(points[nxt])
        d2 = np.minimum(d2, ((points - points[nxt]) ** 2).sum(axis=1))
    return np.array(centroids)


def kmeans_colors(img: Raster, cfg: KMeansConfig = KMeansConfig()) -> KMeansResult:
    """Lloyd's algorithm on normalized RGB.

    Runs on the set of distinct colours weighted by pixel count, which is the
    same objective as clustering every pixel but far cheaper on map scans.
    """
    rgb = _rgb(img).reshape(-1, 3)
    colors, inverse, counts = np.unique(rgb, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    points = colors.astype(np.float64) / 255.0
    weights = counts.astype(np.float64)
    rng = np.random.default_rng(cfg.seed)
    centroids = _kmeans_pp(points, weights, min(cfg.k, len(points)), rng)

    history = []
    it = 0
    for it in range(1, cfg.max_iters + 1):
        d2 = _sq_dist(points, centroids)
        assign = d2.argmin(axis=1)
        history.append(float((weights * d2[np.arange(len(points)), assign]).sum()))
        new = centroids.copy()
        empty = []
        for j in range(len(centroids)):
            sel = assign == j
            if weights[sel].sum() > 0:
                new[j] = (weights[sel, None] * points[sel]).sum(axis=0) / weights[sel].sum()
            else:
                empty.append(j)
        if empty:
            # re-seed empty clusters from the points worst served by the others
            nearest = d2[np.arange(len(points)), assign]
            taken = set()
            for j in empty:
                for idx in np.argsort(-nearest, kind="stable"):
                    if nearest[idx] > 0 and idx not in taken:
                        new[j] = points[idx]
                        taken.add(idx)
                        break
            # anything still unplaced duplicates a live centroid and stays empty
        shift = np.sqrt(((new - centroids) ** 2).sum(axis=1)).max()
        centroids = new
        if shift < cfg.tol:
            break
    d2 = _sq_dist(points, centroids)
    assign = d2.argmin(axis=1)
    return KMeansResult(centroids, assign[inverse].reshape(img.height, img.width), history, it)


def kmeans_segment(img: Raster, cfg: KMeansConfig = KMeansConfig()) -> BinaryMask:
    """Urban = the cluster whose centroid has the lowest luminance."""
    res = kmeans_colors(img, cfg)
    present = np.unique(res.labels)
    luma = res.centroids[present] @ LUMA
    urban = present[int(np.argmin(luma))]
    return BinaryMask((res.labels == urban).astype(np.uint8), geo=img.geo, crs=img.crs)


def luminance8(img: Raster) -> np.ndarray:
    lum = _rgb(img).astype(np.float64) @ LUMA
    return np.clip(np.rint(lum), 0, 255).astype(np.uint8)


def otsu_cut(lum: np.ndarray) -> int:
    """Cut t (pixels with value < t form the dark class) maximising between-class variance.

    When several cuts tie, the middle of the tied run is returned so a gap
    between two histogram modes is split down the centre.
    """
    hist = np.bincount(lum.ravel(), minlength=256).astype(np.float64)
    total = hist.sum()
    levels = np.arange(256, dtype=np.float64)
    w0 = np.cumsum(hist)[:-1]               # mass below cut t = 1..255
    s0 = np.cumsum(hist * levels)[:-1]
    w1 = total - w0
    mu_all = (hist * levels).sum()
    with np.errstate(divide="ignore", invalid="ignore"):
        between = (s0 * w1 - (mu_all - s0) * w0) ** 2 / (w0 * w1)
    between = np.where((w0 > 0) & (w1 > 0), between, -1.0)
    best = between.max()
    if best < 0:
        return 128
    ties = np.flatnonzero(np.isclose(between, best, rtol=1e-12, atol=0.0))
    return int((ties[0] + ties[-1]) // 2) + 1


def threshold_segment(img: Raster, cfg: ThresholdConfig = ThresholdConfig()) -> BinaryMask:
    lum = luminance8(img)
    cut = otsu_cut(lum) if cfg.mode == "otsu" else cfg.luminance_cut
    return BinaryMask((lum < cut).astype(np.uint8), geo=img.geo, crs=img.crs)
