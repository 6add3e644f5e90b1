import numpy as np
import pytest

import oracles
from urbanmask.baselines import (KMeansConfig, ThresholdConfig, kmeans_colors, kmeans_segment,
                                 luminance8, otsu_cut, threshold_segment)
from urbanmask.raster import Raster


def _two_tone(rng, shape=(40, 40)):
    dark = rng.uniform(size=shape) < 0.3
    img = np.where(dark[..., None], [30, 30, 30], [230, 220, 200]).astype(np.uint8)
    noise = rng.integers(-10, 11, img.shape)
    return Raster(np.clip(img + noise, 0, 255).astype(np.uint8)), dark.astype(np.uint8)


def test_otsu_matches_exhaustive_search():
    rng = np.random.default_rng(0)
    for trial in range(40):
        k = rng.integers(1, 4)
        centres = rng.integers(0, 256, k)
        lum = np.clip(np.concatenate([rng.normal(c, rng.uniform(2, 30), rng.integers(20, 400))
                                      for c in centres]), 0, 255).astype(np.uint8)
        if np.unique(lum).size < 2:
            continue
        best, cuts = oracles.otsu_exhaustive(lum)
        t = otsu_cut(lum)
        assert cuts[0] <= t <= cuts[-1]


def test_otsu_splits_bimodal_gap_in_the_middle():
    lum = np.array([10] * 50 + [200] * 50, np.uint8)
    _, cuts = oracles.otsu_exhaustive(lum)
    assert (cuts[0], cuts[-1]) == (11, 200)
    assert otsu_cut(lum) == 105


def test_threshold_segment_finds_dark_ink():
    img, truth = _two_tone(np.random.default_rng(1))
    assert np.array_equal(threshold_segment(img).data, truth)
    fixed = threshold_segment(img, ThresholdConfig("fixed", 0))
    assert fixed.data.sum() == 0
    with pytest.raises(ValueError):
        ThresholdConfig("fixed")


def test_luminance_weights():
    img = Raster(np.array([[[255, 0, 0], [0, 255, 0], [0, 0, 255]]], np.uint8))
    assert luminance8(img).tolist() == [[76, 150, 29]]


def test_kmeans_objective_never_increases():
    rng = np.random.default_rng(2)
    img = Raster(rng.integers(0, 256, (30, 30, 3), dtype=np.uint8))
    for seed in range(5):
        res = kmeans_colors(img, KMeansConfig(k=5, seed=seed))
        h = np.array(res.objective_history)
        assert (np.diff(h) <= 1e-9 * h[0]).all()
        assert res.labels.shape == (30, 30)


def test_kmeans_segment_picks_dark_cluster():
    img, truth = _two_tone(np.random.default_rng(3))
    seg = kmeans_segment(img, KMeansConfig(k=2, seed=0))
    assert np.array_equal(seg.data, truth)


def test_kmeans_deterministic_and_handles_few_colours():
    img = Raster(np.array([[[0, 0, 0], [255, 255, 255]]], np.uint8))
    a = kmeans_colors(img, KMeansConfig(k=5))
    assert a.centroids.shape[0] == 2
    assert kmeans_segment(img).data.tolist() == [[1, 0]]
    img2, _ = _two_tone(np.random.default_rng(4))
    r1, r2 = kmeans_colors(img2), kmeans_colors(img2)
    assert np.array_equal(r1.labels, r2.labels)


def test_rgb_required():
    with pytest.raises(ValueError):
        threshold_segment(Raster(np.zeros((2, 2), np.uint8)))
    with pytest.raises(ValueError):
        KMeansConfig(k=1)
