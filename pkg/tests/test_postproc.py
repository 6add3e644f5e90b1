import numpy as np
import pytest

from urbanmask.postproc import ResampleSpec, block_counts, majority_resample
from urbanmask.raster import BinaryMask, Geotransform, pixel_to_world


def _block(ones, size=20):
    flat = np.zeros(size * size, np.uint8)
    flat[:ones] = 1
    return BinaryMask(flat.reshape(size, size))


def test_strict_majority():
    assert majority_resample(_block(201)).data.tolist() == [[1]]
    assert majority_resample(_block(200)).data.tolist() == [[0]]
    assert majority_resample(_block(1)).data.tolist() == [[0]]


def test_output_dims_are_ceil():
    m = BinaryMask(np.ones((45, 61), np.uint8))
    out = majority_resample(m)
    assert out.data.shape == (3, 4)
    assert out.data.all()


def test_partial_border_block_votes_over_its_pixels():
    data = np.zeros((21, 21), np.uint8)
    data[20, 20] = 1
    out = majority_resample(BinaryMask(data))
    assert out.data.tolist() == [[0, 0], [0, 1]]
    ones, sizes = block_counts(data, 20)
    assert sizes.tolist() == [[400, 20], [20, 1]]


def test_geotransform_rescaled():
    geo = Geotransform(600002.5, 6799997.5, 5.0, -5.0)
    out = majority_resample(BinaryMask(np.zeros((40, 40), np.uint8), geo=geo, crs="EPSG:2154"))
    assert out.geo.pixel_w == 100.0 and out.geo.pixel_h == -100.0
    # the new pixel centre sits at the centre of its 20x20 block
    assert pixel_to_world(out.geo, 0, 0) == pixel_to_world(geo, 9.5, 9.5)
    assert out.crs == "EPSG:2154"


def test_monotone_under_added_ones():
    rng = np.random.default_rng(0)
    for _ in range(50):
        m = (rng.uniform(size=(40, 40)) < rng.uniform()).astype(np.uint8)
        more = m | (rng.uniform(size=m.shape) < 0.1)
        a = majority_resample(BinaryMask(m)).data
        b = majority_resample(BinaryMask(more.astype(np.uint8))).data
        assert (b >= a).all()


def test_spec_validation():
    with pytest.raises(ValueError):
        ResampleSpec(factor=1)
    with pytest.raises(ValueError):
        ResampleSpec(tie_rule="positive")
