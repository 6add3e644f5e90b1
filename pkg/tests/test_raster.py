import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from urbanmask.raster import (BinaryMask, Geotransform, Raster, RasterFormatError,
                              UnsupportedRasterError, pixel_to_world, read_image, read_mask,
                              world_to_pixel, write_image)


def test_geotransform_rejects_degenerate():
    with pytest.raises(ValueError):
        Geotransform(0, 0, 0.0, -5.0)
    with pytest.raises(ValueError):
        Geotransform(0, 0, 1.0, 1.0, rot_xy=1.0, rot_yx=1.0)


def test_pixel_to_world_north_up():
    geo = Geotransform(600002.5, 6799997.5, 5.0, -5.0)
    assert pixel_to_world(geo, 0, 0) == (600002.5, 6799997.5)
    assert pixel_to_world(geo, 10, 4) == (600052.5, 6799977.5)
    assert geo.is_north_up


@settings(max_examples=200, deadline=None)
@given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6), st.floats(0.1, 100), st.floats(-100, -0.1),
       st.floats(-1, 1), st.floats(-1, 1), st.floats(-5000, 5000), st.floats(-5000, 5000))
def test_world_pixel_round_trip(ox, oy, pw, ph, rx, ry, col, row):
    geo = Geotransform(ox, oy, pw, ph, rx, ry)
    x, y = pixel_to_world(geo, col, row)
    c2, r2 = world_to_pixel(geo, x, y)
    assert c2 == pytest.approx(col, abs=1e-6 * max(1.0, abs(ox) + abs(oy)))
    assert r2 == pytest.approx(row, abs=1e-6 * max(1.0, abs(ox) + abs(oy)))


def test_raster_validation():
    assert Raster(np.zeros((4, 5), np.uint8)).channels == 1
    with pytest.raises(ValueError):
        Raster(np.zeros((4, 5, 2), np.uint8))
    with pytest.raises(ValueError):
        Raster(np.zeros((4, 5, 3), np.float32))
    with pytest.raises(ValueError):
        BinaryMask(np.full((3, 3), 2, np.uint8))
    assert BinaryMask(np.ones((2, 2), bool)).data.dtype == np.uint8


def test_image_round_trip_with_sidecars(tmp_path):
    rng = np.random.default_rng(0)
    geo = Geotransform(600002.5, 6799997.5, 5.0, -5.0, 0.25, -0.125)
    crs = "EPSG:2154\r\nline two\n"
    r = Raster(rng.integers(0, 256, (7, 9, 3), dtype=np.uint8), geo=geo, crs=crs)
    write_image(r, tmp_path / "a.ppm")
    back = read_image(tmp_path / "a.ppm")
    assert np.array_equal(back.data, r.data)
    assert back.geo == geo
    assert back.crs == crs


def test_mask_written_as_0_255(tmp_path):
    m = BinaryMask(np.array([[0, 1], [1, 0]], np.uint8))
    write_image(m, tmp_path / "m.pgm")
    raw = read_image(tmp_path / "m.pgm").data[:, :, 0]
    assert raw.tolist() == [[0, 255], [255, 0]]
    assert np.array_equal(read_mask(tmp_path / "m.pgm").data, m.data)
    assert not (tmp_path / "m.wld").exists()


def test_stale_sidecars_removed(tmp_path):
    geo = Geotransform(0.5, 0.5, 1.0, 1.0)
    write_image(BinaryMask(np.zeros((2, 2), np.uint8), geo=geo, crs="X"), tmp_path / "m.pgm")
    write_image(BinaryMask(np.zeros((2, 2), np.uint8)), tmp_path / "m.pgm")
    back = read_image(tmp_path / "m.pgm")
    assert back.geo is None and back.crs is None


def test_header_comments_accepted(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5\n# made by hand\n2 1\n# another\n255\n\x00\xff")
    assert read_image(p).data[:, :, 0].tolist() == [[0, 255]]


def test_bad_files(tmp_path):
    p = tmp_path / "x.pgm"
    p.write_bytes(b"P2\n1 1\n255\n0")
    with pytest.raises(RasterFormatError):
        read_image(p)
    p.write_bytes(b"P5\n1 1\n65535\n\x00\x00")
    with pytest.raises(UnsupportedRasterError):
        read_image(p)
    p.write_bytes(b"P5\n4 4\n255\n\x00")
    with pytest.raises(OSError):
        read_image(p)
    q = tmp_path / "rgb.ppm"
    write_image(Raster(np.zeros((2, 2, 3), np.uint8)), q)
    with pytest.raises(UnsupportedRasterError):
        read_mask(q)
