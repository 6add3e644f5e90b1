import numpy as np
import pytest

from urbanmask.baselines import luminance8
from urbanmask.raster import read_image, read_mask
from urbanmask.synthmap import (DEFAULT_CRS, PIXEL_SIZE, SceneSpec, generate_corpus,
                                generate_scene, hard_spec)


@pytest.mark.parametrize("seed", range(8))
def test_urban_fraction_near_target(seed):
    pair = generate_scene(SceneSpec(seed=seed))
    assert abs(pair.truth.data.mean() - 0.2) <= 0.05
    assert pair.image.data.shape == (128, 128, 3)


def test_scene_is_deterministic():
    a, b = generate_scene(SceneSpec(seed=5)), generate_scene(SceneSpec(seed=5))
    assert np.array_equal(a.image.data, b.image.data)
    assert np.array_equal(a.truth.data, b.truth.data)
    assert a.manifest_text() == b.manifest_text()
    c = generate_scene(SceneSpec(seed=6))
    assert not np.array_equal(a.image.data, c.image.data)


def test_manifest_lines_cover_truth():
    pair = generate_scene(SceneSpec(seed=1))
    urban = [e for e in pair.manifest if e.urban]
    union = np.zeros_like(pair.truth.data, dtype=bool)
    for e in urban:
        union |= e.footprint
    assert np.array_equal(union, pair.truth.data.astype(bool))
    for line in pair.manifest_text().splitlines():
        kind, *nums = line.split()
        assert len(nums) == 4 and all(n.lstrip("-").isdigit() for n in nums)


def test_distractors_are_dark_but_not_urban():
    pair = generate_scene(hard_spec(SceneSpec(seed=2)))
    lum = luminance8(pair.image)
    dark_background = (lum < 110) & (pair.truth.data == 0)
    assert dark_background.sum() > 100
    kinds = {e.kind for e in pair.manifest if not e.urban}
    assert {"contour_lines", "text_glyphs", "road_lines"} <= kinds


def test_no_urban_and_no_distractors():
    pair = generate_scene(SceneSpec(seed=0, urban_fraction=0.0, distractors=()))
    assert pair.truth.data.sum() == 0
    assert pair.manifest == []


def test_hard_spec_is_denser():
    easy = sum(not e.urban for e in generate_scene(SceneSpec(seed=3)).manifest)
    hard = sum(not e.urban for e in generate_scene(hard_spec(SceneSpec(seed=3))).manifest)
    assert hard > easy


def test_spec_validation():
    with pytest.raises(ValueError):
        SceneSpec(urban_fraction=0.9)
    with pytest.raises(ValueError):
        SceneSpec(styles=("castle",))
    with pytest.raises(ValueError):
        SceneSpec(width=4)


def test_corpus_layout_and_reproducibility(tmp_path):
    a = generate_corpus(3, SceneSpec(width=64, height=64), seed=7, out=tmp_path / "a",
                        n_tiles=2, tile_size=64)
    generate_corpus(3, SceneSpec(width=64, height=64), seed=7, out=tmp_path / "b",
                    n_tiles=2, tile_size=64)
    names = sorted(p.name for p in a.images.iterdir())
    assert names == ["scene_0000.ppm", "scene_0001.ppm", "scene_0002.ppm"]
    for sub in ("images", "masks", "manifests", "tiles", "tiles_truth"):
        for p in sorted((tmp_path / "a" / sub).iterdir()):
            assert p.read_bytes() == (tmp_path / "b" / sub / p.name).read_bytes()
    t0, t1 = read_image(a.tiles / "tile_000.ppm"), read_image(a.tiles / "tile_001.ppm")
    assert t0.crs == DEFAULT_CRS
    assert t1.geo.origin_x - t0.geo.origin_x == 64 * PIXEL_SIZE
    assert read_mask(a.tile_truth / "tile_000.pgm").geo == t0.geo
    with pytest.raises(ValueError):
        generate_corpus(0, SceneSpec(), seed=0, out=tmp_path / "c")
