"""Synthetic scanned-map scenes with exact urban ground truth.

A scene is a paper-toned canvas carrying two kinds of ink:

* urban symbols - solid black blocks, outlined and hatched blocks, clusters
  of small building squares, and red overprinted blocks.  Their footprints
  make up the truth mask.
* distractors - contour lines, road casings, lettering and field hatching,
  drawn in the same dark inks but never part of the truth.

Because both kinds share their colours, no threshold on brightness can
separate them; only shape and context can.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np
from skimage.draw import line as draw_line
from skimage.draw import polygon as draw_polygon

from .raster import BinaryMask, Geotransform, Raster, write_image

STYLES = ("solid_block", "hatched_block", "scattered_units", "red_overprint")
DISTRACTORS = ("contour_lines", "text_glyphs", "road_lines", "field_texture", "hue_drift")

DEFAULT_PALETTE = {
    "paper": (232, 226, 207),
    "paper_alt": (212, 222, 228),
    "ink": (38, 34, 32),
    "contour": (74, 54, 40),
    "red": (198, 52, 44),
}

DEFAULT_CRS = "EPSG:2154"
PIXEL_SIZE = 5.0


class PlacementError(RuntimeError):
    pass


@dataclass(frozen=True)
class SceneSpec:
    width: int = 128
    height: int = 128
    seed: int = 0
    urban_fraction: float = 0.2
    styles: Tuple[str, ...] = STYLES
    distractors: Tuple[str, ...] = DISTRACTORS
    palette: Dict[str, Tuple[int, int, int]] = field(default_factory=lambda: dict(DEFAULT_PALETTE))
    distractor_density: float = 1.0
    noise_sigma: float = 5.0

    def __post_init__(self):
        if not 0.0 <= self.urban_fraction <= 0.5:
            raise ValueError("urban_fraction must lie in [0, 0.5]")
        if self.urban_fraction > 0 and not self.styles:
            raise ValueError("at least one urban style is needed when urban_fraction > 0")
        for s in self.styles:
            if s not in STYLES:
                raise ValueError(f"unknown style {s!r}")
        for d in self.distractors:
            if d not in DISTRACTORS:
                raise ValueError(f"unknown distractor {d!r}")
        if self.width < 8 or self.height < 8:
            raise ValueError("scene must be at least 8x8")


@dataclass
class ManifestEntry:
    kind: str
    x: int
    y: int
    w: int
    h: int
    urban: bool
    footprint: np.ndarray = field(repr=False, default=None)

    def line(self) -> str:
        return f"{self.kind} {self.x} {self.y} {self.w} {self.h}"


@dataclass
class ScenePair:
    image: Raster
    truth: BinaryMask
    manifest: List[ManifestEntry]

    def manifest_text(self) -> str:
        return "".join(e.line() + "\n" for e in self.manifest)


# -- drawing helpers --------------------------------------------------------

class _Canvas:
    def __init__(self, h, w):
        self.h, self.w = h, w
        self.ink = np.zeros((h, w), dtype=np.int16)  # palette index + 1, 0 = paper

    def mask_polygon(self, rows, cols) -> np.ndarray:
        m = np.zeros((self.h, self.w), dtype=bool)
        rr, cc = draw_polygon(np.asarray(rows), np.asarray(cols), shape=(self.h, self.w))
        m[rr, cc] = True
        return m

    def mask_polyline(self, pts, width: int = 1) -> np.ndarray:
        m = np.zeros((self.h, self.w), dtype=bool)
        pts = np.rint(np.asarray(pts)).astype(int)
        for (r0, c0), (r1, c1) in zip(pts[:-1], pts[1:]):
            rr, cc = draw_line(r0, c0, r1, c1)
            for dr in range(width):
                for dc in range(width):
                    r, c = rr + dr, cc + dc
                    ok = (r >= 0) & (r < self.h) & (c >= 0) & (c < self.w)
                    m[r[ok], c[ok]] = True
        return m


def _rect_corners(cy, cx, h, w, angle):
    ca, sa = math.cos(angle), math.sin(angle)
    corners = [(-h / 2, -w / 2), (-h / 2, w / 2), (h / 2, w / 2), (h / 2, -w / 2)]
    rows = [cy + r * ca - c * sa for r, c in corners]
    cols = [cx + r * sa + c * ca for r, c in corners]
    return rows, cols


def _bbox(m: np.ndarray) -> Tuple[int, int, int, int]:
    rows = np.flatnonzero(m.any(axis=1))
    cols = np.flatnonzero(m.any(axis=0))
    if rows.size == 0:
        return 0, 0, 0, 0
    return int(cols[0]), int(rows[0]), int(cols[-1] - cols[0] + 1), int(rows[-1] - rows[0] + 1)


# stroke letters on a 4-wide x 6-tall grid, segments as (x0, y0, x1, y1)
_GLYPHS = {
    "A": [(0, 6, 2, 0), (2, 0, 4, 6), (1, 3, 3, 3)],
    "B": [(0, 0, 0, 6), (0, 0, 3, 0), (3, 0, 3, 3), (0, 3, 4, 3), (4, 3, 4, 6), (0, 6, 4, 6)],
    "C": [(4, 0, 0, 0), (0, 0, 0, 6), (0, 6, 4, 6)],
    "E": [(4, 0, 0, 0), (0, 0, 0, 6), (0, 6, 4, 6), (0, 3, 3, 3)],
    "F": [(4, 0, 0, 0), (0, 0, 0, 6), (0, 3, 3, 3)],
    "H": [(0, 0, 0, 6), (4, 0, 4, 6), (0, 3, 4, 3)],
    "I": [(2, 0, 2, 6), (1, 0, 3, 0), (1, 6, 3, 6)],
    "L": [(0, 0, 0, 6), (0, 6, 4, 6)],
    "M": [(0, 6, 0, 0), (0, 0, 2, 3), (2, 3, 4, 0), (4, 0, 4, 6)],
    "N": [(0, 6, 0, 0), (0, 0, 4, 6), (4, 6, 4, 0)],
    "O": [(0, 0, 4, 0), (4, 0, 4, 6), (4, 6, 0, 6), (0, 6, 0, 0)],
    "R": [(0, 6, 0, 0), (0, 0, 4, 0), (4, 0, 4, 3), (4, 3, 0, 3), (1, 3, 4, 6)],
    "S": [(4, 0, 0, 0), (0, 0, 0, 3), (0, 3, 4, 3), (4, 3, 4, 6), (4, 6, 0, 6)],
    "T": [(0, 0, 4, 0), (2, 0, 2, 6)],
    "U": [(0, 0, 0, 6), (0, 6, 4, 6), (4, 6, 4, 0)],
    "V": [(0, 0, 2, 6), (2, 6, 4, 0)],
    "Y": [(0, 0, 2, 3), (4, 0, 2, 3), (2, 3, 2, 6)],
    "Z": [(0, 0, 4, 0), (4, 0, 0, 6), (0, 6, 4, 6)],
}
_LETTERS = sorted(_GLYPHS)


# -- scene generation -------------------------------------------------------

def _urban_element(style, canvas, rng, cy, cx):
    """Return (ink_mask, footprint, colour key) for one urban symbol."""
    if style == "solid_block":
        h, w = rng.uniform(7, 22, size=2)
        rows, cols = _rect_corners(cy, cx, h, w, rng.uniform(0, math.pi))
        fp = canvas.mask_polygon(rows, cols)
        return fp, fp, "ink"
    if style == "red_overprint":
        h, w = rng.uniform(9, 26, size=2)
        rows, cols = _rect_corners(cy, cx, h, w, rng.uniform(0, math.pi))
        fp = canvas.mask_polygon(rows, cols)
        return fp, fp, "red"
    if style == "hatched_block":
        h, w = rng.uniform(12, 26, size=2)
        angle = rng.uniform(0, math.pi)
        rows, cols = _rect_corners(cy, cx, h, w, angle)
        fp = canvas.mask_polygon(rows, cols)
        outline = canvas.mask_polyline(list(zip(rows + rows[:1], cols + cols[:1])))
        yy, xx = np.mgrid[:canvas.h, :canvas.w]
        hatch = ((yy + xx) % 3 == 0) & fp
        return (outline | hatch) & fp | outline, fp | outline, "ink"
    if style == "scattered_units":
        fp = np.zeros((canvas.h, canvas.w), dtype=bool)
        for _ in range(int(rng.integers(4, 10))):
            s = int(rng.integers(3, 6))
            r = int(round(cy + rng.normal(0, 6)))
            c = int(round(cx + rng.normal(0, 6)))
            r0, c0 = max(r, 0), max(c, 0)
            fp[r0:max(r + s, 0), c0:max(c + s, 0)] = True
        return fp, fp, "ink"
    raise ValueError(style)


def _contour(canvas, rng):
    n = max(canvas.h, canvas.w)
    r, c = rng.uniform(0, canvas.h), 0.0
    heading = rng.uniform(-0.6, 0.6)
    pts = []
    steps = int(1.6 * n / 3) + 2
    if rng.random() < 0.5:
        pts_t = True
        r, c = 0.0, rng.uniform(0, canvas.w)
    else:
        pts_t = False
    for _ in range(steps):
        pts.append((r, c))
        heading += rng.normal(0, 0.18)
        heading = float(np.clip(heading, -1.2, 1.2))
        if pts_t:
            r += 3 * math.cos(heading)
            c += 3 * math.sin(heading)
        else:
            c += 3 * math.cos(heading)
            r += 3 * math.sin(heading)
    return canvas.mask_polyline(pts), "contour"


def _road(canvas, rng):
    n = max(canvas.h, canvas.w)
    gap = rng.uniform(3.0, 5.0)
    angle = rng.uniform(0, math.pi)
    bend = rng.uniform(-0.004, 0.004) * 128 / n
    cy, cx = rng.uniform(0, canvas.h), rng.uniform(0, canvas.w)
    t = np.linspace(-n, n, 2 * n // 4 + 2)
    d = np.array([math.sin(angle), math.cos(angle)])
    nrm = np.array([d[1], -d[0]])
    m = np.zeros((canvas.h, canvas.w), dtype=bool)
    for side in (-0.5, 0.5):
        off = side * gap + bend * t ** 2
        rows = cy + t * d[0] + off * nrm[0]
        cols = cx + t * d[1] + off * nrm[1]
        m |= canvas.mask_polyline(list(zip(rows, cols)))
    return m, "ink"


def _text(canvas, rng):
    size = rng.uniform(1.2, 1.8)
    n_letters = int(rng.integers(3, 7))
    word_w = n_letters * 6 * size
    r0 = rng.uniform(2, max(canvas.h - 7 * size - 2, 3))
    c0 = rng.uniform(-word_w / 3, max(canvas.w - 2 * word_w / 3, 1))
    m = np.zeros((canvas.h, canvas.w), dtype=bool)
    bold = 2 if rng.random() < 0.35 else 1
    for i in range(n_letters):
        glyph = _GLYPHS[_LETTERS[int(rng.integers(len(_LETTERS)))]]
        left = c0 + i * 6 * size
        for x0, y0, x1, y1 in glyph:
            pts = [(r0 + y0 * size, left + x0 * size), (r0 + y1 * size, left + x1 * size)]
            m |= canvas.mask_polyline(pts, width=bold)
    return m, "ink"


def _field(canvas, rng):
    ph, pw = rng.uniform(14, 30, size=2)
    cy, cx = rng.uniform(0, canvas.h), rng.uniform(0, canvas.w)
    angle = rng.uniform(0, math.pi)
    spacing = rng.uniform(4.0, 6.0)
    length = rng.uniform(4.0, 8.0)
    d = np.array([math.sin(angle), math.cos(angle)])
    nrm = np.array([d[1], -d[0]])
    m = np.zeros((canvas.h, canvas.w), dtype=bool)
    for a in np.arange(-ph / 2, ph / 2, spacing):
        for b in np.arange(-pw / 2, pw / 2, length * 1.8):
            p0 = np.array([cy, cx]) + a * nrm + b * d
            p1 = p0 + length * d
            m |= canvas.mask_polyline([tuple(p0), tuple(p1)])
    return m, "contour" if rng.random() < 0.5 else "ink"


_DISTRACTOR_FN = {
    "contour_lines": (_contour, 2.0),
    "road_lines": (_road, 1.0),
    "text_glyphs": (_text, 2.0),
    "field_texture": (_field, 1.5),
}


def generate_scene(spec: SceneSpec) -> ScenePair:
    """Render one scene; fully determined by ``spec`` (including its seed)."""
    rng = np.random.default_rng(spec.seed)
    h, w = spec.height, spec.width
    canvas = _Canvas(h, w)
    pal = {k: np.array(v, dtype=np.float64) for k, v in spec.palette.items()}
    manifest: List[ManifestEntry] = []

    # paper background, optionally split into two tints along a random seam
    bg = np.broadcast_to(pal["paper"], (h, w, 3)).copy()
    if "hue_drift" in spec.distractors:
        yy, xx = np.mgrid[:h, :w]
        angle = rng.uniform(0, 2 * math.pi)
        offset = rng.uniform(-0.3, 0.3) * max(h, w)
        side = (yy - h / 2) * math.sin(angle) + (xx - w / 2) * math.cos(angle) > offset
        bg[side] = pal["paper_alt"]
        manifest.append(ManifestEntry("hue_drift", *_bbox(side), urban=False, footprint=side))
    layers: List[Tuple[np.ndarray, str]] = []

    area_scale = (h * w) / (128 * 128)
    for name in spec.distractors:
        if name == "hue_drift":
            continue
        fn, per_128 = _DISTRACTOR_FN[name]
        count = int(rng.poisson(per_128 * spec.distractor_density * area_scale))
        for _ in range(count):
            m, color = fn(canvas, rng)
            if m.any():
                layers.append((m, color))
                manifest.append(ManifestEntry(name, *_bbox(m), urban=False, footprint=m))

    truth = np.zeros((h, w), dtype=bool)
    target = spec.urban_fraction * h * w
    if spec.urban_fraction > 0:
        n_towns = max(1, int(rng.integers(1, 3 + int(area_scale))))
        towns = [(rng.uniform(0.15, 0.85) * h, rng.uniform(0.15, 0.85) * w) for _ in range(n_towns)]
        spread = 0.18 * max(h, w)
        slack = 0.02 * h * w
        tries = 0
        while truth.sum() < target - slack / 2:
            tries += 1
            if tries > 4000:
                raise PlacementError(
                    f"could not reach urban fraction {spec.urban_fraction} on {w}x{h}")
            style = spec.styles[int(rng.integers(len(spec.styles)))]
            ty, tx = towns[int(rng.integers(len(towns)))]
            cy, cx = ty + rng.normal(0, spread), tx + rng.normal(0, spread)
            ink, fp, color = _urban_element(style, canvas, rng, cy, cx)
            if not fp.any() or (truth | fp).sum() > target + slack:
                continue
            truth |= fp
            layers.append((ink, color))
            manifest.append(ManifestEntry(style, *_bbox(fp), urban=True, footprint=fp))

    img = bg
    for m, color in layers:
        jitter = rng.normal(0, 6, size=3)
        img[m] = np.clip(pal[color] + jitter, 0, 255)
    img = img + rng.normal(0, spec.noise_sigma, size=img.shape)
    img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return ScenePair(Raster(img), BinaryMask(truth.astype(np.uint8)), manifest)


def hard_spec(spec: SceneSpec) -> SceneSpec:
    """The distractor-dense variant of ``spec``."""
    return replace(spec, distractor_density=2.5 * spec.distractor_density)


@dataclass
class CorpusLayout:
    root: Path
    images: Path
    masks: Path
    manifests: Path
    tiles: Path
    tile_truth: Path


def generate_corpus(n: int, base_spec: SceneSpec, seed: int, out, hard: bool = False,
                    n_tiles: int = 2, tile_size: int = 256) -> CorpusLayout:
    """Write ``n`` scenes as images/ + masks/ (+ manifests/), plus georeferenced tiles.

    Scene ``i`` uses seed ``seed + i``.  Tiles are laid side by side on a
    5 m grid so they can be mosaicked; their truth masks go to tiles_truth/.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    root = Path(out)
    layout = CorpusLayout(root, root / "images", root / "masks", root / "manifests",
                          root / "tiles", root / "tiles_truth")
    for d in (layout.images, layout.masks, layout.manifests):
        d.mkdir(parents=True, exist_ok=True)
    spec = hard_spec(base_spec) if hard else base_spec
    digits = max(4, len(str(n - 1)))
    for i in range(n):
        pair = generate_scene(replace(spec, seed=seed + i))
        stem = f"scene_{i:0{digits}d}"
        write_image(pair.image, layout.images / f"{stem}.ppm")
        write_image(pair.truth, layout.masks / f"{stem}.pgm")
        (layout.manifests / f"{stem}.txt").write_text(pair.manifest_text())

    if n_tiles > 0:
        layout.tiles.mkdir(exist_ok=True)
        layout.tile_truth.mkdir(exist_ok=True)
        x0, y0 = 600000.0 + PIXEL_SIZE / 2, 6800000.0 - PIXEL_SIZE / 2
        for t in range(n_tiles):
            tile_spec = replace(spec, width=tile_size, height=tile_size, seed=seed + 100000 + t)
            pair = generate_scene(tile_spec)
            geo = Geotransform(x0 + t * tile_size * PIXEL_SIZE, y0, PIXEL_SIZE, -PIXEL_SIZE)
            pair.image.geo, pair.image.crs = geo, DEFAULT_CRS
            pair.truth.geo, pair.truth.crs = geo, DEFAULT_CRS
            write_image(pair.image, layout.tiles / f"tile_{t:03d}.ppm")
            write_image(pair.truth, layout.tile_truth / f"tile_{t:03d}.pgm")
    return layout
