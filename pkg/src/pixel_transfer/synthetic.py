"""Procedural stand-in for a paired product/model corpus.

Each product is a garment glyph with a color and a pattern. Its target image
shows the glyph centered on white; each source image shows the same glyph
worn by a stick figure at a random position and scale over a gray textured
background. Color and pattern are the attributes a converter must carry
across domains. Backgrounds, skin and legs are kept low-chroma so the garment
is the only saturated region of a source.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from . import rng as rngmod
from .dataset import SIDE, PairedDataset, load_lookbook

PALETTE = {
    "red": (215, 40, 40),
    "green": (40, 160, 60),
    "blue": (40, 80, 210),
    "yellow": (230, 200, 30),
    "purple": (140, 50, 180),
    "cyan": (30, 180, 190),
    "orange": (240, 130, 20),
    "pink": (230, 90, 160),
}
PATTERNS = ("solid", "stripes")
GARMENTS = ("tee", "longsleeve", "dress")
STRIPE_PERIOD = 8
STRIPE_SHADE = (60, 60, 60)
SKIN = (205, 188, 172)
LEGS = (70, 70, 80)
CHROMA_MIN = 60

# canonical outlines on a unit box, (x, y) with y pointing down
_OUTLINES = {
    "tee": [(0.30, 0.0), (0.70, 0.0), (1.0, 0.22), (0.88, 0.40), (0.75, 0.32), (0.75, 1.0), (0.25, 1.0), (0.25, 0.32), (0.12, 0.40), (0.0, 0.22)],
    "longsleeve": [(0.30, 0.0), (0.70, 0.0), (1.0, 0.25), (1.0, 0.95), (0.86, 0.95), (0.80, 0.35), (0.75, 0.40), (0.75, 1.0), (0.25, 1.0), (0.25, 0.40), (0.20, 0.35), (0.14, 0.95), (0.0, 0.95), (0.0, 0.25)],
    "dress": [(0.35, 0.0), (0.65, 0.0), (0.72, 0.12), (0.68, 0.40), (0.95, 1.0), (0.05, 1.0), (0.32, 0.40), (0.28, 0.12)],
}


@dataclass(frozen=True)
class SyntheticConfig:
    n_products: int = 200
    colors: int = 6
    patterns: tuple[str, ...] = PATTERNS
    canvas: int = SIDE
    seed: int = 0
    min_sources: int = 2
    max_sources: int = 4

    def __post_init__(self):
        if not 2 <= self.colors <= len(PALETTE):
            raise ValueError(f"colors must lie in [2, {len(PALETTE)}], got {self.colors}")
        if self.canvas != SIDE:
            raise ValueError(f"only a {SIDE}-pixel canvas is supported")
        if not 1 <= self.min_sources <= self.max_sources:
            raise ValueError("need 1 <= min_sources <= max_sources")

    @property
    def palette(self) -> list[tuple[int, int, int]]:
        return list(PALETTE.values())[: self.colors]

    @property
    def color_names(self) -> list[str]:
        return list(PALETTE)[: self.colors]


def _glyph_mask(garment: str, box: tuple[float, float, float, float], side: int = SIDE) -> np.ndarray:
    x0, y0, w, h = box
    pts = [(x0 + u * w, y0 + v * h) for u, v in _OUTLINES[garment]]
    img = Image.new("L", (side, side), 0)
    ImageDraw.Draw(img).polygon(pts, fill=255)
    return np.asarray(img) > 127


def _paint(canvas: np.ndarray, mask: np.ndarray, color, pattern: str, phase: int = 0) -> None:
    canvas[mask] = color
    if pattern == "stripes":
        rows = (np.arange(canvas.shape[0]) + phase) % STRIPE_PERIOD >= STRIPE_PERIOD // 2
        canvas[mask & rows[:, None]] = STRIPE_SHADE


def render_target(garment: str, color, pattern: str) -> np.ndarray:
    canvas = np.full((SIDE, SIDE, 3), 255, dtype=np.uint8)
    _paint(canvas, _glyph_mask(garment, (12.0, 10.0, 40.0, 44.0)), color, pattern)
    return canvas


def render_source(garment: str, color, pattern: str, gen: np.random.Generator) -> np.ndarray:
    base = gen.uniform(80, 200)
    noise = gen.normal(0.0, 12.0, size=(SIDE // 4, SIDE // 4))
    tex = np.kron(noise, np.ones((4, 4))) + gen.normal(0.0, 4.0, size=(SIDE, SIDE))
    rgb = base + tex[..., None] + gen.uniform(-4, 4, size=3)
    canvas = np.clip(rgb, 0, 255).astype(np.uint8)

    scale = gen.uniform(0.55, 0.8)
    w, h = 40.0 * scale, 44.0 * scale
    cx = SIDE / 2 + gen.uniform(-6, 6)
    top = 14.0 + gen.uniform(-4, 4)
    img = Image.fromarray(canvas)
    draw = ImageDraw.Draw(img)
    head_r = 5.0 * scale + 2.0
    draw.ellipse([cx - head_r, top - 2 * head_r, cx + head_r, top], fill=SKIN)
    leg_w = max(2.0, 5.0 * scale)
    draw.rectangle([cx - w * 0.22, top + h * 0.9, cx - w * 0.22 + leg_w, SIDE], fill=LEGS)
    draw.rectangle([cx + w * 0.22 - leg_w, top + h * 0.9, cx + w * 0.22, SIDE], fill=LEGS)
    canvas = np.asarray(img).copy()
    _paint(canvas, _glyph_mask(garment, (cx - w / 2, top, w, h)), color, pattern, phase=int(gen.integers(STRIPE_PERIOD)))
    return canvas


def generate_synthetic(root, config: SyntheticConfig = SyntheticConfig()) -> PairedDataset:
    """Write a LookBook-format synthetic dataset under ``root`` and load it.

    Also writes ``root/attributes.tsv`` (product_id, color, pattern, garment).
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    gen = rngmod.stream(config.seed, "synthetic")
    palette, names = config.palette, config.color_names
    lines = ["product_id\tcolor\tpattern\tgarment"]
    width = max(4, len(str(config.n_products - 1)))
    for i in range(config.n_products):
        pid = f"p{i:0{width}d}"
        c = int(gen.integers(len(palette)))
        pattern = config.patterns[int(gen.integers(len(config.patterns)))]
        garment = GARMENTS[int(gen.integers(len(GARMENTS)))]
        n_src = int(gen.integers(config.min_sources, config.max_sources + 1))
        d = root / pid
        d.mkdir(exist_ok=True)
        Image.fromarray(render_target(garment, palette[c], pattern)).save(d / "product.png")
        for k in range(n_src):
            Image.fromarray(render_source(garment, palette[c], pattern, gen)).save(d / f"model_{k}.png")
        lines.append(f"{pid}\t{names[c]}\t{pattern}\t{garment}")
    (root / "attributes.tsv").write_text("\n".join(lines) + "\n")
    return load_lookbook(root)


def read_attributes(root) -> dict[str, dict[str, str]]:
    path = Path(root) / "attributes.tsv"
    rows = path.read_text().splitlines()
    header = rows[0].split("\t")
    return {r.split("\t")[0]: dict(zip(header[1:], r.split("\t")[1:])) for r in rows[1:] if r}


def dominant_color(image, palette) -> int:
    """Index of the palette color most saturated pixels are closest to, or -1.

    ``image`` is uint8 H x W x 3 or float 3 x H x W in [-1, 1]. Pixels with
    chroma (max - min channel) below 60 are ignored.
    """
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        arr = np.round((np.clip(arr, -1, 1) + 1.0) * 127.5).astype(np.uint8).transpose(1, 2, 0)
    px = arr.reshape(-1, 3).astype(np.int32)
    chroma = px.max(axis=1) - px.min(axis=1)
    px = px[chroma >= CHROMA_MIN]
    if len(px) == 0:
        return -1
    pal = np.asarray(palette, dtype=np.int32)
    d = ((px[:, None, :] - pal[None, :, :]) ** 2).sum(axis=2)
    votes = np.bincount(d.argmin(axis=1), minlength=len(pal))
    return int(votes.argmax())
