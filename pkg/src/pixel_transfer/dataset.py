"""Paired product/model image datasets.

On-disk layout (LookBook format)::

    root/<product_id>/product.png     target image (clean product photo)
    root/<product_id>/model_<k>.png   source images (person wearing it)

An optional ``root/manifest.tsv`` with ``product_id<TAB>role<TAB>relative_path``
lines (role is ``product`` or ``model``) replaces directory scanning.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from . import rng as rngmod

log = logging.getLogger(__name__)

SIDE = 64
SPLITS = ("train", "val", "test")


class DatasetError(ValueError):
    pass


def _resize_and_pad(img: Image.Image, side: int) -> np.ndarray:
    w, h = img.size
    if w <= 0 or h <= 0:
        raise DatasetError(f"image has non-positive size {img.size}")
    if (w, h) != (side, side):
        scale = side / max(w, h)
        nw, nh = max(1, int(round(w * scale))), max(1, int(round(h * scale)))
        img = img.resize((nw, nh), Image.BILINEAR)
    else:
        nw, nh = w, h
    canvas = np.full((side, side, 3), 255, dtype=np.uint8)
    top, left = (side - nh) // 2, (side - nw) // 2
    canvas[top : top + nh, left : left + nw] = np.asarray(img.convert("RGB"), dtype=np.uint8)
    return canvas


def to_unit_range(pixels: np.ndarray) -> np.ndarray:
    """uint8 H x W x 3 -> float32 3 x H x W in [-1, 1]."""
    return (pixels.astype(np.float32).transpose(2, 0, 1) / 127.5 - 1.0).astype(np.float32)


def to_pixels(image: np.ndarray) -> np.ndarray:
    """float 3 x H x W in [-1, 1] -> uint8 H x W x 3."""
    x = (np.clip(np.asarray(image, dtype=np.float64), -1.0, 1.0) + 1.0) * 127.5
    return np.round(x).astype(np.uint8).transpose(1, 2, 0)


def load_pixels(path, side: int = SIDE) -> np.ndarray:
    """Decode an image file and fit it to a white side x side canvas (uint8 H x W x 3)."""
    try:
        with Image.open(path) as img:
            img.load()
            return _resize_and_pad(img.convert("RGB"), side)
    except (UnidentifiedImageError, OSError) as exc:
        raise DatasetError(f"cannot decode image {path}: {exc}") from exc


def preprocess_image(raw, side: int = SIDE) -> np.ndarray:
    """Aspect-preserving bilinear resize to ``side`` on the long axis, centered
    white padding to a square, then a linear map of [0, 255] onto [-1, 1].

    ``raw`` may be a path, a PIL image or an H x W x 3 uint8 array.
    Returns float32 3 x side x side.
    """
    if isinstance(raw, (str, Path)):
        return to_unit_range(load_pixels(raw, side))
    if isinstance(raw, np.ndarray):
        if raw.ndim != 3 or raw.shape[2] != 3 or raw.shape[0] < 1 or raw.shape[1] < 1:
            raise DatasetError(f"expected an H x W x 3 array with positive sides, got {raw.shape}")
        raw = Image.fromarray(np.asarray(raw, dtype=np.uint8), "RGB")
    return to_unit_range(_resize_and_pad(raw.convert("RGB"), side))


@dataclass
class ProductGroup:
    product_id: str
    target_path: Path
    source_paths: list[Path]


@dataclass
class PairedDataset:
    """Products with their target and source images, plus a product-level split."""

    groups: list[ProductGroup]
    assignment: dict[str, str] = field(default_factory=dict)
    root: Path | None = None
    _cache: dict[Path, np.ndarray] = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.groups)

    @property
    def product_ids(self) -> list[str]:
        return [g.product_id for g in self.groups]

    @property
    def n_sources(self) -> int:
        return sum(len(g.source_paths) for g in self.groups)

    def group(self, product_id: str) -> ProductGroup:
        for g in self.groups:
            if g.product_id == product_id:
                return g
        raise KeyError(product_id)

    def split(self, name: str) -> list[ProductGroup]:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        if not self.assignment:
            return list(self.groups) if name == "train" else []
        return [g for g in self.groups if self.assignment.get(g.product_id) == name]

    def pixels(self, path: Path) -> np.ndarray:
        path = Path(path)
        if path not in self._cache:
            self._cache[path] = load_pixels(path)
        return self._cache[path]

    def image(self, path: Path) -> np.ndarray:
        return to_unit_range(self.pixels(path))

    def target(self, product_id: str) -> np.ndarray:
        return self.image(self.group(product_id).target_path)

    def pairs(self, split: str = "train") -> list[tuple[str, Path]]:
        """(product_id, source_path) for every source image in a split, in dataset order."""
        return [(g.product_id, p) for g in self.split(split) for p in g.source_paths]


def _model_key(path: Path):
    stem = path.stem
    suffix = stem.split("_", 1)[1] if "_" in stem else stem
    return (0, int(suffix), "") if suffix.isdigit() else (1, 0, suffix)


def load_lookbook(root) -> PairedDataset:
    """Read a LookBook-format directory; products are ordered by product_id."""
    root = Path(root)
    manifest = root / "manifest.tsv"
    targets: dict[str, Path] = {}
    sources: dict[str, list[Path]] = {}
    if manifest.exists():
        for lineno, line in enumerate(manifest.read_text().splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DatasetError(f"{manifest}:{lineno}: expected 3 tab-separated fields")
            pid, role, rel = parts
            if role == "product":
                targets[pid] = root / rel
            elif role == "model":
                sources.setdefault(pid, []).append(root / rel)
            else:
                raise DatasetError(f"{manifest}:{lineno}: unknown role {role!r}")
        pids = sorted(set(targets) | set(sources))
    else:
        pids = sorted(p.name for p in root.iterdir() if p.is_dir()) if root.exists() else []
        for pid in pids:
            d = root / pid
            if (d / "product.png").exists():
                targets[pid] = d / "product.png"
            sources[pid] = sorted(d.glob("model_*.png"), key=_model_key)

    groups = []
    for pid in pids:
        if pid not in targets or not targets[pid].exists():
            raise DatasetError(f"product {pid!r} has no product image")
        srcs = sources.get(pid, [])
        if not srcs:
            log.warning("product %s has no model images; skipped", pid)
            continue
        missing = [p for p in srcs if not p.exists()]
        if missing:
            raise DatasetError(f"product {pid!r}: missing model image(s) {missing}")
        groups.append(ProductGroup(pid, targets[pid], list(srcs)))
    return PairedDataset(groups, root=root)


def split_dataset(ds: PairedDataset, val_frac: float = 0.05, test_frac: float = 0.05, seed: int = 0) -> PairedDataset:
    """Assign whole products to train/val/test.

    Products are shuffled with the seed's split stream; the first
    floor(val_frac * n) go to val, the next floor(test_frac * n) to test.
    """
    if val_frac < 0 or test_frac < 0 or val_frac + test_frac >= 1:
        raise ValueError(f"need val_frac, test_frac >= 0 and val_frac + test_frac < 1, got {val_frac}, {test_frac}")
    n = len(ds.groups)
    if n < 3:
        raise DatasetError(f"need at least 3 products to split, got {n}")
    n_val, n_test = math.floor(val_frac * n), math.floor(test_frac * n)
    order = rngmod.stream(seed, "split").permutation(n)
    assignment = {}
    for rank, idx in enumerate(order):
        pid = ds.groups[idx].product_id
        if rank < n_val:
            assignment[pid] = "val"
        elif rank < n_val + n_test:
            assignment[pid] = "test"
        else:
            assignment[pid] = "train"
    return PairedDataset(ds.groups, assignment, ds.root, ds._cache)


def sample_negative(ds: PairedDataset, product_id: str, gen: np.random.Generator, split: str = "train") -> str:
    """Uniformly pick another product of the split; returns its product_id."""
    pool = [g.product_id for g in ds.split(split) if g.product_id != product_id]
    if not pool:
        raise DatasetError("negative sampling needs at least 2 products in the split")
    return pool[int(gen.integers(len(pool)))]


def sample_negative_image(ds: PairedDataset, product_id: str, gen: np.random.Generator, split: str = "train") -> np.ndarray:
    """Preprocessed target image of a uniformly chosen different product."""
    return ds.target(sample_negative(ds, product_id, gen, split))
