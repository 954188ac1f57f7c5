"""Pixel-level metrics and model evaluation over a dataset split.

Both metrics take images in [-1, 1] and measure them on [0, 1]-mapped pixels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .autodiff import Tensor, no_grad
from .dataset import PairedDataset
from .networks import Converter, Network, discriminate_domain

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_RANGE = 1.0
SSIM_SETTINGS = f"gaussian{SSIM_WINDOW}x{SSIM_WINDOW},sigma={SSIM_SIGMA},K1={SSIM_K1},K2={SSIM_K2},L={SSIM_RANGE}"


def _unit(x) -> np.ndarray:
    return (np.asarray(x, dtype=np.float64) + 1.0) / 2.0


def rmse(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"rmse shape mismatch: {a.shape} vs {b.shape}")
    d = _unit(a) - _unit(b)
    return float(np.sqrt(np.mean(d * d)))


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = len(g)
    rows = sliding_window_view(img, k, axis=0) @ g
    return sliding_window_view(rows, k, axis=1) @ g


def ssim_channel(x: np.ndarray, y: np.ndarray) -> float:
    """Mean SSIM of two single-channel images in [0, 1] (valid-region Gaussian windows)."""
    g = _gaussian_window()
    c1, c2 = (SSIM_K1 * SSIM_RANGE) ** 2, (SSIM_K2 * SSIM_RANGE) ** 2
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def color_ssim(a, b) -> float:
    """Average of per-channel SSIM for 3 x H x W images in [-1, 1]."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"color_ssim shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim != 3 or min(a.shape[1:]) < SSIM_WINDOW:
        raise ValueError(f"color_ssim needs C x H x W images with sides >= {SSIM_WINDOW}, got {a.shape}")
    ua, ub = _unit(a), _unit(b)
    return float(np.mean([ssim_channel(ua[c], ub[c]) for c in range(a.shape[0])]))


@dataclass
class MetricReport:
    mode: str
    split: str
    sources: list[str] = field(default_factory=list)
    products: list[str] = field(default_factory=list)
    rmse: list[float] = field(default_factory=list)
    c_ssim: list[float] = field(default_factory=list)
    extra: dict[str, float] = field(default_factory=dict)
    ssim_settings: str = SSIM_SETTINGS

    @property
    def count(self) -> int:
        return len(self.rmse)

    @property
    def mean_rmse(self) -> float:
        return float(np.mean(self.rmse)) if self.rmse else float("nan")

    @property
    def mean_c_ssim(self) -> float:
        return float(np.mean(self.c_ssim)) if self.c_ssim else float("nan")

    def to_text(self) -> str:
        """Tab-delimited rows, one per image, then ``summary`` key/value rows."""
        lines = [
            f"# mode={self.mode}\tsplit={self.split}\tssim={self.ssim_settings}",
            "source\tproduct_id\trmse\tc_ssim",
        ]
        for s, p, r, c in zip(self.sources, self.products, self.rmse, self.c_ssim):
            lines.append(f"{s}\t{p}\t{r:.6f}\t{c:.6f}")
        lines.append("")
        lines.append(f"summary\tcount\t{self.count}")
        lines.append(f"summary\tmean_rmse\t{self.mean_rmse:.6f}")
        lines.append(f"summary\tmean_c_ssim\t{self.mean_c_ssim:.6f}")
        for k, v in self.extra.items():
            lines.append(f"summary\t{k}\t{v:.6f}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "MetricReport":
        lines = text.splitlines()
        meta = dict(kv.split("=", 1) for kv in lines[0].lstrip("# ").split("\t"))
        rep = cls(mode=meta.get("mode", ""), split=meta.get("split", ""), ssim_settings=meta.get("ssim", SSIM_SETTINGS))
        for line in lines[2:]:
            if not line:
                continue
            parts = line.split("\t")
            if parts[0] == "summary":
                if parts[1] not in ("count", "mean_rmse", "mean_c_ssim"):
                    rep.extra[parts[1]] = float(parts[2])
                continue
            rep.sources.append(parts[0])
            rep.products.append(parts[1])
            rep.rmse.append(float(parts[2]))
            rep.c_ssim.append(float(parts[3]))
        return rep


Generator = Callable[[np.ndarray], np.ndarray]


def converter_fn(converter: Converter, batch_size: int = 64) -> Generator:
    """Eval-mode, gradient-free conversion of an N x 3 x 64 x 64 array."""

    def run(src: np.ndarray) -> np.ndarray:
        outs = []
        with no_grad():
            for i in range(0, len(src), batch_size):
                outs.append(converter(Tensor(src[i : i + batch_size]), training=False).data)
        return np.concatenate(outs) if outs else np.zeros((0,) + src.shape[1:], dtype=np.float32)

    return run


def evaluate_model(
    generate: Generator | Converter,
    dataset: PairedDataset,
    split: str = "test",
    mode: str = "",
    batch_size: int = 64,
) -> MetricReport:
    """Generate a target for every source of ``split`` and score it against the ground truth."""
    if isinstance(generate, Converter):
        generate = converter_fn(generate, batch_size)
    pairs = dataset.pairs(split)
    if not pairs:
        raise ValueError(f"split {split!r} is empty")
    report = MetricReport(mode=mode, split=split)
    for start in range(0, len(pairs), batch_size):
        chunk = pairs[start : start + batch_size]
        src = np.stack([dataset.image(p) for _, p in chunk])
        out = generate(src)
        for (pid, path), img in zip(chunk, out):
            gt = dataset.target(pid)
            report.sources.append(str(path.relative_to(dataset.root)) if dataset.root else str(path))
            report.products.append(pid)
            report.rmse.append(rmse(img, gt))
            report.c_ssim.append(color_ssim(img, gt))
    return report


ScoreFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _score_fn(disc: Network | ScoreFn) -> ScoreFn:
    if not isinstance(disc, Network):
        return disc

    def score(src: np.ndarray, tgt: np.ndarray) -> np.ndarray:
        with no_grad():
            return discriminate_domain(disc, Tensor(src), Tensor(tgt), training=False).data

    return score


def dd_retrieve_scores(
    sources: np.ndarray, candidates: np.ndarray, disc: Network | ScoreFn, batch_size: int = 128
) -> np.ndarray:
    """Domain-discriminator score of every (source, candidate) pair, shape n_sources x n_candidates."""
    score = _score_fn(disc)
    ns, nc = len(sources), len(candidates)
    out = np.empty((ns, nc), dtype=np.float64)
    flat = [(i, j) for i in range(ns) for j in range(nc)]
    for start in range(0, len(flat), batch_size):
        idx = flat[start : start + batch_size]
        s = np.stack([sources[i] for i, _ in idx])
        t = np.stack([candidates[j] for _, j in idx])
        vals = np.asarray(score(s, t), dtype=np.float64).reshape(-1)
        for (i, j), v in zip(idx, vals):
            out[i, j] = v
    return out


def dd_retrieve(
    source: np.ndarray, products: Sequence[tuple[str, np.ndarray]], disc: Network | ScoreFn
) -> str:
    """Product whose target scores highest with ``source``; ties go to the lowest product_id."""
    if not products:
        raise ValueError("dd_retrieve needs at least one candidate product")
    ordered = sorted(products, key=lambda p: p[0])
    scores = dd_retrieve_scores(source[None], np.stack([img for _, img in ordered]), disc)[0]
    return ordered[int(np.argmax(scores))][0]


def retrieval_eval(
    dataset: PairedDataset,
    disc: Network | ScoreFn,
    split: str = "test",
    gallery: str = "all",
) -> tuple[float, MetricReport]:
    """Retrieval accuracy of ``split`` sources plus metrics of the retrieved images.

    ``gallery`` is ``"all"`` (every product, so the true one can be found) or a
    split name; the baseline that outputs the best-scoring training product
    uses ``gallery="train"``.
    """
    groups = dataset.groups if gallery == "all" else dataset.split(gallery)
    gallery_ids = sorted(g.product_id for g in groups)
    if not gallery_ids:
        raise ValueError(f"gallery {gallery!r} is empty")
    targets = np.stack([dataset.target(pid) for pid in gallery_ids])
    pairs = dataset.pairs(split)
    if not pairs:
        raise ValueError(f"split {split!r} is empty")
    sources = np.stack([dataset.image(p) for _, p in pairs])
    scores = dd_retrieve_scores(sources, targets, disc)
    picks = scores.argmax(axis=1)
    report = MetricReport(mode=f"retrieval[{gallery}]", split=split)
    hits = 0
    for (pid, path), k in zip(pairs, picks):
        hits += gallery_ids[k] == pid
        gt = dataset.target(pid)
        report.sources.append(str(path.relative_to(dataset.root)) if dataset.root else str(path))
        report.products.append(pid)
        report.rmse.append(rmse(targets[k], gt))
        report.c_ssim.append(color_ssim(targets[k], gt))
    accuracy = hits / len(pairs)
    report.extra["retrieval_accuracy"] = accuracy
    report.extra["retrieval_chance"] = 1.0 / len(gallery_ids)
    return accuracy, report
