"""Losses and the three-network update loop.

Each minibatch draws sources, builds a target per item by picking its
ground-truth target, a negative (another product's target) or the converter
output, then updates in order:

1. the real/fake discriminator on the selected targets,
2. the domain discriminator on (source, selected target) pairs,
3. the converter against the freshly updated, frozen discriminators.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterator, Sequence

import numpy as np

from . import rng as rngmod
from .autodiff import Tensor, binary_cross_entropy, make_optimizer, mse_loss, mul, where_items
from .dataset import PairedDataset, sample_negative
from .networks import Converter, Network, discriminate_domain, discriminate_real_fake, init_parameters

log = logging.getLogger(__name__)

GT, GEN, NEG = "gt", "gen", "neg"
REAL_FAKE_LABEL = {GT: 1.0, NEG: 1.0, GEN: 0.0}
DOMAIN_LABEL = {GT: 1.0, GEN: 0.0, NEG: 0.0}


class TrainingMode(str, Enum):
    RF = "rf"
    MSE = "mse"
    RF_DD = "rf_dd"
    RF_DD_NONEG = "rf_dd_noneg"

    @property
    def uses_real_fake(self) -> bool:
        return self is not TrainingMode.MSE

    @property
    def uses_domain(self) -> bool:
        return self in (TrainingMode.RF_DD, TrainingMode.RF_DD_NONEG)


class NonFiniteLossError(RuntimeError):
    pass


@dataclass
class TrainingConfig:
    mode: TrainingMode = TrainingMode.RF_DD
    batch_size: int = 128
    lr: float = 2e-4
    lr_drop_epoch: int = 25
    lr_after_drop: float = 2e-5
    total_epochs: int = 30
    momentum: float = 0.5
    seed: int = 0
    width: float = 1.0
    optimizer: str = "sgd"
    non_saturating: bool = False
    val_frac: float = 0.05
    test_frac: float = 0.05

    def __post_init__(self):
        self.mode = TrainingMode(self.mode)
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0 < self.lr_after_drop <= self.lr:
            raise ValueError(f"need 0 < lr_after_drop <= lr, got {self.lr_after_drop} and {self.lr}")
        if self.lr_drop_epoch > self.total_epochs:
            raise ValueError(f"lr_drop_epoch {self.lr_drop_epoch} exceeds total_epochs {self.total_epochs}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        if not 0.0 < self.width <= 1.0:
            raise ValueError(f"width must lie in (0, 1], got {self.width}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["mode"] = self.mode.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class LossReport:
    epoch: int
    step: int
    loss_rf: float | None
    loss_da: float | None
    loss_c: float
    lr: float
    mode: str

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def _labels(tags, table) -> np.ndarray:
    if isinstance(tags, str):
        tags = [tags]
    return np.array([table[t] for t in tags])


def loss_real_fake(prob: Tensor, tags) -> Tensor:
    """Mean BCE with t = 1 for real photographs (ground truth and negatives), 0 for generated."""
    return binary_cross_entropy(prob, _labels(tags, REAL_FAKE_LABEL).reshape(prob.shape)).mean()


def loss_domain(prob: Tensor, tags) -> Tensor:
    """Mean BCE with t = 1 only when the pair is (source, its ground-truth target)."""
    return binary_cross_entropy(prob, _labels(tags, DOMAIN_LABEL).reshape(prob.shape)).mean()


def loss_converter(rf_loss, da_loss):
    """-1/2 * real/fake loss - 1/2 * domain loss; the converter minimizes this."""
    return rf_loss * -0.5 + da_loss * -0.5


def loss_mse(generated: Tensor, target) -> Tensor:
    return mse_loss(generated, target)


def select_target(gen: np.random.Generator, mode: TrainingMode, n: int | None = None):
    """Draw target tags uniformly from the mode's candidate set.

    rf_dd: {gt, gen, neg}; rf_dd_noneg and rf: {gt, gen}; mse: always gen.
    Returns one tag, or an array of ``n`` tags.
    """
    mode = TrainingMode(mode)
    if mode is TrainingMode.RF_DD:
        choices = (GT, GEN, NEG)
    elif mode in (TrainingMode.RF_DD_NONEG, TrainingMode.RF):
        choices = (GT, GEN)
    else:
        choices = (GEN,)
    idx = gen.integers(len(choices), size=1 if n is None else n)
    tags = np.array(choices, dtype=object)[idx]
    return tags[0] if n is None else tags


def lr_schedule(epoch: int, config: TrainingConfig) -> float:
    """Learning rate for a 1-based epoch: ``lr`` up to the drop epoch, then ``lr_after_drop``."""
    if not 1 <= epoch <= config.total_epochs:
        raise ValueError(f"epoch {epoch} outside 1..{config.total_epochs}")
    return config.lr if epoch <= config.lr_drop_epoch else config.lr_after_drop


# ---------------------------------------------------------------------------
# trainer
# ---------------------------------------------------------------------------

TRAIN_STREAMS = ("selection", "negatives", "shuffle")


class Trainer:
    """Owns the four networks, their optimizers and the training random streams."""

    def __init__(self, config: TrainingConfig, dataset: PairedDataset | None = None, dtype=np.float32):
        self.config = config
        self.dataset = dataset
        self.dtype = np.dtype(dtype)
        w, s = config.width, config.seed
        self.encoder = init_parameters("encoder", w, s, dtype)
        self.decoder = init_parameters("decoder", w, s, dtype)
        self.disc_rf = init_parameters("disc_rf", w, s, dtype)
        self.disc_da = init_parameters("disc_da", w, s, dtype)
        self.converter = Converter(self.encoder, self.decoder)
        lr = lr_schedule(1, config) if config.total_epochs >= 1 else config.lr
        self.optimizers = {
            "converter": make_optimizer(config.optimizer, self.converter.parameters(), lr, config.momentum),
            "disc_rf": make_optimizer(config.optimizer, _prefixed(self.disc_rf), lr, config.momentum),
            "disc_da": make_optimizer(config.optimizer, _prefixed(self.disc_da), lr, config.momentum),
        }
        self.rngs = {name: rngmod.stream(s, name) for name in TRAIN_STREAMS}
        self.epoch = 0
        self.step_count = 0

    @property
    def networks(self) -> dict[str, Network]:
        return {"encoder": self.encoder, "decoder": self.decoder, "disc_rf": self.disc_rf, "disc_da": self.disc_da}

    def update_counts(self) -> dict[str, int]:
        return {name: opt.steps for name, opt in self.optimizers.items()}

    def set_lr(self, lr: float) -> None:
        for opt in self.optimizers.values():
            opt.lr = lr

    # -- batching ---------------------------------------------------------
    def batches(self, split: str = "train") -> Iterator[list[tuple[str, object]]]:
        pairs = self.dataset.pairs(split)
        if not pairs:
            raise ValueError(f"split {split!r} has no training pairs")
        order = self.rngs["shuffle"].permutation(len(pairs))
        b = self.config.batch_size
        for start in range(0, len(order), b):
            chunk = [pairs[i] for i in order[start : start + b]]
            if len(chunk) < 2 and len(order) > 1:
                # train-mode batch norm on the 1x1 code needs two items
                log.info("dropping trailing batch of size %d", len(chunk))
                continue
            yield chunk

    def _load_batch(self, chunk) -> tuple[np.ndarray, np.ndarray, list[str]]:
        pids = [pid for pid, _ in chunk]
        src = np.stack([self.dataset.image(path) for _, path in chunk])
        gt = np.stack([self.dataset.target(pid) for pid in pids])
        return src, gt, pids

    # -- one epoch --------------------------------------------------------
    def train_epoch(self) -> Iterator[LossReport]:
        if self.dataset is None:
            raise ValueError("trainer has no dataset attached")
        epoch = self.epoch + 1
        lr = lr_schedule(epoch, self.config)
        self.set_lr(lr)
        for step_in_epoch, chunk in enumerate(self.batches(), 1):
            src, gt, pids = self._load_batch(chunk)
            report = self.step(src, gt, pids, epoch=epoch, step=step_in_epoch)
            yield report
        self.epoch = epoch

    def step(self, src: np.ndarray, gt: np.ndarray, pids: Sequence[str], epoch: int = 0, step: int = 0) -> LossReport:
        """One minibatch update of every network the mode trains."""
        mode = self.config.mode
        n = len(pids)
        tags = select_target(self.rngs["selection"], mode, n)
        src_t = Tensor(src)
        lr = self.optimizers["converter"].lr

        if mode is TrainingMode.MSE:
            self.converter.zero_grad()
            loss = loss_mse(self.converter(src_t, training=True), gt)
            _check_finite("mse", loss, epoch, step)
            loss.backward()
            self.optimizers["converter"].step()
            self.step_count += 1
            return LossReport(epoch, step, None, None, loss.item(), lr, mode.value)

        real = gt.copy()
        for i in np.flatnonzero(tags == NEG):
            real[i] = self.dataset.target(sample_negative(self.dataset, pids[i], self.rngs["negatives"]))
        is_gen = tags == GEN

        fake = self.converter(src_t, training=True)
        selected = Tensor(np.where(is_gen.reshape(-1, 1, 1, 1), fake.data, real))

        # (1) real/fake discriminator
        self.disc_rf.zero_grad()
        l_rf = loss_real_fake(discriminate_real_fake(self.disc_rf, selected), tags)
        _check_finite("loss_rf", l_rf, epoch, step)
        l_rf.backward()
        self.optimizers["disc_rf"].step()
        self.disc_rf.zero_grad()

        # (2) domain discriminator
        l_da = None
        if mode.uses_domain:
            self.disc_da.zero_grad()
            l_da = loss_domain(discriminate_domain(self.disc_da, src_t, selected), tags)
            _check_finite("loss_da", l_da, epoch, step)
            l_da.backward()
            self.optimizers["disc_da"].step()
            self.disc_da.zero_grad()

        # (3) converter against frozen discriminators
        self.converter.zero_grad()
        target = where_items(is_gen, fake, real)
        with self.disc_rf.frozen(), self.disc_da.frozen():
            p_rf = discriminate_real_fake(self.disc_rf, target, update_stats=False)
            p_da = discriminate_domain(self.disc_da, src_t, target, update_stats=False) if mode.uses_domain else None
            loss_c = self._converter_objective(p_rf, p_da, tags, is_gen)
        _check_finite("loss_c", loss_c, epoch, step)
        if loss_c.requires_grad:
            loss_c.backward()
        for p in self.converter.parameters().values():
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
        self.optimizers["converter"].step()
        self.step_count += 1
        return LossReport(
            epoch, step, l_rf.item(), None if l_da is None else l_da.item(), loss_c.item(), lr, mode.value
        )

    def _converter_objective(self, p_rf: Tensor, p_da: Tensor | None, tags, is_gen) -> Tensor:
        if self.config.non_saturating:
            # push generated items toward "real" / "associated"; other items carry no converter gradient
            weight = is_gen.astype(p_rf.dtype)
            terms = mul(binary_cross_entropy(p_rf, 1.0), weight).mean()
            if p_da is not None:
                terms = terms + mul(binary_cross_entropy(p_da, 1.0), weight).mean()
            return terms * 0.5
        rf = loss_real_fake(p_rf, tags)
        if p_da is None:
            return rf * -0.5
        return loss_converter(rf, loss_domain(p_da, tags))

    def train(self, epochs: int | None = None, on_report=None, on_epoch_end=None) -> None:
        last = self.config.total_epochs if epochs is None else min(self.config.total_epochs, self.epoch + epochs)
        while self.epoch < last:
            for report in self.train_epoch():
                if on_report is not None:
                    on_report(report)
            if on_epoch_end is not None:
                on_epoch_end(self)


def _prefixed(net: Network) -> dict[str, Tensor]:
    return {f"{net.net_id}.{k}": v for k, v in net.parameters().items()}


def _check_finite(name: str, loss: Tensor, epoch: int, step: int) -> None:
    value = loss.item()
    if not math.isfinite(value):
        raise NonFiniteLossError(f"non-finite {name} = {value} at epoch {epoch}, step {step}")
