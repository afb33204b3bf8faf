"""Bilevel architecture search, fixed-architecture retraining, per-epoch history."""
from __future__ import annotations

import io
from dataclasses import dataclass, field, fields
from typing import Callable, List, Optional, Tuple

import numpy as np

from . import functional as F
from .autograd import Tensor, no_grad
from .data import augment as augment_batch
from .data import batch_order
from .genotype import Genotype, derive_genotype
from .metrics import SpikeLedger, accuracy
from .optim import SGD, Adam, clip_grad_norm, cosine_lr, frozen
from .supernet import ConfigError, MacroConfig, Network

Arrays = Tuple[np.ndarray, np.ndarray]  # normalized images (N, C, H, W, 1), labels (N,)


def _check_lrs(cfg, names):
    for n in names:
        if not getattr(cfg, n) > 0:
            raise ConfigError(f"{n} must be > 0, got {getattr(cfg, n)}")
    if cfg.epochs < 0 or cfg.batch_size < 1:
        raise ConfigError("epochs must be >= 0 and batch_size >= 1")


@dataclass
class SearchConfig:
    epochs: int = 40
    batch_size: int = 64
    w_lr: float = 0.005
    w_lr_min: float = 0.0
    w_momentum: float = 0.9
    alpha_lr: float = 3e-4
    alpha_beta1: float = 0.9
    alpha_beta2: float = 0.999
    weight_decay: float = 3e-4
    alpha_weight_decay: float = 1e-3
    grad_clip: float = 5.0
    time_window: int = 2
    init_channels: int = 16
    layers: int = 5
    seed: int = 0
    eval_batch_size: int = 250
    augment: bool = False

    def __post_init__(self):
        _check_lrs(self, ("w_lr", "alpha_lr"))
        if self.epochs < 1:
            raise ConfigError("search needs epochs >= 1")


@dataclass
class RetrainConfig:
    epochs: int = 600
    batch_size: int = 64
    w_lr: float = 0.0025
    w_lr_min: float = 0.0
    momentum: float = 0.9
    weight_decay: float = 3e-4
    grad_clip: float = 5.0
    time_window: int = 2
    init_channels: int = 64
    layers: int = 5
    attention: str = "off"
    seed: int = 0
    eval_batch_size: int = 250
    augment: bool = False

    def __post_init__(self):
        _check_lrs(self, ("w_lr",))


def build_macro(cfg, classes: int, in_channels: int, **overrides) -> MacroConfig:
    """Macro network settings implied by a search or retrain config."""
    kw = dict(layers=cfg.layers, init_channels=cfg.init_channels, time_window=cfg.time_window,
              classes=classes, in_channels=in_channels)
    if isinstance(cfg, RetrainConfig):
        kw["attention"] = cfg.attention
    kw.update(overrides)
    return MacroConfig(**kw)


# ------------------------------------------------------------------ loss
def cross_entropy(logits: Tensor, labels, aux_logits: Optional[Tensor] = None,
                  aux_weight: float = 0.4) -> Tensor:
    loss = F.cross_entropy(logits, labels)
    if aux_logits is not None and aux_weight > 0:
        loss = F.add(loss, F.scale(F.cross_entropy(aux_logits, labels), aux_weight))
    return loss


def _loss(model: Network, x, y, ledger):
    logits, aux, _ = model(x, ledger)
    return cross_entropy(logits, y, aux, model.macro.aux_weight), logits


# --------------------------------------------------------------- history
@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    train_images: int
    val_images: int
    nos_train: List[int] = field(default_factory=list)
    nos_val: List[int] = field(default_factory=list)

    @property
    def nos_train_total(self) -> int:
        return int(sum(self.nos_train))

    @property
    def nos_val_total(self) -> int:
        return int(sum(self.nos_val))

    @property
    def nos_val_per_image(self) -> float:
        return self.nos_val_total / self.val_images if self.val_images else 0.0


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


class TrainHistory:
    """One record per completed epoch, exportable as CSV.

    Column order: epoch, lr, train_loss, train_acc, val_loss, val_acc,
    train_images, val_images, nos_train_cell_0..k-1, nos_train_total,
    nos_val_cell_0..k-1, nos_val_total, nos_val_per_image.
    """

    def __init__(self, n_cells: int):
        self.n_cells = n_cells
        self.records: List[EpochRecord] = []

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i) -> EpochRecord:
        return self.records[i]

    def append(self, rec: EpochRecord):
        if rec.epoch != len(self.records):
            raise ValueError(f"epoch {rec.epoch} appended after {len(self.records)} records")
        if len(rec.nos_train) != self.n_cells or len(rec.nos_val) != self.n_cells:
            raise ValueError("spike counts do not match the cell count")
        self.records.append(rec)

    def columns(self) -> List[str]:
        k = range(self.n_cells)
        return (["epoch", "lr", "train_loss", "train_acc", "val_loss", "val_acc",
                 "train_images", "val_images"]
                + [f"nos_train_cell_{i}" for i in k] + ["nos_train_total"]
                + [f"nos_val_cell_{i}" for i in k] + ["nos_val_total", "nos_val_per_image"])

    def rows(self):
        for r in self.records:
            yield ([r.epoch, r.lr, r.train_loss, r.train_acc, r.val_loss, r.val_acc,
                    r.train_images, r.val_images] + list(r.nos_train) + [r.nos_train_total]
                   + list(r.nos_val) + [r.nos_val_total, r.nos_val_per_image])

    def to_csv(self, path=None) -> str:
        out = io.StringIO()
        out.write(",".join(self.columns()) + "\n")
        for row in self.rows():
            out.write(",".join(_fmt(v) for v in row) + "\n")
        text = out.getvalue()
        if path is not None:
            with open(path, "w", newline="") as f:
                f.write(text)
        return text

    def nos_csv(self, path=None) -> str:
        """Per-cell spike counts only, one row per epoch and scope."""
        out = io.StringIO()
        out.write("epoch,scope," + ",".join(f"nos_cell_{i}" for i in range(self.n_cells))
                  + ",nos_total,images\n")
        for r in self.records:
            for scope, counts, n in (("train", r.nos_train, r.train_images),
                                     ("validation", r.nos_val, r.val_images)):
                out.write(f"{r.epoch},{scope}," + ",".join(str(c) for c in counts)
                          + f",{sum(counts)},{n}\n")
        text = out.getvalue()
        if path is not None:
            with open(path, "w", newline="") as f:
                f.write(text)
        return text

    @classmethod
    def from_csv(cls, text: str) -> "TrainHistory":
        lines = [ln for ln in text.splitlines() if ln]
        header = lines[0].split(",")
        k = sum(1 for h in header if h.startswith("nos_train_cell_"))
        hist = cls(k)
        for ln in lines[1:]:
            v = dict(zip(header, ln.split(",")))
            hist.append(EpochRecord(
                epoch=int(v["epoch"]), lr=float(v["lr"]),
                train_loss=float(v["train_loss"]), train_acc=float(v["train_acc"]),
                val_loss=float(v["val_loss"]), val_acc=float(v["val_acc"]),
                train_images=int(v["train_images"]), val_images=int(v["val_images"]),
                nos_train=[int(v[f"nos_train_cell_{i}"]) for i in range(k)],
                nos_val=[int(v[f"nos_val_cell_{i}"]) for i in range(k)]))
        return hist


# ------------------------------------------------------------ evaluation
def evaluate(model: Network, data: Arrays, batch_size: int = 250,
             scope: str = "validation") -> Tuple[float, float, SpikeLedger]:
    """Mean loss, accuracy and spike ledger over ``data`` in inference mode."""
    x, y = data
    was_training = model.training
    model.eval()
    ledger = model.new_ledger(scope)
    loss_sum, correct = 0.0, 0.0
    try:
        with no_grad():
            for idx in batch_order(len(y), batch_size, None):
                logits, _, _ = model(x[idx], ledger)
                loss_sum += float(F.cross_entropy(logits, y[idx]).data) * len(idx)
                correct += accuracy(logits, y[idx]) * len(idx)
    finally:
        model.train(was_training)
    ledger.check()
    return loss_sum / len(y), correct / len(y), ledger


def predict(model: Network, x: np.ndarray, batch_size: int = 250) -> np.ndarray:
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            out = [model(x[idx])[0].data for idx in batch_order(len(x), batch_size, None)]
    finally:
        model.train(was_training)
    return np.concatenate(out)


# ------------------------------------------------------------- stepping
def _assert_partition(model: Network, w_opt: SGD, a_opt: Optional[Adam]):
    w_ids = {id(p) for p in w_opt.params}
    a_ids = {id(p) for p in a_opt.params} if a_opt is not None else set()
    assert not w_ids & a_ids, "a parameter is owned by both optimizers"
    assert w_ids == {id(p) for p in model.parameters("weight")}, "weight optimizer misses weights"
    if a_opt is not None:
        assert a_ids == {id(p) for p in model.parameters("alpha")}, "alpha optimizer misses alphas"


def _weight_step(model, w_opt, x, y, ledger, grad_clip):
    w_opt.zero_grad()
    with frozen(model.parameters("alpha")):
        loss, logits = _loss(model, x, y, ledger)
        loss.backward()
    if grad_clip:
        clip_grad_norm(w_opt.params, grad_clip)
    w_opt.step()
    return float(loss.data), accuracy(logits, y)


def _alpha_step(model, a_opt, x, y):
    a_opt.zero_grad()
    with frozen(model.parameters("weight")):
        loss, _ = _loss(model, x, y, None)
        loss.backward()
    a_opt.step()


def _batch(data: Arrays, idx, rng, aug: bool):
    x = data[0][idx]
    return (augment_batch(x, rng) if aug else x), data[1][idx]


def bilevel_epoch(model: Network, w_opt: SGD, a_opt: Adam, train: Arrays, val: Arrays, cfg,
                  rng: np.random.Generator, epoch: int = 0) -> EpochRecord:
    """One pass over ``train``; each iteration steps alpha on a validation batch,
    then the weights on a training batch (first-order alternation)."""
    if len(train[1]) == 0 or len(val[1]) == 0:
        raise ValueError("bilevel_epoch needs non-empty train and validation streams")
    _assert_partition(model, w_opt, a_opt)
    model.train()
    ledger = model.new_ledger("train")
    val_batches = batch_order(len(val[1]), cfg.batch_size, rng)
    loss_sum = acc_sum = 0.0
    seen = 0
    for idx in batch_order(len(train[1]), cfg.batch_size, rng):
        vidx = next(val_batches, None)
        if vidx is None:
            val_batches = batch_order(len(val[1]), cfg.batch_size, rng)
            vidx = next(val_batches)
        xv, yv = _batch(val, vidx, rng, cfg.augment)
        _alpha_step(model, a_opt, xv, yv)
        xt, yt = _batch(train, idx, rng, cfg.augment)
        loss, acc = _weight_step(model, w_opt, xt, yt, ledger, cfg.grad_clip)
        loss_sum += loss * len(idx)
        acc_sum += acc * len(idx)
        seen += len(idx)
    ledger.check()
    val_loss, val_acc, vledger = evaluate(model, val, cfg.eval_batch_size, "validation")
    return EpochRecord(epoch, w_opt.lr, loss_sum / seen, acc_sum / seen, val_loss, val_acc,
                       seen, len(val[1]), list(ledger.per_cell), list(vledger.per_cell))


def train_epoch(model: Network, w_opt: SGD, train: Arrays, val: Arrays, cfg,
                rng: np.random.Generator, epoch: int = 0) -> EpochRecord:
    if len(train[1]) == 0 or len(val[1]) == 0:
        raise ValueError("train_epoch needs non-empty train and validation streams")
    _assert_partition(model, w_opt, None)
    model.train()
    ledger = model.new_ledger("train")
    loss_sum = acc_sum = 0.0
    seen = 0
    for idx in batch_order(len(train[1]), cfg.batch_size, rng):
        xt, yt = _batch(train, idx, rng, cfg.augment)
        loss, acc = _weight_step(model, w_opt, xt, yt, ledger, cfg.grad_clip)
        loss_sum += loss * len(idx)
        acc_sum += acc * len(idx)
        seen += len(idx)
    ledger.check()
    val_loss, val_acc, vledger = evaluate(model, val, cfg.eval_batch_size, "validation")
    return EpochRecord(epoch, w_opt.lr, loss_sum / seen, acc_sum / seen, val_loss, val_acc,
                       seen, len(val[1]), list(ledger.per_cell), list(vledger.per_cell))


# ------------------------------------------------------------ top level
@dataclass
class SearchResult:
    model: Network
    history: TrainHistory
    genotype: Genotype


@dataclass
class RetrainResult:
    model: Network
    history: TrainHistory


Callback = Optional[Callable[[EpochRecord], None]]


def search(train: Arrays, val: Arrays, cfg: SearchConfig, macro: MacroConfig,
           on_epoch: Callback = None) -> SearchResult:
    model = Network(macro, seed=cfg.seed)
    w_opt = SGD(model.parameters("weight"), cfg.w_lr, cfg.w_momentum, cfg.weight_decay)
    a_opt = Adam(model.parameters("alpha"), cfg.alpha_lr, (cfg.alpha_beta1, cfg.alpha_beta2),
                 weight_decay=cfg.alpha_weight_decay)
    rng = np.random.default_rng([cfg.seed, 1])
    history = TrainHistory(len(model.cells))
    for epoch in range(cfg.epochs):
        w_opt.lr = cosine_lr(epoch, cfg.epochs, cfg.w_lr, cfg.w_lr_min)
        rec = bilevel_epoch(model, w_opt, a_opt, train, val, cfg, rng, epoch)
        history.append(rec)
        if on_epoch:
            on_epoch(rec)
    geno = derive_genotype(model.alpha_normal.data, model.alpha_reduction.data, macro.nodes,
                           channels=macro.init_channels, layers=macro.layers,
                           attention=macro.attention)
    return SearchResult(model, history, geno)


def retrain(genotype: Genotype, train: Arrays, val: Arrays, cfg: RetrainConfig,
            macro: MacroConfig, on_epoch: Callback = None) -> RetrainResult:
    genotype.validate()
    if genotype.nodes != macro.nodes:
        raise ConfigError(f"genotype has {genotype.nodes} nodes per cell, network expects "
                          f"{macro.nodes}")
    if train[0].shape[1] != macro.in_channels:
        raise ConfigError(f"data has {train[0].shape[1]} channels, network expects "
                          f"{macro.in_channels}")
    model = Network(macro, genotype=genotype, seed=cfg.seed)
    w_opt = SGD(model.parameters("weight"), cfg.w_lr, cfg.momentum, cfg.weight_decay)
    rng = np.random.default_rng([cfg.seed, 2])
    history = TrainHistory(len(model.cells))
    for epoch in range(cfg.epochs):
        w_opt.lr = cosine_lr(epoch, cfg.epochs, cfg.w_lr, cfg.w_lr_min)
        rec = train_epoch(model, w_opt, train, val, cfg, rng, epoch)
        history.append(rec)
        if on_epoch:
            on_epoch(rec)
    return RetrainResult(model, history)


def config_dict(cfg) -> dict:
    return {f.name: getattr(cfg, f.name) for f in fields(cfg)}
