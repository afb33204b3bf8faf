"""Spike accounting, parameter counting and classification accuracy."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class SpikeLedger:
    """Spike counts per cell plus the neuron-step capacity that bounds them.

    ``capacity[i]`` is the number of neuron x time-step x sample slots whose
    outputs were recorded for cell ``i``, so ``per_cell[i] <= capacity[i]``.
    """

    n_cells: int
    scope: str = "train"
    per_cell: list = field(default_factory=list)
    capacity: list = field(default_factory=list)
    total: int = 0

    def __post_init__(self):
        if self.scope not in ("train", "validation", "eval"):
            raise ValueError(f"unknown ledger scope {self.scope!r}")
        if not self.per_cell:
            self.per_cell = [0] * self.n_cells
            self.capacity = [0] * self.n_cells

    def reset(self):
        self.per_cell = [0] * self.n_cells
        self.capacity = [0] * self.n_cells
        self.total = 0

    def merge(self, other: "SpikeLedger"):
        if other.n_cells != self.n_cells:
            raise ValueError("cannot merge ledgers with different cell counts")
        for i in range(self.n_cells):
            self.per_cell[i] += other.per_cell[i]
            self.capacity[i] += other.capacity[i]
        self.total += other.total

    def check(self):
        assert self.total == sum(self.per_cell), "ledger total out of sync"
        assert all(0 <= s <= c for s, c in zip(self.per_cell, self.capacity)), "spikes exceed capacity"


def record_spikes(ledger: SpikeLedger, cell_index: int, o: np.ndarray):
    if not 0 <= cell_index < ledger.n_cells:
        raise IndexError(f"cell index {cell_index} outside [0, {ledger.n_cells})")
    o = np.asarray(o)
    count = int(np.count_nonzero(o))
    ledger.per_cell[cell_index] += count
    ledger.capacity[cell_index] += int(o.size)
    ledger.total += count


@dataclass(frozen=True)
class ParamCount:
    total: int
    weights: int
    alpha: int
    backbone: int
    attention: int

    def __int__(self):
        return self.total


def count_params(model) -> ParamCount:
    """Count learnable scalars, split by optimizer role and by subsystem.

    Parameters whose dotted name contains an ``attention`` component belong
    to the attention subsystem; other weights form the backbone.
    """
    weights = alpha = attn = 0
    for name, p in model.named_parameters():
        size = int(p.data.size)
        if p.role == "alpha":
            alpha += size
            continue
        weights += size
        if any(part.startswith("attention") for part in name.split(".")):
            attn += size
    return ParamCount(total=weights + alpha, weights=weights, alpha=alpha,
                      backbone=weights - attn, attention=attn)


def accuracy(logits, labels) -> float:
    logits = np.asarray(getattr(logits, "data", logits))
    labels = np.asarray(labels)
    if logits.shape[0] != labels.shape[0]:
        raise ValueError(f"{logits.shape[0]} logits rows for {labels.shape[0]} labels")
    if labels.size == 0:
        return 0.0
    return float(np.mean(logits.argmax(axis=1) == labels))
