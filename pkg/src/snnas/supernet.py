"""Search space: candidate ops, mixed edges, cells and the macro network.

One network class covers both stages. Without a genotype every cell edge
is a softmax mixture of all eight candidate ops weighted by the shared
architecture logits; with a genotype each node keeps exactly two single-op
edges.

Spiking happens at the inputs of parameterized ops: every cell state that
feeds a convolution is passed through one LIF layer, shared by all the
convolutions reading that state. Spikes are recorded in the ledger slot of
the cell that owns the LIF layer.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import functional as F
from .attention import make_attention
from .autograd import Parameter, ShapeError, Tensor
from .genotype import OPS, Genotype, edge_count, edge_index
from .metrics import SpikeLedger, record_spikes
from .nn import BatchNorm, Conv2d, Linear, Module
from .spiking import DEFAULT_LIF, LifConfig, lif_sequence


class ConfigError(ValueError):
    pass


@dataclass
class MacroConfig:
    layers: int = 5
    init_channels: int = 16
    classes: int = 10
    time_window: int = 2
    in_channels: int = 3
    nodes: int = 4
    reduction_positions: Optional[list] = None
    aux_after: Optional[int] = None
    aux_weight: float = 0.4
    aux_channels: int = 128
    attention: str = "off"
    attention_every_cell: bool = False
    ma_reduction: int = 4
    spatial_kernel: int = 7

    def __post_init__(self):
        if self.reduction_positions is None:
            self.reduction_positions = default_reduction_positions(self.layers)
        else:
            self.reduction_positions = sorted(int(p) for p in self.reduction_positions)
        if self.aux_after is None:
            self.aux_after = min(4, self.layers - 1)
        self.validate()

    def validate(self):
        if self.layers < 1 or self.init_channels < 1 or self.classes < 2 or self.time_window < 1:
            raise ConfigError("layers, init_channels, time_window must be >= 1 and classes >= 2")
        bad = [p for p in self.reduction_positions if not 0 <= p < self.layers]
        if bad:
            raise ConfigError(f"reduction positions {bad} outside [0, {self.layers})")
        if not 0 <= self.aux_after < self.layers:
            raise ConfigError(f"aux_after={self.aux_after} must be < layers={self.layers}")
        if self.attention not in ("off", "ct", "ma"):
            raise ConfigError(f"unknown attention mode {self.attention!r}")

    @property
    def aux_enabled(self) -> bool:
        return self.aux_weight > 0


def default_reduction_positions(layers: int) -> list:
    return sorted({layers // 3, (2 * layers) // 3})


# ---------------------------------------------------------------- shared inputs

class Source:
    """A cell state plus lazily computed, shared derived maps."""

    def __init__(self, x: Tensor, lif: LifConfig, ledger: Optional[SpikeLedger], cell_index: int):
        self.x = x
        self.lif = lif
        self.ledger = ledger
        self.cell_index = cell_index
        self._spikes = None
        self._pooled = {}

    def spikes(self) -> Tensor:
        if self._spikes is None:
            self._spikes = lif_sequence(self.x, self.lif)
            if self.ledger is not None:
                record_spikes(self.ledger, self.cell_index, self._spikes.data)
        return self._spikes

    def pooled(self, kind: str, stride: int) -> Tensor:
        key = (kind, stride)
        if key not in self._pooled:
            self._pooled[key] = F.pool2d(self.x, kind, 3, stride, 1)
        return self._pooled[key]


# ---------------------------------------------------------------- candidate ops

class SepConv(Module):
    """LIF, depthwise k x k, pointwise 1 x 1, batchnorm."""

    def __init__(self, c, k, stride, rng, dtype):
        self.dw = Conv2d(c, c, k, rng, stride=stride, padding=k // 2, groups=c, dtype=dtype)
        self.pw = Conv2d(c, c, 1, rng, dtype=dtype)
        self.bn = BatchNorm(c, dtype=dtype)

    def forward(self, src: Source) -> Tensor:
        return self.bn(self.pw(self.dw(src.spikes())))


class DilConv(Module):
    """LIF, depthwise k x k with dilation 2, pointwise 1 x 1, batchnorm."""

    def __init__(self, c, k, stride, rng, dtype):
        self.dw = Conv2d(c, c, k, rng, stride=stride, padding=2 * (k // 2), dilation=2, groups=c,
                         dtype=dtype)
        self.pw = Conv2d(c, c, 1, rng, dtype=dtype)
        self.bn = BatchNorm(c, dtype=dtype)

    def forward(self, src: Source) -> Tensor:
        return self.bn(self.pw(self.dw(src.spikes())))


class PoolBN(Module):
    def __init__(self, kind, c, stride, dtype):
        self.kind, self.stride = kind, stride
        self.bn = BatchNorm(c, dtype=dtype)

    def forward(self, src: Source) -> Tensor:
        return self.bn(src.pooled(self.kind, self.stride))


class Identity(Module):
    def forward(self, src: Source) -> Tensor:
        return src.x


class SpikeProjection(Module):
    """LIF, strided 1 x 1 convolution, batchnorm."""

    def __init__(self, c_in, c_out, stride, rng, dtype):
        self.conv = Conv2d(c_in, c_out, 1, rng, stride=stride, dtype=dtype)
        self.bn = BatchNorm(c_out, dtype=dtype)

    def forward(self, src: Source) -> Tensor:
        return self.bn(self.conv(src.spikes()))


def make_candidate(tag: str, c: int, stride: int, rng, dtype=np.float32) -> Optional[Module]:
    """Module for candidate ``tag``; ``None`` for the zero op."""
    if tag == "sep_conv_3x3":
        return SepConv(c, 3, stride, rng, dtype)
    if tag == "sep_conv_5x5":
        return SepConv(c, 5, stride, rng, dtype)
    if tag == "dil_conv_3x3":
        return DilConv(c, 3, stride, rng, dtype)
    if tag == "dil_conv_5x5":
        return DilConv(c, 5, stride, rng, dtype)
    if tag == "max_pool_3x3":
        return PoolBN("max", c, stride, dtype)
    if tag == "avg_pool_3x3":
        return PoolBN("avg", c, stride, dtype)
    if tag == "skip_connect":
        return Identity() if stride == 1 else SpikeProjection(c, c, stride, rng, dtype)
    if tag == "none":
        return None
    raise ValueError(f"unknown candidate op {tag!r}")


def _strided_shape(shape, stride):
    n, c, h, w, t = shape
    return (n, c, (h - 1) // stride + 1, (w - 1) // stride + 1, t)


def apply_candidate(tag: str, x, channels: int, stride: int, params: Optional[Module],
                    lif: LifConfig = DEFAULT_LIF, ledger=None, cell_index: int = 0) -> Tensor:
    """Evaluate one candidate op on ``x`` (a Tensor or a shared :class:`Source`)."""
    src = x if isinstance(x, Source) else Source(x, lif, ledger, cell_index)
    if src.x.shape[1] != channels:
        raise ShapeError(f"op {tag} built for {channels} channels, input has {src.x.shape[1]}")
    if tag == "none":
        return F.zeros(_strided_shape(src.x.shape, stride), dtype=src.x.dtype)
    return params(src)


class MixedEdge(Module):
    def __init__(self, c, stride, rng, dtype):
        self.c, self.stride = c, stride
        self.ops = [make_candidate(tag, c, stride, rng, dtype) for tag in OPS]

    def forward(self, src: Source, weights: Tensor, row: int) -> Tensor:
        ys = [None if op is None else op(src) for op in self.ops]
        return F.mix(ys, weights, row)


def mixed_edge(x, alpha_row, edge: MixedEdge, lif: LifConfig = DEFAULT_LIF, ledger=None,
               cell_index: int = 0) -> Tensor:
    """Softmax(alpha_row)-weighted sum of all candidate outputs on one edge."""
    if not isinstance(alpha_row, Tensor):
        alpha_row = Tensor(np.asarray(alpha_row, dtype=np.float64))
    weights = F.softmax_over(F.reshape(alpha_row, (1, len(OPS))), axis=1)
    src = x if isinstance(x, Source) else Source(x, lif, ledger, cell_index)
    return edge(src, weights, 0)


# ---------------------------------------------------------------- cells

class Cell(Module):
    def __init__(self, kind, c_pp, c_p, c, reduction_prev, rng, nodes=4, genotype_cell=None,
                 attention: str = "off", steps: int = 2, lif: LifConfig = DEFAULT_LIF,
                 dtype=np.float32, ma_reduction=4, spatial_kernel=7):
        self.kind, self.c, self.nodes = kind, c, nodes
        self.reduction = kind == "reduction"
        self.lif = lif
        self.preprocess0 = SpikeProjection(c_pp, c, 2 if reduction_prev else 1, rng, dtype)
        self.preprocess1 = SpikeProjection(c_p, c, 1, rng, dtype)
        self.discrete = genotype_cell is not None
        if self.discrete:
            self.selected = [list(node) for node in genotype_cell]
            if len(self.selected) != nodes:
                raise ShapeError(f"genotype has {len(self.selected)} nodes, cell expects {nodes}")
            slots = [None] * edge_count(nodes)
            for i, node in enumerate(self.selected):
                for s, op in node:
                    if not 0 <= s < i + 2:
                        raise ShapeError(f"node {i} cannot read state {s}")
                    stride = 2 if self.reduction and s < 2 else 1
                    slots[edge_index(i, s)] = make_candidate(op, c, stride, rng, dtype)
            self.edges = slots
        else:
            self.edges = [MixedEdge(c, 2 if self.reduction and j < 2 else 1, rng, dtype)
                          for i in range(nodes) for j in range(i + 2)]
        self.attention = make_attention(attention, nodes * c, steps, rng, dtype=dtype,
                                        **({"reduction": ma_reduction, "spatial_kernel": spatial_kernel}
                                           if attention == "ma" else {}))

    @property
    def out_channels(self) -> int:
        return self.nodes * self.c

    def forward(self, s0: Tensor, s1: Tensor, weights: Optional[Tensor], ledger=None,
                cell_index: int = 0) -> Tensor:
        p0 = self.preprocess0(Source(s0, self.lif, ledger, cell_index))
        p1 = self.preprocess1(Source(s1, self.lif, ledger, cell_index))
        if p0.shape != p1.shape:
            raise ShapeError(f"preprocessed inputs disagree: {p0.shape} vs {p1.shape}")
        states = [Source(p0, self.lif, ledger, cell_index), Source(p1, self.lif, ledger, cell_index)]
        for i in range(self.nodes):
            if self.discrete:
                terms = [self.edges[edge_index(i, s)](states[s]) for s, _ in self.selected[i]]
                node = F.add_n(terms)
            else:
                terms = [self.edges[edge_index(i, j)](states[j], weights, edge_index(i, j))
                         for j in range(i + 2)]
                node = F.add_n(terms)
            states.append(Source(node, self.lif, ledger, cell_index))
        out = F.concat([s.x for s in states[2:]], axis=1)
        if self.attention is not None:
            out = self.attention(out)
        return out


def cell_forward(s0, s1, cell: Cell, alphas: Optional[Tensor] = None, ledger=None,
                 cell_index: int = 0) -> Tensor:
    weights = None if alphas is None else F.softmax_over(alphas, axis=1)
    return cell(s0, s1, weights, ledger, cell_index)


# ---------------------------------------------------------------- heads

class AuxHead(Module):
    """LIF, spatial average, 1 x 1 conv, batchnorm, LIF, average over time, linear."""

    def __init__(self, c_in, classes, rng, hidden=128, lif=DEFAULT_LIF, dtype=np.float32):
        self.lif = lif
        self.conv = Conv2d(c_in, hidden, 1, rng, dtype=dtype)
        self.bn = BatchNorm(hidden, dtype=dtype)
        self.fc = Linear(hidden, classes, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        h = F.reduce_pool(lif_sequence(x, self.lif), ("H", "W"), "avg")
        h = lif_sequence(self.bn(self.conv(h)), self.lif)
        return self.fc(F.mean_axes(h, (2, 3, 4)))


class Network(Module):
    """Stem, stacked cells, optional auxiliary head, spiking classifier."""

    def __init__(self, macro: MacroConfig, genotype: Optional[Genotype] = None, seed: int = 0,
                 lif: LifConfig = DEFAULT_LIF, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.macro, self.lif, self.dtype = macro, lif, dtype
        self.genotype = genotype
        c = macro.init_channels
        self.stem_conv = Conv2d(macro.in_channels, c, 3, rng, padding=1, dtype=dtype)
        self.stem_bn = BatchNorm(c, dtype=dtype)
        c_pp, c_p, c_curr = c, c, c
        reduction_prev = False
        cells = []
        self.aux_in = None
        for i in range(macro.layers):
            reduction = i in macro.reduction_positions
            if reduction:
                c_curr *= 2
            kind = "reduction" if reduction else "normal"
            last = i == macro.layers - 1
            att = macro.attention if (last or macro.attention_every_cell) else "off"
            cells.append(Cell(kind, c_pp, c_p, c_curr, reduction_prev, rng, nodes=macro.nodes,
                              genotype_cell=None if genotype is None else genotype.cell(kind),
                              attention=att, steps=macro.time_window, lif=lif, dtype=dtype,
                              ma_reduction=macro.ma_reduction, spatial_kernel=macro.spatial_kernel))
            reduction_prev = reduction
            c_pp, c_p = c_p, cells[-1].out_channels
            if i == macro.aux_after:
                self.aux_in = c_p
        self.cells = cells
        self.aux = (AuxHead(self.aux_in, macro.classes, rng, macro.aux_channels, lif, dtype)
                    if macro.aux_enabled else None)
        self.classifier = Linear(c_p, macro.classes, rng, dtype=dtype)
        if genotype is None:
            e = edge_count(macro.nodes)
            self.alpha_normal = Parameter(rng.normal(0, 1e-3, (e, len(OPS))), name="alpha_normal",
                                          role="alpha")
            self.alpha_reduction = Parameter(rng.normal(0, 1e-3, (e, len(OPS))),
                                             name="alpha_reduction", role="alpha")

    @property
    def is_supernet(self) -> bool:
        return self.genotype is None

    def alphas(self):
        return (self.alpha_normal, self.alpha_reduction) if self.is_supernet else ()

    def new_ledger(self, scope="train") -> SpikeLedger:
        return SpikeLedger(len(self.cells), scope)

    def forward(self, images, ledger: Optional[SpikeLedger] = None):
        """Return ``(logits, aux_logits or None, ledger)``."""
        x = images if isinstance(images, Tensor) else Tensor(np.asarray(images, dtype=self.dtype))
        if x.ndim == 4:
            x = F.reshape(x, x.shape + (1,))
        if x.ndim != 5 or x.shape[4] != 1:
            raise ShapeError(f"images must be (N, C, H, W) or (N, C, H, W, 1), got {x.shape}")
        if ledger is None:
            ledger = self.new_ledger("train" if self.training else "eval")
        s = F.repeat_time(self.stem_bn(self.stem_conv(x)), self.macro.time_window)
        weights = {}
        if self.is_supernet:
            weights = {"normal": F.softmax_over(self.alpha_normal, axis=1),
                       "reduction": F.softmax_over(self.alpha_reduction, axis=1)}
        s0 = s1 = s
        aux_logits = None
        for i, cell in enumerate(self.cells):
            s0, s1 = s1, cell(s0, s1, weights.get(cell.kind), ledger, i)
            if self.aux is not None and self.training and i == self.macro.aux_after:
                aux_logits = self.aux(s1)
        h = F.mean_axes(lif_sequence(s1, self.lif), (2, 3, 4))
        return self.classifier(h), aux_logits, ledger


def supernet_forward(images, net: Network, ledger=None):
    return net(images, ledger)


def copy_selected_params(supernet: Network, discrete: Network):
    """Copy shared weights (stem, preprocessing, heads, chosen ops) into ``discrete``."""
    src = dict(supernet.named_parameters())
    src_buf = dict(supernet.named_buffers())
    mapping = {}
    for ci, cell in enumerate(discrete.cells):
        for i, node in enumerate(cell.selected):
            for s, op in node:
                e = edge_index(i, s)
                mapping[f"cells.{ci}.edges.{e}."] = f"cells.{ci}.edges.{e}.ops.{OPS.index(op)}."

    def source_name(name):
        for pre, target in mapping.items():
            if name.startswith(pre):
                return target + name[len(pre):]
        return name

    for name, p in discrete.named_parameters():
        p.data[...] = src[source_name(name)].data
    for name, b in discrete.named_buffers():
        b[...] = src_buf[source_name(name)]
