"""Candidate operations, discrete architectures and their text/DOT formats."""
from __future__ import annotations

from dataclasses import dataclass, field
from math import comb
from typing import List, Tuple

import numpy as np

OPS = (
    "sep_conv_3x3",
    "sep_conv_5x5",
    "dil_conv_3x3",
    "dil_conv_5x5",
    "max_pool_3x3",
    "avg_pool_3x3",
    "none",
    "skip_connect",
)
NONE_INDEX = OPS.index("none")
KINDS = ("normal", "reduction")
FORMAT_NAME = "snnas-genotype"
FORMAT_VERSION = 1

Edge = Tuple[int, str]


class GenotypeError(ValueError):
    pass


def edge_count(nodes: int) -> int:
    return sum(i + 2 for i in range(nodes))


def edge_index(node: int, source: int) -> int:
    """Row of the alpha matrix for the edge ``source -> node``."""
    return sum(i + 2 for i in range(node)) + source


def search_space_size(nodes: int, ops: int = len(OPS), layers: int = 1) -> int:
    """Distinct cells of one kind (times ``layers``): two inputs per node, no ``none`` op."""
    if nodes < 1:
        raise ValueError("nodes must be >= 1")
    per_kind = 1
    for i in range(nodes):
        per_kind *= comb(i + 2, 2)
    return layers * per_kind * (ops - 1) ** (2 * nodes)


@dataclass
class Genotype:
    normal: List[List[Edge]]
    reduction: List[List[Edge]]
    channels: int = 0
    layers: int = 0
    attention: str = "off"
    extra: dict = field(default_factory=dict)

    @property
    def nodes(self) -> int:
        return len(self.normal)

    def cell(self, kind: str) -> List[List[Edge]]:
        return self.normal if kind == "normal" else self.reduction

    def validate(self) -> "Genotype":
        if len(self.normal) != len(self.reduction):
            raise GenotypeError("normal and reduction cells have different node counts")
        for kind in KINDS:
            for i, node in enumerate(self.cell(kind)):
                if len(node) != 2:
                    raise GenotypeError(f"{kind} node {i} has {len(node)} edges, expected 2")
                srcs = [s for s, _ in node]
                if srcs[0] == srcs[1]:
                    raise GenotypeError(f"{kind} node {i} repeats source {srcs[0]}")
                for s, op in node:
                    if not 0 <= s < i + 2:
                        raise GenotypeError(f"{kind} node {i} source {s} not in [0, {i + 2})")
                    if op not in OPS or op == "none":
                        raise GenotypeError(f"{kind} node {i} has invalid op {op!r}")
        return self

    # ------------------------------------------------------------ text format
    def to_text(self) -> str:
        lines = [
            f"format = {FORMAT_NAME}",
            f"version = {FORMAT_VERSION}",
            f"nodes = {self.nodes}",
            f"channels = {self.channels}",
            f"layers = {self.layers}",
            f"attention = {self.attention}",
        ]
        for kind in KINDS:
            for i, node in enumerate(self.cell(kind)):
                lines.append(f"{kind}.node{i} = " + ", ".join(f"{s}:{op}" for s, op in node))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Genotype":
        kv = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise GenotypeError(f"line {lineno}: expected 'key = value'")
            k, v = (s.strip() for s in line.split("=", 1))
            kv[k] = v
        if kv.get("format") != FORMAT_NAME:
            raise GenotypeError(f"not a genotype file (format={kv.get('format')!r})")
        if int(kv.get("version", -1)) != FORMAT_VERSION:
            raise GenotypeError(f"unsupported genotype version {kv.get('version')}")
        nodes = int(kv["nodes"])
        cells = {}
        for kind in KINDS:
            cell = []
            for i in range(nodes):
                entry = kv.get(f"{kind}.node{i}")
                if entry is None:
                    raise GenotypeError(f"missing {kind}.node{i}")
                pairs = []
                for item in entry.split(","):
                    s, op = item.strip().split(":")
                    pairs.append((int(s), op.strip()))
                cell.append(pairs)
            cells[kind] = cell
        return cls(normal=cells["normal"], reduction=cells["reduction"],
                   channels=int(kv.get("channels", 0)), layers=int(kv.get("layers", 0)),
                   attention=kv.get("attention", "off")).validate()

    def to_dot(self) -> str:
        out = ["digraph genotype {", "  rankdir=LR;"]
        for kind in KINDS:
            out.append(f"  subgraph cluster_{kind} {{")
            out.append(f'    label="{kind}";')
            names = [f"{kind}_in0", f"{kind}_in1"] + [f"{kind}_n{i}" for i in range(self.nodes)]
            out.append(f'    {names[0]} [label="c_{{k-2}}"];')
            out.append(f'    {names[1]} [label="c_{{k-1}}"];')
            for i, node in enumerate(self.cell(kind)):
                out.append(f'    {names[i + 2]} [label="{i}"];')
                for s, op in node:
                    out.append(f'    {names[s]} -> {names[i + 2]} [label="{op}"];')
            out.append(f'    {kind}_out [label="c_{{k}}"];')
            for i in range(self.nodes):
                out.append(f"    {names[i + 2]} -> {kind}_out;")
            out.append("  }")
        out.append("}")
        return "\n".join(out) + "\n"


def _softmax_rows(a: np.ndarray) -> np.ndarray:
    z = a - a.max(axis=1, keepdims=True)
    e = np.exp(z)
    # summing in sorted order makes permuted rows tie exactly
    return e / np.sort(e, axis=1).sum(axis=1, keepdims=True)


def derive_cell(alpha: np.ndarray, nodes: int = 4) -> List[List[Edge]]:
    """Top-2 incoming edges per node by their strongest non-``none`` weight.

    Ties go to the lower edge index, then the lower op index.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (edge_count(nodes), len(OPS)):
        raise GenotypeError(f"alpha shape {alpha.shape}, expected ({edge_count(nodes)}, {len(OPS)})")
    if not np.all(np.isfinite(alpha)):
        raise GenotypeError("alpha contains non-finite values")
    w = _softmax_rows(alpha)
    w[:, NONE_INDEX] = -np.inf
    cell = []
    for i in range(nodes):
        rows = [edge_index(i, j) for j in range(i + 2)]
        best_ops = [int(np.argmax(w[r])) for r in rows]
        scores = [w[r, k] for r, k in zip(rows, best_ops)]
        # stable sort keeps lower source first among equal scores
        keep = sorted(sorted(range(i + 2), key=lambda j: -scores[j])[:2])
        cell.append([(j, OPS[best_ops[j]]) for j in keep])
    return cell


def derive_genotype(alpha_normal, alpha_reduction, nodes: int = 4, **meta) -> Genotype:
    return Genotype(normal=derive_cell(alpha_normal, nodes),
                    reduction=derive_cell(alpha_reduction, nodes), **meta).validate()


def random_genotype(rng: np.random.Generator, nodes: int = 4, **meta) -> Genotype:
    """Uniform sample: two distinct sources and a non-``none`` op per node."""
    choices = [op for op in OPS if op != "none"]
    cells = {}
    for kind in KINDS:
        cell = []
        for i in range(nodes):
            srcs = sorted(int(s) for s in rng.choice(i + 2, size=2, replace=False))
            cell.append([(s, choices[int(rng.integers(len(choices)))]) for s in srcs])
        cells[kind] = cell
    return Genotype(normal=cells["normal"], reduction=cells["reduction"], **meta).validate()


def saturated_alphas(genotype: Genotype, kind: str, magnitude: float = 1e6) -> np.ndarray:
    """Alpha matrix whose softmax is one-hot on the genotype's ops.

    Edges absent from the genotype saturate on ``none``.
    """
    nodes = genotype.nodes
    a = np.zeros((edge_count(nodes), len(OPS)))
    for i in range(nodes):
        for j in range(i + 2):
            a[edge_index(i, j), NONE_INDEX] = magnitude
    for i, node in enumerate(genotype.cell(kind)):
        for s, op in node:
            r = edge_index(i, s)
            a[r, NONE_INDEX] = 0.0
            a[r, OPS.index(op)] = magnitude
    return a
