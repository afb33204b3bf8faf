"""Versioned binary checkpoints.

Layout (little-endian)::

    b"SNCK"  magic
    u16      format version
    u32      header length in bytes
    header   UTF-8 JSON: network config echo, free-form run config, entry index
    blobs    raw parameter and buffer bytes, in index order

Each index entry holds ``name``, ``kind`` (param/buffer), ``dtype``,
``shape``, ``offset`` (from the start of the blob section) and ``nbytes``.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .genotype import Genotype
from .spiking import LifConfig
from .supernet import MacroConfig, Network

MAGIC = b"SNCK"
VERSION = 1
_PRE = struct.Struct("<4sHI")


class CheckpointError(ValueError):
    pass


def _entries(model: Network):
    for name, p in model.named_parameters():
        yield name, "param", p.data
    for name, b in model.named_buffers():
        yield name, "buffer", b


def save_checkpoint(path, model: Network, config: Optional[dict] = None, extra: Optional[dict] = None):
    """Write ``model`` atomically (temp file + rename)."""
    index, blobs, off = [], [], 0
    for name, kind, arr in _entries(model):
        a = np.ascontiguousarray(arr)
        le = a.astype(a.dtype.newbyteorder("<"), copy=False)
        raw = le.tobytes()
        index.append({"name": name, "kind": kind, "dtype": le.dtype.str, "shape": list(a.shape),
                      "offset": off, "nbytes": len(raw)})
        blobs.append(raw)
        off += len(raw)
    header = {
        "network": {
            "macro": asdict(model.macro),
            "genotype": None if model.genotype is None else model.genotype.to_text(),
            "lif": asdict(model.lif),
            "dtype": np.dtype(model.dtype).name,
        },
        "config": config or {},
        "extra": extra or {},
        "entries": index,
    }
    hb = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(_PRE.pack(MAGIC, VERSION, len(hb)))
            f.write(hb)
            for raw in blobs:
                f.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_checkpoint(path) -> Tuple[dict, dict]:
    """Return ``(header, {name: array})`` without building a network."""
    buf = Path(path).read_bytes()
    if len(buf) < _PRE.size:
        raise CheckpointError(f"{path}: too short for a checkpoint ({len(buf)} bytes)")
    magic, version, hlen = _PRE.unpack_from(buf, 0)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise CheckpointError(f"{path}: checkpoint format version {version}, this build reads "
                              f"version {VERSION}")
    start = _PRE.size + hlen
    if len(buf) < start:
        raise CheckpointError(f"{path}: header truncated")
    header = json.loads(buf[_PRE.size:start].decode())
    arrays = {}
    for e in header["entries"]:
        lo = start + e["offset"]
        if lo + e["nbytes"] > len(buf):
            raise CheckpointError(f"{path}: blob {e['name']!r} truncated at byte {lo}")
        a = np.frombuffer(buf, np.dtype(e["dtype"]), e["nbytes"] // np.dtype(e["dtype"]).itemsize, lo)
        arrays[e["name"]] = a.reshape(e["shape"]).astype(np.dtype(e["dtype"]).newbyteorder("="))
    return header, arrays


def load_checkpoint(path) -> Tuple[Network, dict]:
    """Rebuild the network recorded in ``path`` and fill in its state."""
    header, arrays = read_checkpoint(path)
    net = header["network"]
    geno = Genotype.from_text(net["genotype"]) if net["genotype"] else None
    model = Network(MacroConfig(**net["macro"]), genotype=geno, lif=LifConfig(**net["lif"]),
                    dtype=np.dtype(net["dtype"]).type)
    kinds = {e["name"]: e["kind"] for e in header["entries"]}
    targets = {n: ("param", p.data) for n, p in model.named_parameters()}
    targets.update({n: ("buffer", b) for n, b in model.named_buffers()})
    if set(targets) != set(arrays):
        missing = sorted(set(targets) - set(arrays))[:3]
        unknown = sorted(set(arrays) - set(targets))[:3]
        raise CheckpointError(f"{path}: entries do not match the network "
                              f"(missing {missing}, unexpected {unknown})")
    for name, (kind, dst) in targets.items():
        src = arrays[name]
        if kinds[name] != kind or src.shape != dst.shape:
            raise CheckpointError(f"{path}: entry {name!r} is {kinds[name]} {src.shape}, "
                                  f"network expects {kind} {dst.shape}")
        dst[...] = src
    return model, header
