"""Resolved run configuration with per-field provenance.

Config files are flat ``key = value`` text; keys carry a section prefix
(``search.``, ``retrain.``, ``macro.``, ``data.``, ``run.``). Flags override
the file, the file overrides defaults, and every field remembers which of
the three supplied its value.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple

from .supernet import ConfigError
from .train import RetrainConfig, SearchConfig


@dataclass
class DataConfig:
    path: str = "synth"         # dataset file, or "synth" for the generator
    format: str = "auto"        # auto | raw-binary | csv
    stats: str = "auto"         # sidecar stats file, "auto" = <path>.stats if present, else computed
    split_seed: int = 0
    synth_classes: int = 4
    synth_per_class: int = 500
    synth_size: int = 16
    synth_noise: float = 0.2
    synth_seed: int = 7
    synth_channels: int = 3


@dataclass
class MacroOptions:
    """Macro-network settings not already carried by the stage configs."""
    nodes: int = 4
    reduction_positions: str = "auto"   # comma-separated cell indices
    aux_after: str = "auto"
    aux_weight: float = 0.4
    aux_channels: int = 128
    attention_every_cell: bool = False
    ma_reduction: int = 4
    spatial_kernel: int = 7
    search_attention: str = "off"

    def macro_kwargs(self) -> dict:
        kw = dict(nodes=self.nodes, aux_weight=self.aux_weight, aux_channels=self.aux_channels,
                  attention_every_cell=self.attention_every_cell, ma_reduction=self.ma_reduction,
                  spatial_kernel=self.spatial_kernel)
        if self.reduction_positions != "auto":
            kw["reduction_positions"] = [int(v) for v in self.reduction_positions.split(",") if v.strip()]
        if self.aux_after != "auto":
            kw["aux_after"] = int(self.aux_after)
        return kw


@dataclass
class RunOptions:
    out: str = ""   # empty: runs/<command>


SECTIONS = {"search": SearchConfig, "retrain": RetrainConfig, "macro": MacroOptions,
            "data": DataConfig, "run": RunOptions}

# short flags that fan out to several keys
ALIASES: Dict[str, Tuple[str, ...]] = {
    "data": ("data.path",),
    "layers": ("search.layers", "retrain.layers"),
    "channels": ("search.init_channels", "retrain.init_channels"),
    "seed": ("search.seed", "retrain.seed"),
    "out": ("run.out",),
    "attention": ("retrain.attention",),
}


def _parse(raw: str, default: Any, key: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw


def _defaults() -> Dict[str, Any]:
    out = {}
    for sec, cls in SECTIONS.items():
        for f in fields(cls):
            out[f"{sec}.{f.name}"] = getattr(cls, f.name, f.default)
    return out


@dataclass
class RunConfig:
    values: Dict[str, Any] = field(default_factory=_defaults)
    provenance: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        for k in self.values:
            self.provenance.setdefault(k, "default")

    @staticmethod
    def keys() -> List[str]:
        return list(_defaults())

    def set(self, key: str, raw, source: str):
        if key not in self.values:
            raise ConfigError(f"unknown config key {key!r}")
        default = _defaults()[key]
        self.values[key] = _parse(raw, default, key) if isinstance(raw, str) else raw
        self.provenance[key] = source

    def apply_file(self, path):
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        for lineno, line in enumerate(p.read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{p}:{lineno}: expected 'key = value'")
            k, v = (s.strip() for s in line.split("=", 1))
            try:
                self.set(k, v, "file")
            except ConfigError as e:
                raise ConfigError(f"{p}:{lineno}: {e}") from None

    def apply_flags(self, pairs: Iterable[Tuple[str, str]]):
        for k, v in pairs:
            for target in ALIASES.get(k, (k,)):
                self.set(target, v, "flag")

    def section(self, name: str):
        cls = SECTIONS[name]
        kw = {f.name: self.values[f"{name}.{f.name}"] for f in fields(cls)}
        try:
            return cls(**kw)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid {name} settings: {e}") from None

    def to_text(self) -> str:
        lines = []
        for k in self.keys():
            lines.append(f"{k} = {_fmt(self.values[k])}  # {self.provenance[k]}")
        return "\n".join(lines) + "\n"

    def as_dict(self) -> dict:
        return dict(self.values)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def resolve(config_file: Optional[str], flag_pairs: Iterable[Tuple[str, str]]) -> RunConfig:
    cfg = RunConfig()
    if config_file:
        cfg.apply_file(config_file)
    cfg.apply_flags(flag_pairs)
    return cfg
