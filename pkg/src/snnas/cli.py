"""Command line: search, derive, retrain, eval, spikes, gradcheck.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Set SNNAS_NUM_THREADS to cap BLAS threads.
"""
from __future__ import annotations

import argparse
import contextlib
import logging
import os
import shutil
import sys
import tempfile
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, read_checkpoint, save_checkpoint
from .config import ALIASES, RunConfig, resolve
from .data import (DatasetError, ImageDataset, SplitPlan, channel_stats, load_dataset, normalize,
                   read_stats, split_indices, stats_path, synthetic_gen, write_stats)
from .genotype import Genotype, GenotypeError, derive_genotype
from .gradcheck import format_table, run_suite
from .supernet import ConfigError
from .train import build_macro, evaluate, retrain, search

log = logging.getLogger("snnas")

USAGE_ERRORS = (ConfigError, DatasetError, GenotypeError, CheckpointError, FileNotFoundError)



# ------------------------------------------------------------------ data
def load_data(values: dict) -> ImageDataset:
    if values["data.path"] == "synth":
        return synthetic_gen(values["data.synth_classes"], values["data.synth_per_class"],
                             values["data.synth_size"], values["data.synth_noise"],
                             values["data.synth_seed"], values["data.synth_channels"])
    fmt = values["data.format"]
    return load_dataset(values["data.path"], None if fmt == "auto" else fmt)


def stage_data(ds: ImageDataset, values: dict, stage: str, stats=None):
    """Split for ``stage`` and normalize; returns (train, held_out, (mean, std))."""
    ia, ib = split_indices(ds.labels, SplitPlan(stage).ratios, values["data.split_seed"])
    if stats is None:
        sp = values["data.stats"]
        if sp != "auto":
            stats = read_stats(sp)
        elif values["data.path"] != "synth" and stats_path(values["data.path"]).exists():
            stats = read_stats(stats_path(values["data.path"]))
        else:
            stats = channel_stats(ds, ia)
    mean, std = (np.asarray(s, dtype=np.float64) for s in stats)
    x = normalize(ds, mean, std)
    return (x[ia], ds.labels[ia]), (x[ib], ds.labels[ib]), (mean, std)


# ---------------------------------------------------------------- output
@contextlib.contextmanager
def staged_output(out: Path, inputs: Sequence[Path] = ()):
    """Yield a scratch directory that replaces ``out`` only on success."""
    out = out.resolve()
    for p in inputs:
        if out == p.resolve() or out in p.resolve().parents:
            raise ConfigError(f"output directory {out} contains input {p}; choose another --out")
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if out.exists():
        old = out.parent / f".{out.name}.old-{os.getpid()}"
        os.rename(out, old)
        os.rename(tmp, out)
        shutil.rmtree(old, ignore_errors=True)
    else:
        os.rename(tmp, out)


def _write_common(tmp: Path, cfg: RunConfig, history=None, genotype: Optional[Genotype] = None,
                  stats=None):
    (tmp / "config.txt").write_text(cfg.to_text())
    if genotype is not None:
        (tmp / "genotype.txt").write_text(genotype.to_text())
        (tmp / "genotype.dot").write_text(genotype.to_dot())
    if history is not None:
        history.to_csv(tmp / "history.csv")
        history.nos_csv(tmp / "nos.csv")
    if stats is not None:
        write_stats(tmp / "stats.txt", *stats)
    (tmp / "checkpoints").mkdir(exist_ok=True)


def _progress(stage):
    def cb(r):
        log.info("%s epoch %d lr=%.5f train_loss=%.4f train_acc=%.4f val_loss=%.4f val_acc=%.4f "
                 "nos_val/img=%.1f", stage, r.epoch, r.lr, r.train_loss, r.train_acc, r.val_loss,
                 r.val_acc, r.nos_val_per_image)
    return cb


def _meta(cfg: RunConfig, command: str, stage: str, stats) -> dict:
    return {"command": command, "stage": stage, "values": cfg.as_dict(),
            "stats": {"mean": [float(v) for v in stats[0]], "std": [float(v) for v in stats[1]]}}


def _out_dir(cfg: RunConfig, command: str) -> Path:
    return Path(cfg.values["run.out"] or f"runs/{command}")


# -------------------------------------------------------------- commands
def cmd_search(cfg: RunConfig) -> int:
    v = cfg.values
    sc, mo = cfg.section("search"), cfg.section("macro")
    ds = load_data(v)
    train, held, stats = stage_data(ds, v, "search")
    macro = build_macro(sc, ds.classes, ds.images.shape[1], attention=mo.search_attention,
                        **mo.macro_kwargs())
    res = search(train, held, sc, macro, _progress("search"))
    out = _out_dir(cfg, "search")
    with staged_output(out) as tmp:
        _write_common(tmp, cfg, res.history, res.genotype, stats)
        save_checkpoint(tmp / "checkpoints" / "supernet.ckpt", res.model,
                        _meta(cfg, "search", "search", stats))
    print(f"search: val_acc={res.history[-1].val_acc:.4f} genotype -> {out / 'genotype.txt'}")
    return 0


def cmd_derive(checkpoint: Path, out: Optional[Path]) -> int:
    header, arrays = read_checkpoint(checkpoint)
    if "alpha_normal" not in arrays:
        raise CheckpointError(f"{checkpoint}: no architecture parameters (not a supernet checkpoint)")
    macro = header["network"]["macro"]
    geno = derive_genotype(arrays["alpha_normal"], arrays["alpha_reduction"], macro["nodes"],
                           channels=macro["init_channels"], layers=macro["layers"],
                           attention=macro["attention"])
    out = out or Path("runs/derive")
    with staged_output(out, [checkpoint]) as tmp:
        (tmp / "genotype.txt").write_text(geno.to_text())
        (tmp / "genotype.dot").write_text(geno.to_dot())
    print(geno.to_text(), end="")
    return 0


def cmd_retrain(cfg: RunConfig, genotype_path: Path) -> int:
    if not genotype_path.exists():
        raise FileNotFoundError(f"genotype file not found: {genotype_path}")
    geno = Genotype.from_text(genotype_path.read_text())
    v = cfg.values
    rc, mo = cfg.section("retrain"), cfg.section("macro")
    ds = load_data(v)
    train, held, stats = stage_data(ds, v, "retrain")
    macro = build_macro(rc, ds.classes, ds.images.shape[1], **mo.macro_kwargs())
    res = retrain(geno, train, held, rc, macro, _progress("retrain"))
    out = _out_dir(cfg, "retrain")
    with staged_output(out, [genotype_path]) as tmp:
        _write_common(tmp, cfg, res.history, geno, stats)
        save_checkpoint(tmp / "checkpoints" / "final.ckpt", res.model,
                        _meta(cfg, "retrain", "retrain", stats))
    last = res.history[-1].val_acc if len(res.history) else float("nan")
    print(f"retrain: val_acc={last:.4f} checkpoint -> {out / 'checkpoints' / 'final.ckpt'}")
    return 0


def _eval_setup(checkpoint: Path, flags: List[Tuple[str, str]]):
    model, header = load_checkpoint(checkpoint)
    extra = header.get("config", {})
    cfg = RunConfig()
    for k, val in extra.get("values", {}).items():
        if k in cfg.values:
            cfg.set(k, val, "file")
    cfg.apply_flags(flags)
    stats = None
    if "stats" in extra and not any(k.startswith("data.") for k, _ in flags):
        stats = (extra["stats"]["mean"], extra["stats"]["std"])
    ds = load_data(cfg.values)
    _, held, _ = stage_data(ds, cfg.values, extra.get("stage", "retrain"), stats)
    return model, held


def _emit(text: str, out: Optional[Path], name: str, inputs):
    if out is None:
        sys.stdout.write(text)
        return
    with staged_output(out, inputs) as tmp:
        (tmp / name).write_text(text)


def cmd_eval(checkpoint: Path, flags, out: Optional[Path]) -> int:
    model, held = _eval_setup(checkpoint, flags)
    loss, acc, ledger = evaluate(model, held, scope="eval")
    n = len(held[1])
    rows = [("images", n), ("loss", repr(loss)), ("accuracy", repr(acc)),
            ("nos_total", ledger.total), ("nos_per_image", repr(ledger.total / n))]
    rows += [(f"nos_cell_{i}", c) for i, c in enumerate(ledger.per_cell)]
    _emit("metric,value\n" + "".join(f"{k},{val}\n" for k, val in rows), out, "eval.csv",
          [checkpoint])
    print(f"eval: accuracy={acc:.4f} loss={loss:.4f} spikes/image={ledger.total / n:.1f}",
          file=sys.stderr)
    return 0


def cmd_spikes(checkpoint: Path, flags, out: Optional[Path]) -> int:
    model, held = _eval_setup(checkpoint, flags)
    _, _, ledger = evaluate(model, held, scope="eval")
    n = len(held[1])
    lines = ["cell,spikes,capacity,spikes_per_image,firing_rate"]
    for i, (s, c) in enumerate(zip(ledger.per_cell, ledger.capacity)):
        lines.append(f"{i},{s},{c},{s / n!r},{(s / c if c else 0.0)!r}")
    lines.append(f"total,{ledger.total},{sum(ledger.capacity)},{ledger.total / n!r},"
                 f"{ledger.total / max(sum(ledger.capacity), 1)!r}")
    _emit("\n".join(lines) + "\n", out, "nos.csv", [checkpoint])
    print(f"spikes: total={ledger.total} over {n} images", file=sys.stderr)
    return 0


def cmd_gradcheck(instances: int, seed: int, out: Optional[Path]) -> int:
    rows = run_suite(instances, seed)
    _emit(format_table(rows), out, "gradcheck.csv", [])
    failed = [r.primitive for r in rows if not r.passed]
    print(f"gradcheck: {len(rows) - len(failed)}/{len(rows)} primitives pass"
          + (f"; failing: {', '.join(failed)}" if failed else ""), file=sys.stderr)
    return 1 if failed else 0


# ---------------------------------------------------------------- parser
def _add_config_flags(p: argparse.ArgumentParser, command: str):
    p.add_argument("--config", help="key = value config file")
    g = p.add_argument_group("config keys (override the file)")
    for key in RunConfig.keys():
        g.add_argument(f"--{key}", dest=f"cfg:{key}", metavar="V", default=argparse.SUPPRESS)
    for alias in ALIASES:
        g.add_argument(f"--{alias}", dest=f"cfg:{alias}", metavar="V", default=argparse.SUPPRESS)
    if command in ("search", "retrain"):
        g.add_argument("--epochs", dest=f"cfg:{command}.epochs", metavar="N",
                       default=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="snnas", description="Spiking cell search and retraining.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log every epoch")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("search", parents=[common], help="bilevel search; writes genotype, history, supernet checkpoint")
    _add_config_flags(p, "search")
    p = sub.add_parser("derive", parents=[common], help="genotype from a supernet checkpoint")
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--out", type=Path)
    p = sub.add_parser("retrain", parents=[common], help="train a genotype from scratch")
    p.add_argument("--genotype", required=True, type=Path)
    _add_config_flags(p, "retrain")
    for name in ("eval", "spikes"):
        p = sub.add_parser(name, parents=[common], help="accuracy and spike report" if name == "eval"
                           else "per-cell spike counts")
        p.add_argument("--checkpoint", required=True, type=Path)
        _add_config_flags(p, name)
    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every primitive")
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path)
    return ap


def _flag_pairs(ns: argparse.Namespace) -> List[Tuple[str, str]]:
    return [(k[4:], v) for k, v in vars(ns).items() if k.startswith("cfg:")]


def _limit_threads():
    n = os.environ.get("SNNAS_NUM_THREADS")
    if not n:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(int(n))


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = build_parser()
    ns = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(asctime)s %(message)s", stream=sys.stderr)
    try:
        with _limit_threads():
            if ns.command == "gradcheck":
                return cmd_gradcheck(ns.instances, ns.seed, ns.out)
            if ns.command == "derive":
                return cmd_derive(ns.checkpoint, ns.out)
            flags = _flag_pairs(ns)
            if ns.command in ("eval", "spikes"):
                if not ns.checkpoint.exists():
                    raise FileNotFoundError(f"checkpoint not found: {ns.checkpoint}")
                out = dict(flags).get("out") or dict(flags).get("run.out")
                rest = [(k, v) for k, v in flags if k not in ("out", "run.out")]
                fn = cmd_eval if ns.command == "eval" else cmd_spikes
                return fn(ns.checkpoint, rest, Path(out) if out else None)
            cfg = resolve(ns.config, flags)
            if ns.command == "search":
                return cmd_search(cfg)
            return cmd_retrain(cfg, ns.genotype)
    except USAGE_ERRORS as e:
        print(f"snnas {ns.command}: error: {e}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 1
    except Exception as e:  # runtime failure
        log.exception("unexpected failure")
        print(f"snnas {ns.command}: failed: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
