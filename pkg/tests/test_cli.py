import hashlib
import subprocess
import sys

import numpy as np
import pytest

from snnas import cli, gradcheck
from snnas.checkpoint import save_checkpoint
from snnas.config import ConfigError, RunConfig, resolve
from snnas.data import save_binary, synthetic_gen, write_stats, stats_path
from snnas.genotype import Genotype, random_genotype, saturated_alphas
from snnas.supernet import MacroConfig, Network
from snnas.train import TrainHistory

SMALL = ["--data.synth_per_class", "12", "--data.synth_size", "8", "--layers", "2", "--channels", "4",
         "--seed", "7", "--search.batch_size", "16", "--retrain.batch_size", "16"]


def sha(p):
    return hashlib.sha256(p.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def searched(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "search"
    assert cli.main(["search", *SMALL, "--epochs", "2", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def retrained(searched, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "retrain"
    code = cli.main(["retrain", "--genotype", str(searched / "genotype.txt"), *SMALL, "--epochs", "2",
                     "--attention", "ma", "--out", str(out)])
    assert code == 0
    return out


# ------------------------------------------------------------------ config

def test_config_precedence_and_provenance(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("search.epochs = 7  # from file\nsearch.w_lr = 0.01\n\n# comment\n")
    cfg = resolve(str(f), [("search.epochs", "9"), ("layers", "3")])
    assert cfg.values["search.epochs"] == 9 and cfg.provenance["search.epochs"] == "flag"
    assert cfg.values["search.w_lr"] == 0.01 and cfg.provenance["search.w_lr"] == "file"
    assert cfg.values["retrain.layers"] == 3 and cfg.values["search.layers"] == 3
    assert cfg.provenance["retrain.epochs"] == "default"
    text = cfg.to_text()
    assert "search.epochs = 9  # flag" in text
    assert len(text.splitlines()) == len(RunConfig.keys())


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="unknown"):
        resolve(None, [("search.nope", "1")])
    with pytest.raises(ConfigError, match="parse"):
        resolve(None, [("search.epochs", "ten")])
    f = tmp_path / "bad.cfg"
    f.write_text("search.epochs 4\n")
    with pytest.raises(ConfigError, match="bad.cfg:1"):
        resolve(str(f), [])
    with pytest.raises(ConfigError):
        resolve(None, [("search.w_lr", "-1")]).section("search")


# ------------------------------------------------------------------ commands

def test_search_artifacts(searched):
    names = {p.name for p in searched.iterdir()}
    assert {"config.txt", "genotype.txt", "genotype.dot", "history.csv", "nos.csv", "stats.txt",
            "checkpoints"} <= names
    g = Genotype.from_text((searched / "genotype.txt").read_text())
    assert g.layers == 2 and g.channels == 4
    hist = TrainHistory.from_csv((searched / "history.csv").read_text())
    assert len(hist) == 2
    assert "search.epochs = 2  # flag" in (searched / "config.txt").read_text()
    assert (searched / "checkpoints" / "supernet.ckpt").exists()


def test_search_rerun_identical(searched, tmp_path):
    out = tmp_path / "again"
    assert cli.main(["search", *SMALL, "--epochs", "2", "--out", str(out)]) == 0
    for name in ("genotype.txt", "history.csv", "nos.csv", "stats.txt"):
        assert sha(out / name) == sha(searched / name), name

    def cfg_lines(d):  # the echo differs only in the output directory
        return [l for l in (d / "config.txt").read_text().splitlines() if not l.startswith("run.out")]
    assert cfg_lines(out) == cfg_lines(searched)


def test_derive_matches_search(searched, tmp_path, capsys):
    out = tmp_path / "derived"
    assert cli.main(["derive", "--checkpoint", str(searched / "checkpoints" / "supernet.ckpt"),
                     "--out", str(out)]) == 0
    assert (out / "genotype.txt").read_text() == (searched / "genotype.txt").read_text()


def test_derive_planted_genotype(tmp_path):
    g = random_genotype(np.random.default_rng(11), channels=4, layers=2)
    net = Network(MacroConfig(layers=2, init_channels=4, classes=3), seed=0)
    net.alpha_normal.data[...] = saturated_alphas(g, "normal")
    net.alpha_reduction.data[...] = saturated_alphas(g, "reduction")
    ck = tmp_path / "planted.ckpt"
    save_checkpoint(ck, net)
    assert cli.main(["derive", "--checkpoint", str(ck), "--out", str(tmp_path / "d")]) == 0
    d = Genotype.from_text((tmp_path / "d" / "genotype.txt").read_text())
    assert d.normal == g.normal and d.reduction == g.reduction


def test_derive_rejects_discrete_checkpoint(retrained, tmp_path):
    code = cli.main(["derive", "--checkpoint", str(retrained / "checkpoints" / "final.ckpt"),
                     "--out", str(tmp_path / "x")])
    assert code == 2 and not (tmp_path / "x").exists()


def test_eval_matches_final_history_row(retrained, capsys):
    assert cli.main(["eval", "--checkpoint", str(retrained / "checkpoints" / "final.ckpt")]) == 0
    rows = dict(line.split(",") for line in capsys.readouterr().out.strip().splitlines()[1:])
    hist = TrainHistory.from_csv((retrained / "history.csv").read_text())
    assert float(rows["accuracy"]) == hist[-1].val_acc
    assert int(rows["images"]) == hist[-1].val_images
    assert int(rows["nos_total"]) == hist[-1].nos_val_total


def test_spikes_report(retrained, tmp_path):
    out = tmp_path / "sp"
    assert cli.main(["spikes", "--checkpoint", str(retrained / "checkpoints" / "final.ckpt"),
                     "--out", str(out)]) == 0
    lines = (out / "nos.csv").read_text().splitlines()
    assert lines[0] == "cell,spikes,capacity,spikes_per_image,firing_rate"
    cells = [l.split(",") for l in lines[1:-1]]
    total = lines[-1].split(",")
    assert sum(int(c[1]) for c in cells) == int(total[1])
    assert all(int(c[1]) <= int(c[2]) for c in cells)


def test_retrain_records_attention(retrained):
    g = Genotype.from_text((retrained / "genotype.txt").read_text())
    assert g.layers == 2
    assert "retrain.attention = ma  # flag" in (retrained / "config.txt").read_text()


def test_dataset_file_and_stats_sidecar(tmp_path):
    ds = synthetic_gen(3, 10, 8, 0.1, 0)
    p = tmp_path / "d.bin"
    save_binary(ds, p)
    write_stats(stats_path(p), [0.5, 0.5, 0.5], [0.25, 0.25, 0.25])
    out = tmp_path / "s"
    assert cli.main(["search", "--data", str(p), "--layers", "2", "--channels", "4", "--epochs", "1",
                     "--out", str(out)]) == 0
    assert (out / "stats.txt").read_text().splitlines()[0].split() == ["0.5", "0.25"]


# ------------------------------------------------------------------ errors

def test_missing_dataset_exit_2_no_artifacts(tmp_path, capsys):
    out = tmp_path / "none"
    assert cli.main(["search", "--data", str(tmp_path / "nope.bin"), "--out", str(out)]) == 2
    assert not out.exists()
    assert "not found" in capsys.readouterr().err


def test_bad_flag_value_exit_2(tmp_path):
    assert cli.main(["search", "--search.epochs", "many", "--out", str(tmp_path / "o")]) == 2
    with pytest.raises(SystemExit) as e:
        cli.main(["search", "--no-such-flag", "1"])
    assert e.value.code == 2


def test_output_cannot_overwrite_input(searched, tmp_path):
    code = cli.main(["retrain", "--genotype", str(searched / "genotype.txt"), *SMALL, "--epochs", "1",
                     "--out", str(searched)])
    assert code == 2
    assert (searched / "checkpoints" / "supernet.ckpt").exists()


def test_failed_run_leaves_previous_output(searched, tmp_path, monkeypatch):
    out = tmp_path / "keep"
    out.mkdir()
    (out / "marker").write_text("x")

    def boom(*a, **k):
        raise RuntimeError("disk on fire")

    monkeypatch.setattr(cli, "search", boom)
    assert cli.main(["search", *SMALL, "--epochs", "1", "--out", str(out)]) == 1
    assert (out / "marker").read_text() == "x"


def test_gradcheck_exit_codes(tmp_path, monkeypatch):
    out = tmp_path / "g"
    good = {"linear": gradcheck.PRIMITIVES["linear"]}
    monkeypatch.setattr(gradcheck, "PRIMITIVES", good)
    assert cli.main(["gradcheck", "--instances", "3", "--out", str(out)]) == 0
    assert "linear,3," in (out / "gradcheck.csv").read_text()

    def broken(rng):
        from snnas.autograd import Tensor, make_result
        x = Tensor(rng.standard_normal(3), requires_grad=True)
        return (lambda: make_result(x.data ** 2, (x,), lambda g: (g,))), [x]

    monkeypatch.setattr(gradcheck, "PRIMITIVES", {**good, "broken": (broken, 1e-4, False)})
    assert cli.main(["gradcheck", "--instances", "2", "--out", str(tmp_path / "g2")]) == 1
    assert "broken,2," in (tmp_path / "g2" / "gradcheck.csv").read_text()


def test_console_entry_point_runs():
    r = subprocess.run([sys.executable, "-m", "snnas.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for cmd in ("search", "derive", "retrain", "eval", "spikes", "gradcheck"):
        assert cmd in r.stdout
