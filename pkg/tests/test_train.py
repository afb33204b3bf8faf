import json
import struct

import numpy as np
import pytest

from snnas import functional as F
from snnas.autograd import Tensor
from snnas.checkpoint import CheckpointError, load_checkpoint, read_checkpoint, save_checkpoint
from snnas.data import SplitPlan, channel_stats, normalize, split, synthetic_gen
from snnas.genotype import random_genotype
from snnas.optim import SGD, Adam
from snnas.supernet import ConfigError, MacroConfig, Network
from snnas.train import (EpochRecord, RetrainConfig, SearchConfig, TrainHistory, bilevel_epoch,
                         build_macro, cross_entropy, evaluate, predict, retrain, search, train_epoch)


def arrays(classes=2, per_class=40, size=8, noise=0.0, seed=0, stage="search"):
    ds = synthetic_gen(classes, per_class, size, noise, seed)
    tr, va = split(ds, SplitPlan(stage, 0))
    m, s = channel_stats(tr)
    return (normalize(tr, m, s), tr.labels), (normalize(va, m, s), va.labels)


def tiny_macro(classes=2, **kw):
    base = dict(layers=2, init_channels=4, classes=classes, time_window=2)
    base.update(kw)
    return MacroConfig(**base)


# ------------------------------------------------------------------ loss

def test_cross_entropy_with_aux(rng):
    z = Tensor(rng.standard_normal((4, 3)))
    a = Tensor(rng.standard_normal((4, 3)))
    y = np.array([0, 1, 2, 0])
    main = F.cross_entropy(z, y).data
    both = cross_entropy(z, y, a, 0.4).data
    assert abs(both - (main + 0.4 * F.cross_entropy(a, y).data)) < 1e-12
    assert cross_entropy(z, y).data == main


# ------------------------------------------------------------------ history

def _history(n_cells=2, epochs=3):
    h = TrainHistory(n_cells)
    for e in range(epochs):
        h.append(EpochRecord(e, 0.1 / (e + 1), 1.0 / 3, 0.5, 0.25, 0.75, 100, 20,
                             [10 * e + 1, 7], [3, 4 * e]))
    return h


def test_history_csv_round_trip():
    h = _history()
    text = h.to_csv()
    cols = text.splitlines()[0].split(",")
    assert "nos_train_total" in cols and "nos_val_total" in cols
    assert [c for c in cols if c.startswith("nos_train_cell_")] == ["nos_train_cell_0", "nos_train_cell_1"]
    back = TrainHistory.from_csv(text)
    assert back.to_csv() == text
    assert back[2].lr == h[2].lr  # floats survive exactly


def test_history_totals_and_sequence():
    h = _history()
    rows = [dict(zip(h.columns(), row)) for row in h.rows()]
    for r, rec in zip(rows, h):
        assert int(r["nos_train_total"]) == sum(rec.nos_train)
        assert int(r["nos_val_total"]) == sum(rec.nos_val)
    with pytest.raises(ValueError):
        h.append(EpochRecord(7, 0.1, 0, 0, 0, 0, 1, 1, [0, 0], [0, 0]))


def test_nos_csv_has_both_scopes():
    text = _history().nos_csv()
    scopes = {ln.split(",")[1] for ln in text.splitlines()[1:]}
    assert scopes == {"train", "validation"}


# ------------------------------------------------------------------ configs

def test_config_validation():
    with pytest.raises(ConfigError):
        SearchConfig(alpha_lr=0)
    with pytest.raises(ConfigError):
        SearchConfig(epochs=0)
    with pytest.raises(ConfigError):
        RetrainConfig(w_lr=-1)
    RetrainConfig(epochs=0)


def test_build_macro_threads_stage_fields():
    m = build_macro(SearchConfig(layers=3, init_channels=6, time_window=3), 5, 1, attention="ct")
    assert (m.layers, m.init_channels, m.time_window, m.classes, m.in_channels, m.attention) == (3, 6, 3, 5, 1, "ct")
    r = build_macro(RetrainConfig(attention="ma", layers=2), 4, 3)
    assert r.attention == "ma"


# ------------------------------------------------------------------ freezing

def _search_parts(seed=0):
    train, val = arrays(per_class=16)
    net = Network(tiny_macro(), seed=seed)
    cfg = SearchConfig(epochs=1, batch_size=8, layers=2, init_channels=4)
    return net, cfg, train, val


def test_zero_alpha_lr_leaves_alpha_bit_identical():
    net, cfg, train, val = _search_parts()
    before = [a.data.copy() for a in net.alphas()]
    w_before = [p.data.copy() for p in net.parameters("weight")]
    w_opt = SGD(net.parameters("weight"), 0.01, 0.9, 3e-4)
    a_opt = Adam(net.parameters("alpha"), 0.0, weight_decay=1e-3)
    bilevel_epoch(net, w_opt, a_opt, train, val, cfg, np.random.default_rng(0))
    for a, b in zip(net.alphas(), before):
        assert a.data.tobytes() == b.tobytes()
    assert any(p.data.tobytes() != b.tobytes() for p, b in zip(net.parameters("weight"), w_before))


def test_zero_weight_lr_leaves_weights_bit_identical():
    net, cfg, train, val = _search_parts()
    before = [p.data.copy() for p in net.parameters("weight")]
    a_before = [a.data.copy() for a in net.alphas()]
    w_opt = SGD(net.parameters("weight"), 0.0, 0.9, 3e-4)
    a_opt = Adam(net.parameters("alpha"), 3e-4, weight_decay=1e-3)
    bilevel_epoch(net, w_opt, a_opt, train, val, cfg, np.random.default_rng(0))
    for p, b in zip(net.parameters("weight"), before):
        assert p.data.tobytes() == b.tobytes()
    assert any(a.data.tobytes() != b.tobytes() for a, b in zip(net.alphas(), a_before))


def test_partition_guard():
    net, cfg, train, val = _search_parts()
    w_opt = SGD(net.parameters("weight")[1:], 0.01)
    a_opt = Adam(net.parameters("alpha"), 3e-4)
    with pytest.raises(AssertionError):
        bilevel_epoch(net, w_opt, a_opt, train, val, cfg, np.random.default_rng(0))


def test_empty_streams_rejected():
    net, cfg, train, val = _search_parts()
    empty = (val[0][:0], val[1][:0])
    w_opt = SGD(net.parameters("weight"), 0.01)
    with pytest.raises(ValueError):
        bilevel_epoch(net, w_opt, Adam(net.parameters("alpha"), 1e-3), train, empty, cfg, np.random.default_rng(0))
    with pytest.raises(ValueError):
        train_epoch(net, w_opt, empty, val, cfg, np.random.default_rng(0))


# ------------------------------------------------------------------ epochs and evaluation

def test_epoch_record_spike_series():
    net, cfg, train, val = _search_parts()
    rec = bilevel_epoch(net, SGD(net.parameters("weight"), 0.01), Adam(net.parameters("alpha"), 1e-3),
                        train, val, cfg, np.random.default_rng(0))
    assert rec.train_images == len(train[1]) and rec.val_images == len(val[1])
    assert len(rec.nos_train) == len(rec.nos_val) == 2
    assert rec.nos_train_total > 0 and rec.nos_val_total > 0


def test_evaluate_is_side_effect_free():
    net, cfg, train, val = _search_parts()
    bufs = [b.copy() for _, b in net.named_buffers()]
    l1, a1, led1 = evaluate(net, val, 7)
    l2, a2, led2 = evaluate(net, val, 64)
    for (_, b), c in zip(net.named_buffers(), bufs):
        np.testing.assert_array_equal(b, c)
    assert a1 == a2 and abs(l1 - l2) < 1e-5 and led1.per_cell == led2.per_cell
    assert net.training
    p = predict(net, val[0], 5)
    assert p.shape == (len(val[1]), 2)


def test_retrain_zero_epochs_returns_initial_model():
    train, val = arrays(per_class=10, stage="retrain")
    g = random_genotype(np.random.default_rng(0))
    macro = tiny_macro()
    res = retrain(g, train, val, RetrainConfig(epochs=0, layers=2, init_channels=4, seed=3), macro)
    assert len(res.history) == 0
    fresh = Network(macro, genotype=g, seed=3)
    for (n, p), (_, q) in zip(res.model.named_parameters(), fresh.named_parameters()):
        assert p.data.tobytes() == q.data.tobytes(), n


def test_retrain_rejects_inconsistent_inputs():
    train, val = arrays(per_class=10, stage="retrain")
    g = random_genotype(np.random.default_rng(0))
    with pytest.raises(ConfigError):
        retrain(g, train, val, RetrainConfig(epochs=1), tiny_macro(nodes=3))
    with pytest.raises(ConfigError):
        retrain(g, train, val, RetrainConfig(epochs=1), tiny_macro(in_channels=1))


def test_search_is_deterministic():
    train, val = arrays(per_class=12)
    cfg = SearchConfig(epochs=2, batch_size=8, layers=2, init_channels=4, seed=5)
    a = search(train, val, cfg, tiny_macro())
    b = search(train, val, cfg, tiny_macro())
    assert a.history.to_csv() == b.history.to_csv()
    assert a.genotype.to_text() == b.genotype.to_text()
    assert a.history[0].lr == cfg.w_lr and a.history[1].lr < cfg.w_lr


@pytest.mark.slow
def test_separable_two_class_search_learns():
    # two fixed gratings: a linearly separable set
    train, val = arrays(classes=2, per_class=100, size=16, noise=0.0, seed=2)
    cfg = SearchConfig(epochs=5, batch_size=32, layers=2, init_channels=8, seed=0)
    res = search(train, val, cfg, build_macro(cfg, 2, 3))
    assert res.history[-1].val_acc >= 0.95


# ------------------------------------------------------------------ checkpoints

@pytest.mark.parametrize("attention", ["off", "ma"])
def test_checkpoint_round_trip_bit_exact(tmp_path, attention):
    train, val = arrays(per_class=10, stage="retrain")
    g = random_genotype(np.random.default_rng(1), channels=4, layers=2)
    res = retrain(g, train, val, RetrainConfig(epochs=1, batch_size=8, layers=2, init_channels=4),
                  tiny_macro(attention=attention))
    p = tmp_path / "m.ckpt"
    save_checkpoint(p, res.model, {"stage": "retrain"})
    model, header = load_checkpoint(p)
    assert header["config"] == {"stage": "retrain"}
    a, b = predict(res.model, val[0]), predict(model, val[0])
    assert a.tobytes() == b.tobytes()
    sup = Network(tiny_macro(), seed=0)
    save_checkpoint(tmp_path / "s.ckpt", sup)
    sup2, _ = load_checkpoint(tmp_path / "s.ckpt")
    np.testing.assert_array_equal(sup2.alpha_normal.data, sup.alpha_normal.data)


def test_checkpoint_errors(tmp_path):
    net = Network(tiny_macro(), seed=0)
    p = tmp_path / "m.ckpt"
    save_checkpoint(p, net)
    raw = bytearray(p.read_bytes())
    bad = bytearray(raw)
    bad[4:6] = struct.pack("<H", 7)
    (tmp_path / "v.ckpt").write_bytes(bytes(bad))
    with pytest.raises(CheckpointError, match="version"):
        read_checkpoint(tmp_path / "v.ckpt")
    (tmp_path / "m2.ckpt").write_bytes(b"NOPE" + bytes(raw[4:]))
    with pytest.raises(CheckpointError):
        read_checkpoint(tmp_path / "m2.ckpt")
    (tmp_path / "t.ckpt").write_bytes(bytes(raw[:-10]))
    with pytest.raises(CheckpointError):
        read_checkpoint(tmp_path / "t.ckpt")
    header, arrays_ = read_checkpoint(p)
    assert json.dumps(header["network"]["macro"], sort_keys=True)
    assert set(arrays_) >= {"alpha_normal", "alpha_reduction"}
