import numpy as np

from snnas.gradcheck import PRIMITIVES, TOL_COMPOSITE, TOL_PRIMITIVE, format_table, run_suite


def test_every_listed_primitive_is_covered():
    need = {"conv2d_dense", "conv2d_depthwise", "pool2d_avg", "linear", "sigmoid", "softmax", "batchnorm",
            "ct_attention", "ma_attention", "mixed_edge_alpha", "cross_entropy", "lif_relaxed"}
    assert need <= set(PRIMITIVES)


def test_tolerances():
    for name, (_, tol, _) in PRIMITIVES.items():
        assert tol == (TOL_COMPOSITE if name in ("lif_relaxed", "spiking_block") else TOL_PRIMITIVE)


def test_suite_few_instances_pass():
    rows = run_suite(instances=3, seed=1)
    assert [r.primitive for r in rows] == list(PRIMITIVES)
    assert all(r.passed for r in rows), format_table(rows)
    assert all(np.isfinite(r.max_rel_error) for r in rows)


def test_suite_is_seeded():
    a = run_suite(2, 4, ["softmax", "lif_relaxed"])
    b = run_suite(2, 4, ["softmax", "lif_relaxed"])
    assert [r.max_rel_error for r in a] == [r.max_rel_error for r in b]


def test_table_format():
    text = format_table(run_suite(1, 0, ["linear"]))
    head, row = text.strip().splitlines()
    assert head == "primitive,instances,max_rel_error,tolerance,status"
    assert row.startswith("linear,1,") and row.endswith(",pass")
