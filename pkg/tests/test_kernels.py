"""Compiled kernels agree with the numpy fallback."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from snnas import _fallback as py
from snnas import kernels

try:
    from snnas import _kernels as cy
except ImportError:  # pragma: no cover
    cy = None

needs_cy = pytest.mark.skipif(cy is None, reason="compiled extension not built")


def _out(h, k, stride, pad, dil=1):
    return (h + 2 * pad - dil * (k - 1) - 1) // stride + 1


@needs_cy
@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), k=st.sampled_from([3, 5]), stride=st.sampled_from([1, 2]),
       dil=st.sampled_from([1, 2]), h=st.integers(4, 9), dtype=st.sampled_from([np.float32, np.float64]))
def test_dwconv_parity(seed, k, stride, dil, h, dtype):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 3, h, h + 1, 2)).astype(dtype)
    w = rng.standard_normal((3, k, k)).astype(dtype)
    pad = dil * (k // 2)
    oh, ow = _out(h, k, stride, pad, dil), _out(h + 1, k, stride, pad, dil)
    a = cy.dwconv_forward(x, w, stride, pad, pad, dil, oh, ow)
    b = py.dwconv_forward(x, w, stride, pad, pad, dil, oh, ow)
    tol = 1e-4 if dtype == np.float32 else 1e-12
    np.testing.assert_allclose(a, b, rtol=tol, atol=tol)
    g = rng.standard_normal(a.shape).astype(dtype)
    for ga, gb in zip(cy.dwconv_backward(g, x, w, stride, pad, pad, dil),
                      py.dwconv_backward(g, x, w, stride, pad, pad, dil)):
        np.testing.assert_allclose(ga, gb, rtol=tol, atol=tol * 10)


@needs_cy
@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), stride=st.sampled_from([1, 2]), h=st.integers(3, 9),
       ties=st.booleans())
def test_pool_parity(seed, stride, h, ties):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 3, h, h, 2))
    if ties:
        x = np.round(x)
    oh = _out(h, 3, stride, 1)
    ma, ia = cy.maxpool_forward(x, 3, stride, 1, oh, oh)
    mb, ib = py.maxpool_forward(x, 3, stride, 1, oh, oh)
    np.testing.assert_array_equal(ma, mb)
    np.testing.assert_array_equal(ia, ib)
    g = rng.standard_normal(ma.shape)
    np.testing.assert_allclose(cy.maxpool_backward(g, ia, h, h), py.maxpool_backward(g, ib, h, h), atol=1e-12)
    np.testing.assert_allclose(cy.avgpool_forward(x, 3, stride, 1, oh, oh),
                               py.avgpool_forward(x, 3, stride, 1, oh, oh), atol=1e-12)
    np.testing.assert_allclose(cy.avgpool_backward(g, h, h, 3, stride, 1),
                               py.avgpool_backward(g, h, h, 3, stride, 1), atol=1e-12)


@needs_cy
@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10_000), k=st.integers(1, 5), stride=st.integers(1, 3), pad=st.integers(0, 2),
       h=st.integers(1, 8), w=st.integers(1, 8), dtype=st.sampled_from([np.float32, np.float64]))
def test_avgpool_parity_bit_exact(seed, k, stride, pad, h, w, dtype):
    oh, ow = _out(h, k, stride, pad), _out(w, k, stride, pad)
    if oh < 1 or ow < 1:
        return
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 2, h, w, 3)).astype(dtype)
    np.testing.assert_array_equal(cy.avgpool_forward(x, k, stride, pad, oh, ow),
                                  py.avgpool_forward(x, k, stride, pad, oh, ow))
    g = rng.standard_normal((2, 2, oh, ow, 3)).astype(dtype)
    np.testing.assert_array_equal(cy.avgpool_backward(g, h, w, k, stride, pad),
                                  py.avgpool_backward(g, h, w, k, stride, pad))


@needs_cy
@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), steps=st.integers(1, 6), relaxed=st.booleans(),
       dtype=st.sampled_from([np.float32, np.float64]))
def test_lif_parity(seed, steps, relaxed, dtype):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-0.5, 1.5, (64, steps)).astype(dtype)
    ua, oa = cy.lif_forward(x, 0.2, 0.5, 1.0, relaxed)
    ub, ob = py.lif_forward(x, 0.2, 0.5, 1.0, relaxed)
    # the recurrence is elementwise, so both backends must agree bit for bit
    np.testing.assert_array_equal(ua, ub)
    np.testing.assert_array_equal(oa, ob)
    g = rng.standard_normal(x.shape).astype(dtype)
    np.testing.assert_allclose(cy.lif_backward(g, ua, oa, 0.2, 0.5, 1.0),
                               py.lif_backward(g, ub, ob, 0.2, 0.5, 1.0), rtol=1e-6, atol=1e-6)


def test_backend_switch(backend):
    assert kernels.BACKEND == backend
    from snnas import functional as F
    from snnas.autograd import Tensor
    x = Tensor(np.arange(16.0).reshape(1, 1, 4, 4, 1))
    assert F.pool2d(x, "max", 2, 2).data.ravel().tolist() == [5.0, 7.0, 13.0, 15.0]


def test_unknown_backend_rejected():
    with pytest.raises(ValueError):
        kernels.load_backend("fortran")


def test_network_step_same_under_both_backends():
    if cy is None:
        pytest.skip("compiled extension not built")
    from snnas.supernet import MacroConfig, Network
    from snnas.train import cross_entropy
    rng = np.random.default_rng(0)
    x = rng.standard_normal((4, 3, 8, 8, 1))
    y = np.array([0, 1, 2, 3])
    grads = {}
    before = kernels.BACKEND
    try:
        for b in ("compiled", "python"):
            kernels.use_backend(b)
            net = Network(MacroConfig(layers=2, init_channels=4, classes=4), seed=0, dtype=np.float64)
            logits, aux, _ = net(x)
            cross_entropy(logits, y, aux).backward()
            grads[b] = {n: p.grad.copy() for n, p in net.named_parameters()}
    finally:
        kernels.use_backend(before)
    for n, g in grads["compiled"].items():
        np.testing.assert_allclose(g, grads["python"][n], rtol=1e-7, atol=1e-10, err_msg=n)
