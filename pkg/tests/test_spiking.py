import numpy as np
import pytest

from snnas import functional as F
from snnas.autograd import ShapeError, Tensor
from snnas.gradcheck import finite_diff_check
from snnas.spiking import LifConfig, lif_sequence, lif_step, spike, spike_surrogate_grad


def seq(xs, **kw):
    return lif_sequence(Tensor(np.asarray(xs, dtype=np.float64), requires_grad=True), return_state=True, **kw)


def test_single_steps():
    u, o = lif_step(np.zeros(1), np.zeros(1), np.array([0.6]))
    assert u[0] == 0.6 and o[0] == 1.0
    u, o = lif_step(u, o, np.array([0.3]))
    assert u[0] == 0.3 and o[0] == 0.0


def test_quiescent_neuron():
    u, o = np.zeros(4), np.zeros(4)
    for _ in range(20):
        u, o = lif_step(u, o, np.zeros(4))
        assert not u.any() and not o.any()


def test_step_shape_mismatch():
    with pytest.raises(ShapeError):
        lif_step(np.zeros(2), np.zeros(2), np.zeros(3))


def test_spike_is_strict():
    assert spike(np.array([0.0]))[0] == 0.0
    assert spike(np.array([1e-12]))[0] == 1.0


def test_surrogate_window():
    assert spike_surrogate_grad(0.0) == 1.0
    assert spike_surrogate_grad(0.6) == 0.0
    assert spike_surrogate_grad(-0.6) == 0.0
    v = np.linspace(-2, 2, 400001)
    area = np.trapezoid(spike_surrogate_grad(v), v) if hasattr(np, "trapezoid") else np.trapz(spike_surrogate_grad(v), v)
    assert abs(area - 1.0) < 1e-4
    wide = LifConfig(surrogate_width=2.0)
    assert spike_surrogate_grad(0.9, wide) == 0.5


def _hand_trace(xs, tau=0.2, v_th=0.5):
    u_prev = o_prev = 0.0
    us, os = [], []
    for x in xs:
        u = tau * u_prev * (1 - o_prev) + x
        o = 1.0 if u - v_th > 0 else 0.0
        us.append(u)
        os.append(o)
        u_prev, o_prev = u, o
    return us, os


def test_three_step_trace_after_reset():
    # spike at step 1, then two sub-threshold inputs of 0.3
    out, st = seq([[0.6, 0.3, 0.3]])
    assert st.u[0].tolist() == [0.6, 0.3, 0.36]
    assert out.data[0].tolist() == [1.0, 0.0, 0.0]
    us, os = _hand_trace([0.6, 0.3, 0.3])
    assert st.u[0].tolist() == us and out.data[0].tolist() == os


def test_constant_drive_refires_every_step():
    out, st = seq([[0.6, 0.6, 0.6]])
    us, os = _hand_trace([0.6, 0.6, 0.6])
    assert st.u[0].tolist() == us == [0.6, 0.6, 0.6]
    assert out.data[0].tolist() == os == [1.0, 1.0, 1.0]


def test_t1_equals_single_step(rng):
    x = rng.uniform(-1, 1.5, (50, 1))
    out, st = seq(x)
    u, o = lif_step(np.zeros_like(x), np.zeros_like(x), x)
    np.testing.assert_array_equal(st.u, u)
    np.testing.assert_array_equal(out.data, o)


def test_high_threshold_silences(rng):
    x = rng.uniform(0, 1, (3, 2, 4, 4, 5))
    cfg = LifConfig(v_th=2 * x.max() + 1)
    out = lif_sequence(Tensor(x), cfg)
    assert not out.data.any()


def test_outputs_binary_and_reset_invariant(rng):
    x = rng.uniform(-0.5, 1.5, (500, 8))
    out, st = seq(x)
    assert set(np.unique(out.data)) <= {0.0, 1.0}
    u, o = st.u, st.o
    for t in range(1, 8):
        fired = o[:, t - 1] == 1
        # after a spike the new potential is exactly the input
        np.testing.assert_array_equal(u[fired, t], x[fired, t])
        np.testing.assert_array_equal(u[~fired, t], 0.2 * u[~fired, t - 1] + x[~fired, t])


def test_matches_hand_trace_random(rng):
    x = rng.uniform(-0.5, 1.5, (20, 6))
    out, st = seq(x)
    for row in range(20):
        us, os = _hand_trace(x[row])
        assert st.u[row].tolist() == us
        assert out.data[row].tolist() == os


def test_no_gradient_outside_window():
    # potentials far from threshold at every step
    x = Tensor(np.array([[3.0, 3.0, 3.0], [-4.0, -4.0, -4.0]]), requires_grad=True)
    out = lif_sequence(x)
    out.backward(np.ones_like(out.data))
    assert not x.grad.any()


def test_relaxed_forward_gradcheck(rng):
    for i in range(10):
        x = Tensor(rng.uniform(-0.3, 1.2, (2, 3, 2, 2, 4)), requires_grad=True)
        err = finite_diff_check(lambda: lif_sequence(x, relaxed=True), [x], eps=1e-4, rng=rng, kink_guard=True)
        assert err < 1e-3


def test_relaxed_is_clipped_ramp():
    x = np.array([[0.0, 0.2, 0.5, 0.8, 1.5]]).T  # T = 1
    out = lif_sequence(Tensor(x), relaxed=True).data[:, 0]
    np.testing.assert_allclose(out, [0.0, 0.2, 0.5, 0.8, 1.0])


def test_works_in_float32(rng):
    x = rng.uniform(-0.5, 1.5, (4, 2, 3, 3, 2)).astype(np.float32)
    out = lif_sequence(Tensor(x))
    assert out.dtype == np.float32
    ref = lif_sequence(Tensor(x.astype(np.float64)))
    np.testing.assert_array_equal(out.data, ref.data)


def test_backward_through_network_of_lif(rng):
    x = Tensor(rng.standard_normal((2, 2, 3, 3, 3)), requires_grad=True)
    k = Tensor(rng.standard_normal((2, 2, 3, 3)) * 0.5, requires_grad=True)
    F.sum_all(lif_sequence(F.conv2d(x, k, padding=1))).backward()
    assert x.grad.shape == x.shape and np.isfinite(x.grad).all()


def test_config_validation():
    with pytest.raises(ValueError):
        LifConfig(tau=1.0)
    with pytest.raises(ValueError):
        LifConfig(v_th=0.0)
