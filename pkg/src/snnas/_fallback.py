"""Pure-numpy versions of the compiled kernels in ``_kernels.pyx``.

Same signatures, same results (up to floating-point summation order).
"""
import numpy as np


def _span(start, count, step):
    return slice(start, start + step * (count - 1) + 1, step)


def _pad_hw(x, ph, pw, value=0.0):
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw), (0, 0)), constant_values=value)


def dwconv_forward(x, w, stride, ph, pw, dilation, oh_n, ow_n):
    xp = _pad_hw(x, ph, pw)
    n, c, _, _, t = x.shape
    out = np.zeros((n, c, oh_n, ow_n, t), dtype=x.dtype)
    for i in range(w.shape[1]):
        for j in range(w.shape[2]):
            win = xp[:, :, _span(i * dilation, oh_n, stride), _span(j * dilation, ow_n, stride), :]
            out += win * w[:, i, j][None, :, None, None, None]
    return out


def dwconv_backward(g, x, w, stride, ph, pw, dilation):
    xp = _pad_hw(x, ph, pw)
    gxp = np.zeros_like(xp)
    oh_n, ow_n = g.shape[2], g.shape[3]
    gw = np.zeros(w.shape, dtype=np.float64)
    for i in range(w.shape[1]):
        for j in range(w.shape[2]):
            sh = _span(i * dilation, oh_n, stride)
            sw = _span(j * dilation, ow_n, stride)
            gxp[:, :, sh, sw, :] += g * w[:, i, j][None, :, None, None, None]
            gw[:, i, j] = np.einsum("nchwt,nchwt->c", g, xp[:, :, sh, sw, :], dtype=np.float64)
    H, W = x.shape[2], x.shape[3]
    gx = np.ascontiguousarray(gxp[:, :, ph:ph + H, pw:pw + W, :])
    return gx, gw.astype(x.dtype)


def maxpool_forward(x, window, stride, pad, oh_n, ow_n):
    xp = _pad_hw(x, pad, pad, value=-np.inf)
    W = x.shape[3]
    best = None
    idx = None
    for i in range(window):
        for j in range(window):
            win = xp[:, :, _span(i, oh_n, stride), _span(j, ow_n, stride), :]
            # flat index into the unpadded input for this window offset
            rows = np.arange(oh_n) * stride - pad + i
            cols = np.arange(ow_n) * stride - pad + j
            flat = (rows[:, None] * W + cols[None, :])[None, None, :, :, None]
            if best is None:
                best = win.copy()
                idx = np.broadcast_to(flat, win.shape).astype(np.int64)
            else:
                better = win > best
                best = np.where(better, win, best)
                idx = np.where(better, flat, idx)
    return np.ascontiguousarray(best), np.ascontiguousarray(idx)


def maxpool_backward(g, idx, H, W):
    n, c, _, _, t = g.shape
    gx = np.zeros((n, c, H * W, t), dtype=g.dtype)
    base = np.arange(n * c)[:, None, None, None] * (H * W)
    tt = np.arange(t)[None, None, None, :]
    flat_rows = (base + idx.reshape(n * c, g.shape[2], g.shape[3], t)).ravel()
    flat_t = np.broadcast_to(tt, (n * c, g.shape[2], g.shape[3], t)).ravel()
    view = gx.reshape(n * c * H * W, t)
    np.add.at(view, (flat_rows, flat_t), g.reshape(-1))
    return gx.reshape(n, c, H, W, t)


def avgpool_forward(x, window, stride, pad, oh_n, ow_n):
    xp = _pad_hw(x, pad, pad)
    n, c, _, _, t = x.shape
    out = np.zeros((n, c, oh_n, ow_n, t), dtype=x.dtype)
    for i in range(window):
        for j in range(window):
            out += xp[:, :, _span(i, oh_n, stride), _span(j, ow_n, stride), :]
    out *= x.dtype.type(1.0 / (window * window))
    return out


def avgpool_backward(g, H, W, window, stride, pad):
    n, c, oh_n, ow_n, t = g.shape
    gxp = np.zeros((n, c, H + 2 * pad, W + 2 * pad, t), dtype=g.dtype)
    gs = g * g.dtype.type(1.0 / (window * window))
    for i in range(window):
        for j in range(window):
            gxp[:, :, _span(i, oh_n, stride), _span(j, ow_n, stride), :] += gs
    return np.ascontiguousarray(gxp[:, :, pad:pad + H, pad:pad + W, :])


def lif_forward(x, tau, v_th, width, relaxed):
    """Scan rows of shape (M, T) through the discrete LIF recurrence."""
    m, t_n = x.shape
    u = np.empty_like(x)
    o = np.empty_like(x)
    up = np.zeros(m, dtype=np.float64)
    op = np.zeros(m, dtype=np.float64)
    for t in range(t_n):
        uc = tau * up * (1.0 - op) + x[:, t]
        v = uc - v_th
        if relaxed:
            op = np.clip(v / width + 0.5, 0.0, 1.0)
        else:
            op = (v > 0.0).astype(np.float64)
        u[:, t] = uc
        o[:, t] = op
        up = uc
    return u, o


def lif_backward(go, u, o, tau, v_th, width):
    m, t_n = go.shape
    gx = np.empty_like(go)
    gu_next = np.zeros(m, dtype=np.float64)
    half = width / 2.0
    for t in range(t_n - 1, -1, -1):
        g_o = go[:, t].astype(np.float64)
        ut = u[:, t].astype(np.float64)
        if t + 1 < t_n:
            g_o = g_o - gu_next * tau * ut
        v = ut - v_th
        sg = np.where((v > -half) & (v < half), 1.0 / width, 0.0)
        g_u = g_o * sg
        if t + 1 < t_n:
            g_u = g_u + gu_next * tau * (1.0 - o[:, t])
        gx[:, t] = g_u
        gu_next = g_u
    return gx
