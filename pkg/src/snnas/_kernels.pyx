# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled loops for the per-time-slice feature-map kernels.

All arrays are C-contiguous and laid out (N, C, H, W, T). The numpy module
``snnas._fallback`` implements the same functions with identical semantics.
"""
import numpy as np
cimport numpy as cnp

ctypedef fused real:
    float
    double


cdef inline void _ow_range(Py_ssize_t j, int stride, int pw, int dilation, Py_ssize_t W,
                           Py_ssize_t ow_n, Py_ssize_t* lo, Py_ssize_t* hi) noexcept nogil:
    # valid outputs satisfy 0 <= ow*stride - pw + j*dilation < W
    cdef Py_ssize_t off = pw - j * dilation
    cdef Py_ssize_t a = 0
    if off > 0:
        a = (off + stride - 1) // stride
    cdef Py_ssize_t b = W - 1 + off
    if b < 0:
        lo[0] = 0
        hi[0] = 0
        return
    b = b // stride + 1
    if b > ow_n:
        b = ow_n
    lo[0] = a
    hi[0] = b if b > a else a


def dwconv_forward(real[:, :, :, :, ::1] x, real[:, :, ::1] w,
                   int stride, int ph, int pw, int dilation, int oh_n, int ow_n):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3], T = x.shape[4]
    cdef Py_ssize_t KH = w.shape[1], KW = w.shape[2]
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((N, C, oh_n, ow_n, T), dtype=dtype)
    cdef real[:, :, :, :, ::1] out = out_arr
    cdef Py_ssize_t n, c, oh, ow, i, j, t, ih, lo, hi, k, span, xoff
    cdef real wv
    cdef real* op
    cdef real* xp
    cdef Py_ssize_t[32] los
    cdef Py_ssize_t[32] his
    if KW > 32:
        raise ValueError("kernel width above 32 not supported")
    for j in range(KW):
        _ow_range(j, stride, pw, dilation, W, ow_n, &los[j], &his[j])
    with nogil:
        for n in range(N):
            for c in range(C):
                for oh in range(oh_n):
                    op = &out[n, c, oh, 0, 0]
                    for i in range(KH):
                        ih = oh * stride - ph + i * dilation
                        if ih < 0 or ih >= H:
                            continue
                        xp = &x[n, c, ih, 0, 0]
                        for j in range(KW):
                            lo = los[j]
                            hi = his[j]
                            if hi <= lo:
                                continue
                            wv = w[c, i, j]
                            xoff = (lo * stride - pw + j * dilation) * T
                            if stride == 1:
                                span = (hi - lo) * T
                                for k in range(span):
                                    op[lo * T + k] += wv * xp[xoff + k]
                            elif T == 2:
                                for ow in range(lo, hi):
                                    op[2 * ow] += wv * xp[xoff]
                                    op[2 * ow + 1] += wv * xp[xoff + 1]
                                    xoff += 2 * stride
                            else:
                                for ow in range(lo, hi):
                                    for t in range(T):
                                        op[ow * T + t] += wv * xp[xoff + t]
                                    xoff += stride * T
    return out_arr


def dwconv_backward(real[:, :, :, :, ::1] g, real[:, :, :, :, ::1] x, real[:, :, ::1] w,
                    int stride, int ph, int pw, int dilation):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3], T = x.shape[4]
    cdef Py_ssize_t KH = w.shape[1], KW = w.shape[2]
    cdef Py_ssize_t oh_n = g.shape[2], ow_n = g.shape[3]
    dtype = np.float32 if real is float else np.float64
    gx_arr = np.zeros((N, C, H, W, T), dtype=dtype)
    gw_arr = np.zeros((C, KH, KW), dtype=np.float64)
    cdef real[:, :, :, :, ::1] gx = gx_arr
    cdef double[:, :, ::1] gw = gw_arr
    cdef Py_ssize_t n, c, oh, ow, i, j, t, ih, lo, hi, k, span, xoff
    cdef real wv
    cdef double acc
    cdef real* gp
    cdef real* xp
    cdef real* gxp
    cdef Py_ssize_t[32] los
    cdef Py_ssize_t[32] his
    if KW > 32:
        raise ValueError("kernel width above 32 not supported")
    for j in range(KW):
        _ow_range(j, stride, pw, dilation, W, ow_n, &los[j], &his[j])
    with nogil:
        for n in range(N):
            for c in range(C):
                for oh in range(oh_n):
                    gp = &g[n, c, oh, 0, 0]
                    for i in range(KH):
                        ih = oh * stride - ph + i * dilation
                        if ih < 0 or ih >= H:
                            continue
                        xp = &x[n, c, ih, 0, 0]
                        gxp = &gx[n, c, ih, 0, 0]
                        for j in range(KW):
                            lo = los[j]
                            hi = his[j]
                            if hi <= lo:
                                continue
                            wv = w[c, i, j]
                            xoff = (lo * stride - pw + j * dilation) * T
                            acc = 0.0
                            if stride == 1:
                                span = (hi - lo) * T
                                for k in range(span):
                                    gxp[xoff + k] += wv * gp[lo * T + k]
                                for k in range(span):
                                    acc += gp[lo * T + k] * xp[xoff + k]
                            elif T == 2:
                                for ow in range(lo, hi):
                                    gxp[xoff] += wv * gp[2 * ow]
                                    gxp[xoff + 1] += wv * gp[2 * ow + 1]
                                    acc += gp[2 * ow] * xp[xoff] + gp[2 * ow + 1] * xp[xoff + 1]
                                    xoff += 2 * stride
                            else:
                                for ow in range(lo, hi):
                                    for t in range(T):
                                        gxp[xoff + t] += wv * gp[ow * T + t]
                                        acc += gp[ow * T + t] * xp[xoff + t]
                                    xoff += stride * T
                            gw[c, i, j] += acc
    return gx_arr, gw_arr.astype(dtype)


def maxpool_forward(real[:, :, :, :, ::1] x, int window, int stride, int pad, int oh_n, int ow_n):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3], T = x.shape[4]
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((N, C, oh_n, ow_n, T), dtype=dtype)
    idx_arr = np.empty((N, C, oh_n, ow_n, T), dtype=np.int64)
    cdef real[:, :, :, :, ::1] out = out_arr
    cdef cnp.int64_t[:, :, :, :, ::1] idx = idx_arr
    cdef Py_ssize_t n, c, oh, ow, i, j, t, ih, iw, best_i
    cdef real best, v
    cdef bint found
    for n in range(N):
        for c in range(C):
            for oh in range(oh_n):
                for ow in range(ow_n):
                    for t in range(T):
                        found = False
                        best = 0
                        best_i = -1
                        for i in range(window):
                            ih = oh * stride - pad + i
                            if ih < 0 or ih >= H:
                                continue
                            for j in range(window):
                                iw = ow * stride - pad + j
                                if iw < 0 or iw >= W:
                                    continue
                                v = x[n, c, ih, iw, t]
                                if not found or v > best:
                                    best = v
                                    best_i = ih * W + iw
                                    found = True
                        out[n, c, oh, ow, t] = best
                        idx[n, c, oh, ow, t] = best_i
    return out_arr, idx_arr


def maxpool_backward(real[:, :, :, :, ::1] g, cnp.int64_t[:, :, :, :, ::1] idx, int H, int W):
    cdef Py_ssize_t N = g.shape[0], C = g.shape[1], oh_n = g.shape[2], ow_n = g.shape[3], T = g.shape[4]
    dtype = np.float32 if real is float else np.float64
    gx_arr = np.zeros((N, C, H, W, T), dtype=dtype)
    cdef real[:, :, :, :, ::1] gx = gx_arr
    cdef Py_ssize_t n, c, oh, ow, t, k
    for n in range(N):
        for c in range(C):
            for oh in range(oh_n):
                for ow in range(ow_n):
                    for t in range(T):
                        k = idx[n, c, oh, ow, t]
                        gx[n, c, k // W, k % W, t] += g[n, c, oh, ow, t]
    return gx_arr


cdef inline void _pool_cols(Py_ssize_t j, int stride, int pad, Py_ssize_t W, Py_ssize_t ow_n,
                            Py_ssize_t* lo, Py_ssize_t* hi) noexcept nogil:
    # output columns ow with 0 <= ow*stride - pad + j < W
    cdef Py_ssize_t a = 0, top = W - 1 + pad - j
    if pad - j > 0:
        a = (pad - j + stride - 1) // stride
    lo[0] = a
    hi[0] = 0 if top < 0 else min(ow_n, top // stride + 1)


def avgpool_forward(real[:, :, :, :, ::1] x, int window, int stride, int pad, int oh_n, int ow_n):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3], T = x.shape[4]
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((N, C, oh_n, ow_n, T), dtype=dtype)
    cdef real[:, :, :, :, ::1] out = out_arr
    cdef Py_ssize_t n, c, oh, ow, i, j, t, ih, lo, hi, k
    cdef real scale = 1.0 / (window * window)
    cdef real* op
    cdef real* xp
    if N == 0 or C == 0 or oh_n == 0 or ow_n == 0 or T == 0:
        return out_arr
    # per output element the window is summed in (i, j) order, as in the fallback
    for n in range(N):
        for c in range(C):
            for oh in range(oh_n):
                op = &out[n, c, oh, 0, 0]
                for i in range(window):
                    ih = oh * stride - pad + i
                    if ih < 0 or ih >= H:
                        continue
                    xp = &x[n, c, ih, 0, 0]
                    for j in range(window):
                        _pool_cols(j, stride, pad, W, ow_n, &lo, &hi)
                        if stride == 1:  # one contiguous run: lets the compiler vectorize
                            k = (j - pad) * T
                            for t in range(lo * T, hi * T):
                                op[t] += xp[k + t]
                        else:
                            for ow in range(lo, hi):
                                k = (ow * stride - pad + j) * T
                                for t in range(T):
                                    op[ow * T + t] += xp[k + t]
                for k in range(ow_n * T):
                    op[k] *= scale
    return out_arr


def avgpool_backward(real[:, :, :, :, ::1] g, int H, int W, int window, int stride, int pad):
    cdef Py_ssize_t N = g.shape[0], C = g.shape[1], oh_n = g.shape[2], ow_n = g.shape[3], T = g.shape[4]
    dtype = np.float32 if real is float else np.float64
    gx_arr = np.zeros((N, C, H, W, T), dtype=dtype)
    cdef real[:, :, :, :, ::1] gx = gx_arr
    cdef Py_ssize_t n, c, oh, ow, i, j, t, ih, lo, hi, k
    cdef real scale = 1.0 / (window * window)
    cdef real* gp
    cdef real* gxp
    if N == 0 or C == 0 or oh_n == 0 or ow_n == 0 or T == 0 or H == 0 or W == 0:
        return gx_arr
    # window offsets outermost: each input element receives its terms in (i, j) order
    for n in range(N):
        for c in range(C):
            for i in range(window):
                for j in range(window):
                    _pool_cols(j, stride, pad, W, ow_n, &lo, &hi)
                    for oh in range(oh_n):
                        ih = oh * stride - pad + i
                        if ih < 0 or ih >= H:
                            continue
                        gp = &g[n, c, oh, 0, 0]
                        gxp = &gx[n, c, ih, 0, 0]
                        if stride == 1:
                            k = (j - pad) * T
                            for t in range(lo * T, hi * T):
                                gxp[k + t] += gp[t] * scale
                        else:
                            for ow in range(lo, hi):
                                k = (ow * stride - pad + j) * T
                                for t in range(T):
                                    gxp[k + t] += gp[ow * T + t] * scale
    return gx_arr


def lif_forward(real[:, ::1] x, double tau, double v_th, double width, bint relaxed):
    """Scan rows of shape (M, T) through the discrete LIF recurrence."""
    cdef Py_ssize_t M = x.shape[0], T = x.shape[1]
    dtype = np.float32 if real is float else np.float64
    u_arr = np.empty((M, T), dtype=dtype)
    o_arr = np.empty((M, T), dtype=dtype)
    cdef real[:, ::1] u = u_arr
    cdef real[:, ::1] o = o_arr
    cdef Py_ssize_t m, t
    cdef double up, op, uc, v
    for m in range(M):
        up = 0.0
        op = 0.0
        for t in range(T):
            uc = tau * up * (1.0 - op) + x[m, t]
            v = uc - v_th
            if relaxed:
                v = v / width + 0.5
                if v < 0.0:
                    v = 0.0
                elif v > 1.0:
                    v = 1.0
                op = v
            else:
                op = 1.0 if v > 0.0 else 0.0
            u[m, t] = uc
            o[m, t] = op
            up = uc
    return u_arr, o_arr


def lif_backward(real[:, ::1] go, real[:, ::1] u, real[:, ::1] o, double tau, double v_th, double width):
    cdef Py_ssize_t M = go.shape[0], T = go.shape[1]
    dtype = np.float32 if real is float else np.float64
    gx_arr = np.empty((M, T), dtype=dtype)
    cdef real[:, ::1] gx = gx_arr
    cdef Py_ssize_t m, t
    cdef double gu_next, g_o, g_u, sg, half = width / 2.0, inv = 1.0 / width
    for m in range(M):
        gu_next = 0.0
        for t in range(T - 1, -1, -1):
            g_o = go[m, t]
            if t + 1 < T:
                g_o -= gu_next * tau * u[m, t]
            sg = inv if -half < u[m, t] - v_th < half else 0.0
            g_u = g_o * sg
            if t + 1 < T:
                g_u += gu_next * tau * (1.0 - o[m, t])
            gx[m, t] = g_u
            gu_next = g_u
    return gx_arr
