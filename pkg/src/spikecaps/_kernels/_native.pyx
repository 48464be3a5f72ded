# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""C implementations of the hot kernels (see ``_fallback`` for semantics)."""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def im2col(double[:, :, :, ::1] x, Py_ssize_t k, Py_ssize_t stride):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = (h - k) // stride + 1
    cdef Py_ssize_t wo = (w - k) // stride + 1
    cdef Py_ssize_t ckk = c * k * k
    out_arr = np.empty((n, ho * wo, ckk), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t b, oy, ox, ch, i, j
    cdef double* dst
    cdef const double* src
    with nogil:
        for b in range(n):
            for oy in range(ho):
                for ox in range(wo):
                    dst = &out[b, oy * wo + ox, 0]
                    for ch in range(c):
                        for i in range(k):
                            src = &x[b, ch, oy * stride + i, ox * stride]
                            for j in range(k):
                                dst[j] = src[j]
                            dst += k
    return out_arr


def col2im(rows_in, tuple shape, Py_ssize_t k, Py_ssize_t stride):
    cdef double[:, :, ::1] rows = np.ascontiguousarray(rows_in, dtype=np.float64)
    cdef Py_ssize_t n = shape[0], c = shape[1], h = shape[2], w = shape[3]
    cdef Py_ssize_t ho = (h - k) // stride + 1
    cdef Py_ssize_t wo = (w - k) // stride + 1
    out_arr = np.zeros((n, c, h, w), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, oy, ox, ch, i, j
    cdef double* dst
    cdef const double* src
    # Patches are visited in descending (oy, ox) so that every output element
    # accumulates its contributions in ascending (i, j) kernel-offset order,
    # the same order as the numpy fallback.
    with nogil:
        for b in range(n):
            for oy in range(ho - 1, -1, -1):
                for ox in range(wo - 1, -1, -1):
                    src = &rows[b, oy * wo + ox, 0]
                    for ch in range(c):
                        for i in range(k):
                            dst = &out[b, ch, oy * stride + i, ox * stride]
                            for j in range(k):
                                dst[j] += src[j]
                            src += k
    return out_arr


def lif_forward(currents_in, v0_in, double lam, double v_th):
    cdef double[:, ::1] cur = np.ascontiguousarray(currents_in, dtype=np.float64)
    cdef Py_ssize_t t_steps = cur.shape[0], m = cur.shape[1]
    v_pre_arr = np.empty((t_steps, m), dtype=np.float64)
    spikes_arr = np.empty((t_steps, m), dtype=np.float64)
    v_arr = np.array(v0_in, dtype=np.float64, copy=True).reshape(m)
    cdef double[:, ::1] v_pre = v_pre_arr
    cdef double[:, ::1] spikes = spikes_arr
    cdef double[::1] v = v_arr
    cdef Py_ssize_t t, e
    cdef double vp, s
    with nogil:
        for t in range(t_steps):
            for e in range(m):
                vp = lam * v[e] + cur[t, e]
                s = 1.0 if vp >= v_th else 0.0
                v[e] = vp - v_th * s
                v_pre[t, e] = vp
                spikes[t, e] = s
    return v_pre_arr, spikes_arr, v_arr


def lif_backward(v_pre_in, grad_spikes_in, grad_v_pre_in, grad_v_final_in, double lam, double v_th):
    cdef double[:, ::1] v_pre = np.ascontiguousarray(v_pre_in, dtype=np.float64)
    cdef double[:, ::1] gs = np.ascontiguousarray(grad_spikes_in, dtype=np.float64)
    cdef double[:, ::1] gvp = np.ascontiguousarray(grad_v_pre_in, dtype=np.float64)
    cdef Py_ssize_t t_steps = v_pre.shape[0], m = v_pre.shape[1]
    g_v_arr = np.array(grad_v_final_in, dtype=np.float64, copy=True).reshape(m)
    grad_arr = np.empty((t_steps, m), dtype=np.float64)
    cdef double[::1] g_v = g_v_arr
    cdef double[:, ::1] grad_in = grad_arr
    cdef Py_ssize_t t, e
    cdef double d, sg, g
    with nogil:
        for t in range(t_steps - 1, -1, -1):
            for e in range(m):
                d = v_pre[t, e] - v_th
                sg = 1.0 if (d >= -0.5 and d <= 0.5) else 0.0
                g = g_v[e] * (1.0 - v_th * sg) + gs[t, e] * sg + gvp[t, e]
                grad_in[t, e] = g
                g_v[e] = lam * g
    return grad_arr
