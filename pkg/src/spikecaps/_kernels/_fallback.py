"""Pure numpy implementations of the hot kernels.

Every function here has a twin in ``_native.pyx`` with an identical
signature and identical floating point evaluation order, so the two
backends agree bit for bit.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    """Unfold ``x[N, C, H, W]`` into patch rows ``[N, Ho*Wo, C*k*k]``."""
    n, c, h, w = x.shape
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    # (n, c, ho, wo, k, k) -> (n, ho, wo, c, k, k)
    rows = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5))
    return rows.reshape(n, ho * wo, c * k * k)


def col2im(rows: np.ndarray, shape: tuple, k: int, stride: int) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add patch rows back to ``shape``."""
    n, c, h, w = shape
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    patches = rows.reshape(n, ho, wo, c, k, k).transpose(0, 3, 4, 5, 1, 2)
    out = np.zeros(shape, dtype=np.float64)
    for i in range(k):
        for j in range(k):
            out[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += patches[:, :, i, j]
    return out


def lif_forward(currents: np.ndarray, v0: np.ndarray, lam: float, v_th: float):
    """Run the soft-reset LIF recurrence over ``currents[T, M]``.

    Returns ``(v_pre[T, M], spikes[T, M], v_final[M])``.
    """
    t_steps = currents.shape[0]
    v_pre = np.empty_like(currents)
    spikes = np.empty_like(currents)
    v = v0.copy()
    for t in range(t_steps):
        vp = lam * v + currents[t]
        s = (vp >= v_th).astype(np.float64)
        v = vp - v_th * s
        v_pre[t] = vp
        spikes[t] = s
    return v_pre, spikes, v


def lif_backward(
    v_pre: np.ndarray,
    grad_spikes: np.ndarray,
    grad_v_pre: np.ndarray,
    grad_v_final: np.ndarray,
    lam: float,
    v_th: float,
) -> np.ndarray:
    """Reverse-mode pass through the LIF recurrence.

    ``grad_spikes`` and ``grad_v_pre`` are upstream gradients w.r.t. the
    per-step spikes and pre-reset potentials; returns dLoss/dI[T, M].
    """
    t_steps = v_pre.shape[0]
    grad_in = np.empty_like(v_pre)
    g_v = grad_v_final.copy()
    for t in range(t_steps - 1, -1, -1):
        d = v_pre[t] - v_th
        sg = ((d >= -0.5) & (d <= 0.5)).astype(np.float64)
        g = g_v * (1.0 - v_th * sg) + grad_spikes[t] * sg + grad_v_pre[t]
        grad_in[t] = g
        g_v = lam * g
    return grad_in
