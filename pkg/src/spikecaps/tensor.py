"""Dense float64 tensor kernels with hand-written backward passes.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 in C order;
random draws come from ``numpy.random.Generator`` instances. Convolutions
accept a single sample ``[C, H, W]`` or a batch ``[N, C, H, W]``.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import DimensionError, ParameterError

Rng = np.random.Generator


def make_rng(seed) -> Rng:
    """Deterministic PCG64 generator; ``seed`` may be an int or int sequence."""
    return np.random.default_rng(seed)


def conv_output_size(size: int, k: int, stride: int) -> int:
    return (size - k) // stride + 1


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise DimensionError(f"expected [C,H,W] or [N,C,H,W] input, got ndim={x.ndim}")


def _check_conv(x: np.ndarray, kernels: np.ndarray, stride: int) -> None:
    if kernels.ndim != 4 or kernels.shape[2] != kernels.shape[3]:
        raise DimensionError(f"kernels must be [C_out,C_in,K,K], got shape {kernels.shape}")
    if stride < 1:
        raise ParameterError(f"stride must be >= 1, got {stride}")
    _, c, h, w = x.shape
    c_out, c_in, k, _ = kernels.shape
    if c != c_in:
        raise DimensionError(f"channel mismatch: input axis 1 has {c}, kernel axis 1 has {c_in}")
    if k > h or k > w:
        raise DimensionError(f"kernel size {k} exceeds input spatial axes (H={h}, W={w})")


def conv2d(x: np.ndarray, kernels: np.ndarray, stride: int = 1) -> np.ndarray:
    """Valid (unpadded) cross-correlation.

    ``x[C_in,H,W]`` (or batched) with ``kernels[C_out,C_in,K,K]`` gives
    ``[C_out, (H-K)//stride+1, (W-K)//stride+1]``.
    """
    return conv2d_with_rows(x, kernels, stride)[0]


def conv2d_with_rows(x: np.ndarray, kernels: np.ndarray, stride: int = 1):
    """:func:`conv2d` that also returns the unfolded patch rows for reuse in backward."""
    xb, single = _as_batch(np.asarray(x, dtype=np.float64))
    _check_conv(xb, kernels, stride)
    n, _, h, w = xb.shape
    c_out, _, k, _ = kernels.shape
    ho, wo = conv_output_size(h, k, stride), conv_output_size(w, k, stride)
    rows = _kernels.im2col(np.ascontiguousarray(xb), k, stride)
    out = rows.reshape(n * ho * wo, -1) @ kernels.reshape(c_out, -1).T
    out = np.ascontiguousarray(out.reshape(n, ho, wo, c_out).transpose(0, 3, 1, 2))
    return (out[0] if single else out), rows


def conv2d_backward(
    grad_out: np.ndarray,
    x: np.ndarray,
    kernels: np.ndarray,
    stride: int = 1,
    need_input_grad: bool = True,
    rows: np.ndarray | None = None,
) -> tuple[np.ndarray | None, np.ndarray]:
    """Gradients of ``sum(grad_out * conv2d(x, kernels))`` w.r.t. ``x`` and ``kernels``.

    ``rows`` may carry the patch rows returned by :func:`conv2d_with_rows`.
    """
    xb, single = _as_batch(np.asarray(x, dtype=np.float64))
    gb, _ = _as_batch(np.asarray(grad_out, dtype=np.float64))
    _check_conv(xb, kernels, stride)
    n, _, h, w = xb.shape
    c_out, _, k, _ = kernels.shape
    expected = (n, c_out, conv_output_size(h, k, stride), conv_output_size(w, k, stride))
    if gb.shape != expected:
        raise DimensionError(f"grad_out shape {gb.shape} does not match conv2d output shape {expected}")
    if rows is None:
        rows = _kernels.im2col(np.ascontiguousarray(xb), k, stride)
    rows = rows.reshape(-1, kernels[0].size)
    g = gb.transpose(0, 2, 3, 1).reshape(-1, c_out)
    grad_k = (g.T @ rows).reshape(kernels.shape)
    grad_x = None
    if need_input_grad:
        grad_rows = g @ kernels.reshape(c_out, -1)
        grad_x = _kernels.col2im(grad_rows.reshape(n, -1, kernels[0].size), xb.shape, k, stride)
        if single:
            grad_x = grad_x[0]
    return grad_x, grad_k


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got shapes {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"inner dimensions disagree: a axis 1 = {a.shape[1]}, b axis 0 = {b.shape[0]}")
    return a @ b


def matmul_backward(grad_out: np.ndarray, a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if grad_out.shape != (a.shape[0], b.shape[1]):
        raise DimensionError(f"grad_out shape {grad_out.shape} != output shape {(a.shape[0], b.shape[1])}")
    return grad_out @ b.T, a.T @ grad_out


def linear(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """Fully connected layer ``x[N, F_in] @ weight[F_in, F_out] + bias``."""
    out = matmul(x, weight)
    if bias is not None:
        out = out + bias
    return out


def linear_backward(grad_out: np.ndarray, x: np.ndarray, weight: np.ndarray):
    """Returns ``(grad_x, grad_weight, grad_bias)``."""
    grad_x, grad_w = matmul_backward(grad_out, x, weight)
    return grad_x, grad_w, grad_out.sum(axis=0)


def uniform_bound(m: int, n: int) -> float:
    if m <= 0 or n <= 0:
        raise ParameterError(f"capsule lengths must be positive, got m={m}, n={n}")
    return math.sqrt(3.0 / (m * n))


def uniform_init(shape: Sequence[int], m: int, n: int, rng: Rng) -> np.ndarray:
    """I.i.d. draws from U[-sqrt(3/(m n)), +sqrt(3/(m n))].

    ``m`` and ``n`` are the input and output capsule lengths.
    """
    bound = uniform_bound(m, n)
    return rng.uniform(-bound, bound, size=tuple(shape))


def fan_in_init(shape: Sequence[int], fan_in: int, rng: Rng) -> np.ndarray:
    # torch's default Linear/Conv init: kaiming_uniform(a=sqrt(5)) == U(+-1/sqrt(fan_in))
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=tuple(shape))
