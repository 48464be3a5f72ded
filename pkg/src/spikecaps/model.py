"""Spiking capsule network: spiking conv -> PrimaryCaps -> DigitCaps -> head.

Per timestep ``t`` of the window:

1. the normalised image is injected unchanged as conv1 input current,
2. conv1 current drives LIF neurons,
3. the PrimaryCaps convolution of conv1 spikes drives LIF neurons whose
   spikes are regrouped into ``n_low`` capsules of ``primary_dim`` units,
4. presynaptic traces are updated; DigitCaps receives
   ``s_j = sum_i c_ij W_ij u_i + b_j`` and spikes through LIF neurons,
5. the coupling ``c`` is updated by the routing rule.

There is no squash and no softmax anywhere: ``s_j`` enters the DigitCaps
membrane linearly. The ``norm`` head returns the L2 norm over capsule
units of the time-averaged pre-reset DigitCaps potential; the ``fc`` head
applies a linear layer to the DigitCaps spike rates.

Gradients are exact reverse-mode derivatives of that computation, with the
rectangular surrogate at every spike and ``c`` held constant.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as tc
from .errors import DimensionError, ParameterError, StateError
from .neuron import LifConfig, lif_backward_window, lif_run
from .routing import RoutingConfig, decay_traces, hebb_delta, initial_coupling, stdp_delta

HEADS = ("norm", "fc")

# PrimaryCaps patch rows are kept for the backward pass while they fit here
ROW_CACHE_BYTES = 512 * 2**20


@dataclass(frozen=True)
class ArchConfig:
    input_shape: tuple = (1, 28, 28)
    conv1_channels: int = 256
    conv1_kernel: int = 9
    conv1_stride: int = 1
    primary_caps: int = 32
    primary_dim: int = 8
    primary_kernel: int = 9
    primary_stride: int = 2
    num_classes: int = 10
    digit_dim: int = 16
    head: str = "fc"
    time_window: int = 5

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        if len(self.input_shape) != 3:
            raise DimensionError(f"input_shape must be (channels, height, width), got {self.input_shape}")
        if self.head not in HEADS:
            raise ParameterError(f"head must be one of {HEADS}, got {self.head!r}")
        if self.time_window < 1:
            raise ParameterError(f"time_window must be >= 1, got {self.time_window}")
        _, h, w = self.input_shape
        for name, size, k in (("conv1", min(h, w), self.conv1_kernel),):
            if k > size:
                raise DimensionError(f"{name} kernel {k} exceeds input size {size}")
        c1 = self.conv1_shape
        if self.primary_kernel > min(c1[1], c1[2]):
            raise DimensionError(f"primary kernel {self.primary_kernel} exceeds conv1 output {c1[1:]}")

    @property
    def conv1_shape(self) -> tuple:
        _, h, w = self.input_shape
        k, s = self.conv1_kernel, self.conv1_stride
        return (self.conv1_channels, tc.conv_output_size(h, k, s), tc.conv_output_size(w, k, s))

    @property
    def primary_shape(self) -> tuple:
        _, h, w = self.conv1_shape
        k, s = self.primary_kernel, self.primary_stride
        return (self.primary_caps * self.primary_dim, tc.conv_output_size(h, k, s), tc.conv_output_size(w, k, s))

    @property
    def n_low(self) -> int:
        _, h, w = self.primary_shape
        return self.primary_caps * h * w

    def layer_shapes(self) -> dict:
        return {
            "input": self.input_shape,
            "conv1": self.conv1_shape,
            "primary": self.primary_shape,
            "primary_capsules": (self.n_low, self.primary_dim),
            "digit_capsules": (self.num_classes, self.digit_dim),
            "output": (self.num_classes,),
        }


@dataclass(frozen=True)
class ModelConfig:
    arch: ArchConfig = field(default_factory=ArchConfig)
    lif: LifConfig = field(default_factory=LifConfig)
    routing: RoutingConfig = field(default_factory=RoutingConfig)

    def to_dict(self) -> dict:
        arch = asdict(self.arch)
        arch["input_shape"] = list(arch["input_shape"])
        return {"arch": arch, "lif": asdict(self.lif), "routing": asdict(self.routing)}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            arch=ArchConfig(**d.get("arch", {})),
            lif=LifConfig(**d.get("lif", {})),
            routing=RoutingConfig(**d.get("routing", {})),
        )


def param_shapes(arch: ArchConfig) -> dict:
    c_in = arch.input_shape[0]
    c1 = arch.conv1_channels
    c2 = arch.primary_caps * arch.primary_dim
    j, e = arch.num_classes, arch.digit_dim
    shapes = {
        "conv1.weight": (c1, c_in, arch.conv1_kernel, arch.conv1_kernel),
        "conv1.bias": (c1,),
        "primary.weight": (c2, c1, arch.primary_kernel, arch.primary_kernel),
        "primary.bias": (c2,),
        "digit.weight": (arch.n_low, j, arch.primary_dim, e),
        "digit.bias": (j, e),
    }
    if arch.head == "fc":
        shapes["fc.weight"] = (j * e, j)
        shapes["fc.bias"] = (j,)
    return shapes


def init_params(cfg: ModelConfig, rng: tc.Rng) -> dict:
    """Draw a fresh parameter set.

    Conv and FC weights use torch's default fan-in uniform bound; DigitCaps
    weights and biases use the capsule-length uniform bound; conv and FC
    biases start at zero.
    """
    arch = cfg.arch
    shapes = param_shapes(arch)
    m, n = arch.primary_dim, arch.digit_dim
    params = {}
    for name, shape in shapes.items():
        if name in ("digit.weight", "digit.bias"):
            params[name] = tc.uniform_init(shape, m, n, rng)
        elif name.endswith(".weight"):
            fan_in = int(np.prod(shape[1:])) if name != "fc.weight" else shape[0]
            params[name] = tc.fan_in_init(shape, fan_in, rng)
        else:
            params[name] = np.zeros(shape)
    return params


def check_params(params: dict, cfg: ModelConfig) -> None:
    expected = param_shapes(cfg.arch)
    missing = sorted(set(expected) - set(params))
    if missing:
        raise DimensionError(f"parameter set lacks {missing}")
    for name, shape in expected.items():
        if tuple(params[name].shape) != shape:
            raise DimensionError(f"parameter {name} has shape {params[name].shape}, architecture needs {shape}")


def to_capsules(spikes: np.ndarray, caps: int, dim: int) -> np.ndarray:
    """``[..., caps*dim, H, W]`` -> ``[..., caps*H*W, dim]``.

    Channel ``k*dim + d`` is unit ``d`` of capsule type ``k``; capsule index
    runs over ``(k, row, col)`` in row-major order.
    """
    *lead, ch, h, w = spikes.shape
    s = spikes.reshape(*lead, caps, dim, h, w)
    s = np.moveaxis(s, -3, -1)
    return s.reshape(*lead, caps * h * w, dim)


def from_capsules(u: np.ndarray, caps: int, dim: int, h: int, w: int) -> np.ndarray:
    *lead, _, _ = u.shape
    s = u.reshape(*lead, caps, h, w, dim)
    s = np.moveaxis(s, -1, -3)
    return np.ascontiguousarray(s.reshape(*lead, caps * dim, h, w))


def _digit_weight_by_class(weight: np.ndarray) -> np.ndarray:
    n_low, j, d, e = weight.shape
    return np.ascontiguousarray(weight.transpose(1, 0, 2, 3).reshape(j, n_low * d, e))


def _coupled_inputs(u: np.ndarray, c: np.ndarray) -> np.ndarray:
    """``A[j, b, (i, d)] = c[b, i, j] * u[b, i, d]``."""
    b, n_low, d = u.shape
    j = c.shape[-1]
    a = c[:, :, :, None] * u[:, :, None, :]
    return np.ascontiguousarray(a.transpose(2, 0, 1, 3).reshape(j, b, n_low * d))


def digit_current(u: np.ndarray, c: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """``s[b, j, :] = sum_i c[b, i, j] * (u[b, i] @ W[i, j]) + bias[j]``.

    This is the complete DigitCaps drive: a linear map of the primary
    capsule spikes, fed straight into the LIF membrane.
    """
    wr = _digit_weight_by_class(weight)
    return np.matmul(_coupled_inputs(u, c), wr).transpose(1, 0, 2) + bias


@dataclass
class ForwardRecord:
    """Everything the backward pass needs; streams are indexed ``[t, batch, ...]``."""

    x: np.ndarray
    v1_pre: np.ndarray
    s1: np.ndarray
    v2_pre: np.ndarray
    s2: np.ndarray
    u: np.ndarray
    coupling: np.ndarray
    v3_pre: np.ndarray
    s3: np.ndarray
    output: np.ndarray
    final_coupling: np.ndarray
    head: str
    single: bool = False
    primary_rows: list | None = None

    @property
    def time_window(self) -> int:
        return self.s3.shape[0]


def forward(x: np.ndarray, params: dict, cfg: ModelConfig, keep_record: bool = True):
    """Simulate the network over its time window.

    ``x`` is a normalised image ``[C, H, W]`` or a batch ``[B, C, H, W]``.
    Returns ``(output, record)``; ``record`` is ``None`` when
    ``keep_record`` is false.
    """
    arch, lif, rt = cfg.arch, cfg.lif, cfg.routing
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 3
    xb = x[None] if single else x
    if xb.ndim != 4 or xb.shape[1:] != arch.input_shape:
        raise DimensionError(f"input shape {x.shape} does not match architecture input {arch.input_shape}")
    check_params(params, cfg)
    t_steps, batch = arch.time_window, xb.shape[0]

    i1 = tc.conv2d(xb, params["conv1.weight"], arch.conv1_stride) + params["conv1.bias"][:, None, None]
    v1_pre, s1, _ = lif_run(np.broadcast_to(i1, (t_steps, *i1.shape)), lif)

    c2, h2, w2 = arch.primary_shape
    i2 = np.empty((t_steps, batch, c2, h2, w2))
    k2 = arch.primary_kernel
    cache_rows = keep_record and t_steps * batch * h2 * w2 * arch.conv1_channels * k2 * k2 * 8 <= ROW_CACHE_BYTES
    primary_rows = [] if cache_rows else None
    for t in range(t_steps):
        i2[t], rows = tc.conv2d_with_rows(s1[t], params["primary.weight"], arch.primary_stride)
        if cache_rows:
            primary_rows.append(rows)
    i2 += params["primary.bias"][:, None, None]
    v2_pre, s2, _ = lif_run(i2, lif)
    u = to_capsules(s2, arch.primary_caps, arch.primary_dim)

    n_low, j, e = arch.n_low, arch.num_classes, arch.digit_dim
    wr = _digit_weight_by_class(params["digit.weight"])
    bias = params["digit.bias"]
    c = initial_coupling(n_low, j, (batch,))
    traces = np.zeros((batch, n_low, arch.primary_dim))
    v3 = np.zeros((batch, j, e))
    coupling = np.empty((t_steps, batch, n_low, j))
    v3_pre = np.empty((t_steps, batch, j, e))
    s3 = np.empty((t_steps, batch, j, e))
    decay = rt.trace_decay
    for t in range(t_steps):
        traces = decay_traces(traces, u[t], decay)
        i3 = np.matmul(_coupled_inputs(u[t], c), wr).transpose(1, 0, 2) + bias
        vp = lif.lam * v3 + i3
        sp = (vp >= lif.v_th).astype(np.float64)
        v3 = vp - lif.v_th * sp
        coupling[t], v3_pre[t], s3[t] = c, vp, sp
        if rt.mode == "stdp":
            c = c + stdp_delta(traces, sp, rt.eta, rt.chi_offset)
        else:
            c = c + hebb_delta(u[t], sp, rt.eta)

    if arch.head == "fc":
        rates = s3.mean(axis=0).reshape(batch, j * e)
        out = rates @ params["fc.weight"] + params["fc.bias"]
    else:
        out = np.sqrt(np.square(v3_pre.mean(axis=0)).sum(axis=-1))

    record = None
    if keep_record:
        record = ForwardRecord(
            x=xb, v1_pre=v1_pre, s1=s1, v2_pre=v2_pre, s2=s2, u=u, coupling=coupling,
            v3_pre=v3_pre, s3=s3, output=out, final_coupling=c, head=arch.head, single=single,
            primary_rows=primary_rows,
        )
    return (out[0] if single else out), record


def backward(record: ForwardRecord, grad_output: np.ndarray, params: dict, cfg: ModelConfig) -> dict:
    """Reverse-mode gradients of ``sum(grad_output * output)`` w.r.t. every parameter."""
    arch, lif = cfg.arch, cfg.lif
    if record.head != arch.head or record.time_window != arch.time_window:
        raise StateError("forward record was produced under a different architecture")
    if record.x.shape[1:] != arch.input_shape:
        raise StateError(f"record input {record.x.shape[1:]} != architecture input {arch.input_shape}")
    g_out = np.asarray(grad_output, dtype=np.float64)
    if record.single:
        g_out = g_out[None]
    batch = record.x.shape[0]
    if g_out.shape != (batch, arch.num_classes):
        raise StateError(f"grad_output shape {grad_output.shape} does not match record output")
    t_steps, j, e = arch.time_window, arch.num_classes, arch.digit_dim
    grads: dict = {}

    if arch.head == "fc":
        rates = record.s3.mean(axis=0).reshape(batch, j * e)
        g_rates, grads["fc.weight"], grads["fc.bias"] = tc.linear_backward(g_out, rates, params["fc.weight"])
        g_s3 = np.broadcast_to(g_rates.reshape(batch, j, e) / t_steps, record.s3.shape)
        g_v3 = None
    else:
        mean_v = record.v3_pre.mean(axis=0)
        norm = np.sqrt(np.square(mean_v).sum(axis=-1))
        scale = np.divide(g_out, norm, out=np.zeros_like(g_out), where=norm > 0)
        g_s3 = None
        g_v3 = np.broadcast_to(scale[..., None] * mean_v / t_steps, record.v3_pre.shape)
    g_i3 = lif_backward_window(record.v3_pre, g_s3, lif, grad_v_pre=g_v3)

    grads["digit.bias"] = g_i3.sum(axis=(0, 1))
    wr = _digit_weight_by_class(params["digit.weight"])
    n_low, d = arch.n_low, arch.primary_dim
    g_wr = np.zeros_like(wr)
    g_u = np.empty_like(record.u)
    for t in range(t_steps):
        c = record.coupling[t]
        a = _coupled_inputs(record.u[t], c)
        g_j = np.ascontiguousarray(g_i3[t].transpose(1, 0, 2))
        g_wr += np.matmul(a.transpose(0, 2, 1), g_j)
        p = np.matmul(g_j, wr.transpose(0, 2, 1)).reshape(j, batch, n_low, d)
        g_u[t] = (p * c.transpose(2, 0, 1)[..., None]).sum(axis=0)
    grads["digit.weight"] = np.ascontiguousarray(g_wr.reshape(j, n_low, d, e).transpose(1, 0, 2, 3))

    _, h2, w2 = arch.primary_shape
    g_s2 = from_capsules(g_u, arch.primary_caps, d, h2, w2)
    g_i2 = lif_backward_window(record.v2_pre, g_s2, lif)
    grads["primary.bias"] = g_i2.sum(axis=(0, 1, 3, 4))
    g_k2 = np.zeros_like(params["primary.weight"])
    g_s1 = np.empty_like(record.s1)
    for t in range(t_steps):
        rows = record.primary_rows[t] if record.primary_rows is not None else None
        g_s1[t], gk = tc.conv2d_backward(
            g_i2[t], record.s1[t], params["primary.weight"], arch.primary_stride, rows=rows
        )
        g_k2 += gk
    grads["primary.weight"] = g_k2

    # conv1 current is identical at every step, so its gradient is the time sum
    g_i1 = lif_backward_window(record.v1_pre, g_s1, lif).sum(axis=0)
    grads["conv1.bias"] = g_i1.sum(axis=(0, 2, 3))
    _, grads["conv1.weight"] = tc.conv2d_backward(
        g_i1, record.x, params["conv1.weight"], arch.conv1_stride, need_input_grad=False
    )
    return grads


def mse_loss(output: np.ndarray, label) -> tuple[float, np.ndarray]:
    """Mean squared error against the one-hot label.

    For a batch ``[B, K]`` the loss is averaged over classes and samples,
    and the gradient is scaled accordingly.
    """
    out = np.asarray(output, dtype=np.float64)
    single = out.ndim == 1
    ob = out[None] if single else out
    labels = np.atleast_1d(np.asarray(label))
    k = ob.shape[1]
    if labels.shape[0] != ob.shape[0]:
        raise DimensionError(f"{labels.shape[0]} labels for {ob.shape[0]} outputs")
    if np.any(labels < 0) or np.any(labels >= k) or not np.issubdtype(labels.dtype, np.integer):
        raise ParameterError(f"labels must be integers in [0, {k}), got {label!r}")
    diff = ob - np.eye(k)[labels]
    loss = float(np.mean(np.square(diff)))
    grad = 2.0 * diff / diff.size
    return loss, (grad[0] if single else grad)


def predict(x: np.ndarray, params: dict, cfg: ModelConfig, batch_size: int = 100) -> np.ndarray:
    """Head outputs for a stack of images, computed in batches."""
    outs = [forward(x[s : s + batch_size], params, cfg, keep_record=False)[0] for s in range(0, len(x), batch_size)]
    return np.concatenate(outs, axis=0) if outs else np.zeros((0, cfg.arch.num_classes))
