"""Synaptic traces and spike-timing routing between capsule layers.

Coupling coefficients ``c[i, j]`` link low-level capsule ``i`` to
high-level capsule ``j``. They start at ``1 / n_high`` for every sample
and evolve over the simulation window:

* ``stdp``: ``dc_ij = eta * mean_u(x_pre[i, u] - chi_offset) * mean_v(post[j, v])``
* ``hebb``: ``dc_ij = eta * mean_u(pre[i, u]) * mean_v(post[j, v])``

where ``x_pre`` is the presynaptic trace (reset to 1 on a spike, decaying
by ``exp(-1/tau)`` per silent step). The means run over the spiking units
inside each capsule. No clamping or normalisation is applied to ``c``.

All array arguments may carry leading batch axes; the trailing two axes
are ``(capsules, units)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .errors import DimensionError, ParameterError

ROUTING_MODES = ("stdp", "hebb")


@dataclass(frozen=True)
class RoutingConfig:
    mode: str = "stdp"
    eta: float = 0.01
    chi_offset: float = 0.5
    tau: float = 1.5

    def __post_init__(self):
        if self.mode not in ROUTING_MODES:
            raise ParameterError(f"routing mode must be one of {ROUTING_MODES}, got {self.mode!r}")
        if self.tau <= 0:
            raise ParameterError(f"trace time constant tau must be positive, got {self.tau}")

    @property
    def trace_decay(self) -> float:
        return math.exp(-1.0 / self.tau)


class CapsulePartition(NamedTuple):
    n_low: int
    pre_dim: int
    n_high: int
    post_dim: int

    def split_pre(self, a: np.ndarray) -> np.ndarray:
        return _split(a, self.n_low, self.pre_dim, "presynaptic")

    def split_post(self, a: np.ndarray) -> np.ndarray:
        return _split(a, self.n_high, self.post_dim, "postsynaptic")


def _split(a: np.ndarray, n: int, d: int, what: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.shape[-2:] == (n, d):
        return a
    if a.ndim >= 1 and a.shape[-1] == n * d:
        return a.reshape(*a.shape[:-1], n, d)
    raise DimensionError(f"{what} tensor of shape {a.shape} is inconsistent with partition {n} capsules x {d} units")


@dataclass
class TraceBuffer:
    x_pre: np.ndarray
    tau: float = 1.5

    @classmethod
    def zeros(cls, shape, tau: float = 1.5) -> "TraceBuffer":
        return cls(x_pre=np.zeros(shape), tau=tau)


@dataclass
class RoutingState:
    c: np.ndarray
    eta: float = 0.01
    chi_offset: float = 0.5
    mode: str = "stdp"

    @classmethod
    def initial(cls, n_low: int, n_high: int, batch: tuple = (), cfg: RoutingConfig | None = None) -> "RoutingState":
        cfg = cfg or RoutingConfig()
        return cls(c=initial_coupling(n_low, n_high, batch), eta=cfg.eta, chi_offset=cfg.chi_offset, mode=cfg.mode)


def initial_coupling(n_low: int, n_high: int, batch: tuple = ()) -> np.ndarray:
    return np.full((*batch, n_low, n_high), 1.0 / n_high)


def decay_traces(x_pre: np.ndarray, pre_spikes: np.ndarray, decay: float) -> np.ndarray:
    """Array form of :func:`trace_update` with a precomputed ``exp(-1/tau)``."""
    return np.where(pre_spikes > 0, 1.0, x_pre * decay)


def trace_update(buf: TraceBuffer, pre_spikes: np.ndarray) -> TraceBuffer:
    pre_spikes = np.asarray(pre_spikes, dtype=np.float64)
    if pre_spikes.shape != buf.x_pre.shape:
        raise DimensionError(f"spike shape {pre_spikes.shape} != trace shape {buf.x_pre.shape}")
    return TraceBuffer(x_pre=decay_traces(buf.x_pre, pre_spikes, math.exp(-1.0 / buf.tau)), tau=buf.tau)


def stdp_delta(x_pre: np.ndarray, post_spikes: np.ndarray, eta: float, chi_offset: float) -> np.ndarray:
    """``dc[..., i, j]`` from traces ``[..., n_low, d_pre]`` and spikes ``[..., n_high, d_post]``."""
    pre_term = x_pre.mean(axis=-1) - chi_offset
    post_rate = post_spikes.mean(axis=-1)
    return eta * (pre_term[..., :, None] * post_rate[..., None, :])


def hebb_delta(pre_spikes: np.ndarray, post_spikes: np.ndarray, eta: float) -> np.ndarray:
    pre_rate = pre_spikes.mean(axis=-1)
    post_rate = post_spikes.mean(axis=-1)
    return eta * (pre_rate[..., :, None] * post_rate[..., None, :])


def _check_c(rs: RoutingState, partition: CapsulePartition) -> None:
    if rs.c.shape[-2:] != (partition.n_low, partition.n_high):
        raise DimensionError(
            f"coupling matrix shape {rs.c.shape} inconsistent with partition "
            f"({partition.n_low} low, {partition.n_high} high capsules)"
        )


def stdp_routing_update(
    rs: RoutingState, buf: TraceBuffer, post_spikes: np.ndarray, partition: CapsulePartition
) -> RoutingState:
    """One-sided STDP step; ``buf`` must already hold this step's traces."""
    _check_c(rs, partition)
    x_pre = partition.split_pre(buf.x_pre)
    post = partition.split_post(post_spikes)
    return replace(rs, c=rs.c + stdp_delta(x_pre, post, rs.eta, rs.chi_offset))


def hebb_routing_update(
    rs: RoutingState, pre_spikes: np.ndarray, post_spikes: np.ndarray, partition: CapsulePartition
) -> RoutingState:
    if rs.mode != "hebb":
        raise ParameterError(f"hebb update requested on a routing state in {rs.mode!r} mode")
    _check_c(rs, partition)
    pre = partition.split_pre(pre_spikes)
    post = partition.split_post(post_spikes)
    return replace(rs, c=rs.c + hebb_delta(pre, post, rs.eta))


def reset_routing(rs: RoutingState) -> RoutingState:
    n_low, n_high = rs.c.shape[-2:]
    return replace(rs, c=initial_coupling(n_low, n_high, rs.c.shape[:-2]))
