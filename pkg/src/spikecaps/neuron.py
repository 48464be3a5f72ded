"""Leaky integrate-and-fire dynamics with soft reset and a rectangular surrogate.

Discrete update per step (dt = 1, resting potential 0)::

    v_pre  = lam * v_prev + I
    spike  = 1 if v_pre >= v_th else 0
    v_new  = v_pre - v_th * spike

At most one spike per neuron per step; the threshold is subtracted once
even if ``v_new`` stays above it. The backward pass replaces
d(spike)/d(v_pre) by 1 on ``|v_pre - v_th| <= 1/2`` (inclusive) and 0
elsewhere, and applies that substitute to every occurrence of the spike,
including the reset term.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import DimensionError, ParameterError, StateError

SURROGATE_HALF_WIDTH = 0.5


@dataclass(frozen=True)
class LifConfig:
    v_th: float = 0.5
    lam: float = 0.2
    v_rest: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.lam < 1.0:
            raise ParameterError(f"decay factor lam must lie in [0, 1), got {self.lam}")
        if self.v_th <= 0.0:
            raise ParameterError(f"threshold v_th must be positive, got {self.v_th}")
        if self.v_rest != 0.0:
            raise ParameterError("only v_rest = 0 is supported")


@dataclass
class LifState:
    """Membrane potential, last spikes, and the per-step history for BPTT."""

    v: np.ndarray
    spikes: np.ndarray
    history_v_pre: list = field(default_factory=list)
    history_spikes: list = field(default_factory=list)

    @classmethod
    def zeros(cls, shape) -> "LifState":
        return cls(v=np.zeros(shape), spikes=np.zeros(shape))

    @property
    def steps(self) -> int:
        return len(self.history_v_pre)


def lif_step(state: LifState, input_current: np.ndarray, cfg: LifConfig) -> LifState:
    """Advance one step; returns a new state with the history extended."""
    current = np.asarray(input_current, dtype=np.float64)
    if current.shape != state.v.shape:
        raise DimensionError(f"input current shape {current.shape} != membrane shape {state.v.shape}")
    v_pre = cfg.lam * state.v + current
    spikes = (v_pre >= cfg.v_th).astype(np.float64)
    v_new = v_pre - cfg.v_th * spikes
    return LifState(
        v=v_new,
        spikes=spikes,
        history_v_pre=[*state.history_v_pre, v_pre],
        history_spikes=[*state.history_spikes, spikes],
    )


def lif_run(currents: np.ndarray, cfg: LifConfig, v0: np.ndarray | None = None):
    """Run the recurrence over a whole window ``currents[T, ...]``.

    Returns ``(v_pre, spikes, v_final)`` with the same leading shape as the
    input. Uses the compiled kernel when available.
    """
    currents = np.asarray(currents, dtype=np.float64)
    t_steps, shape = currents.shape[0], currents.shape[1:]
    flat = np.ascontiguousarray(currents.reshape(t_steps, -1))
    v0_flat = np.zeros(flat.shape[1]) if v0 is None else np.asarray(v0, dtype=np.float64).reshape(-1)
    v_pre, spikes, v_final = _kernels.lif_forward(flat, v0_flat, cfg.lam, cfg.v_th)
    return v_pre.reshape(currents.shape), spikes.reshape(currents.shape), v_final.reshape(shape)


def surrogate_grad(v_pre: np.ndarray, cfg: LifConfig) -> np.ndarray:
    """1 where ``-1/2 <= v_pre - v_th <= 1/2``, else 0."""
    d = np.asarray(v_pre, dtype=np.float64) - cfg.v_th
    return ((d >= -SURROGATE_HALF_WIDTH) & (d <= SURROGATE_HALF_WIDTH)).astype(np.float64)


def lif_backward_window(
    v_pre: np.ndarray,
    grad_spikes: np.ndarray | None,
    cfg: LifConfig,
    grad_v_pre: np.ndarray | None = None,
    grad_v_final: np.ndarray | None = None,
) -> np.ndarray:
    """BPTT through a recorded window ``v_pre[T, ...]``; returns dLoss/dI[T, ...]."""
    v_pre = np.asarray(v_pre, dtype=np.float64)
    t_steps = v_pre.shape[0]
    flat = np.ascontiguousarray(v_pre.reshape(t_steps, -1))
    zeros = np.zeros_like(flat)

    def _flat(g, what):
        if g is None:
            return zeros
        g = np.asarray(g, dtype=np.float64)
        if g.shape != v_pre.shape:
            raise DimensionError(f"{what} shape {g.shape} != recorded window shape {v_pre.shape}")
        return np.ascontiguousarray(g.reshape(t_steps, -1))

    gs = _flat(grad_spikes, "grad_spikes")
    gvp = _flat(grad_v_pre, "grad_v_pre")
    gvf = np.zeros(flat.shape[1]) if grad_v_final is None else np.asarray(grad_v_final, dtype=np.float64).reshape(-1)
    if gvf.shape[0] != flat.shape[1]:
        raise DimensionError(f"grad_v_final has {gvf.shape[0]} elements, layer has {flat.shape[1]}")
    grad = _kernels.lif_backward(flat, gs, gvp, gvf, cfg.lam, cfg.v_th)
    return grad.reshape(v_pre.shape)


def lif_backward(
    grad_spikes,
    grad_v_final: np.ndarray | None,
    state: LifState,
    cfg: LifConfig,
    grad_v_pre=None,
) -> np.ndarray:
    """BPTT over the history held in ``state``.

    ``grad_spikes`` (and the optional ``grad_v_pre``) are per-step gradients,
    given as a ``[T, ...]`` array or a length-T sequence.
    """
    t_steps = state.steps
    if t_steps == 0:
        raise StateError("LifState has an empty history; run lif_step first")
    for name, g in (("grad_spikes", grad_spikes), ("grad_v_pre", grad_v_pre)):
        if g is not None and len(g) != t_steps:
            raise StateError(f"{name} covers {len(g)} steps but the state history holds {t_steps}")
    v_pre = np.stack(state.history_v_pre)
    gs = None if grad_spikes is None else np.stack([np.asarray(g, dtype=np.float64) for g in grad_spikes])
    gvp = None if grad_v_pre is None else np.stack([np.asarray(g, dtype=np.float64) for g in grad_v_pre])
    return lif_backward_window(v_pre, gs, cfg, grad_v_pre=gvp, grad_v_final=grad_v_final)
