"""Adam optimizer with bias correction, plus global-norm gradient clipping."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import ContractError, NumericFaultError
from .params import ParamStore


@dataclass
class AdamState:
    """Per-parameter first/second moment buffers and the shared step counter."""

    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: ParamStore, learning_rate: float = 1e-4,
                   beta1: float = 0.9, beta2: float = 0.999,
                   epsilon: float = 1e-8) -> "AdamState":
        state = cls(learning_rate=learning_rate, beta1=beta1, beta2=beta2,
                    epsilon=epsilon)
        for name, t in params.items():
            state.first_moment[name] = np.zeros_like(t.data)
            state.second_moment[name] = np.zeros_like(t.data)
        return state


def adam_step(params: ParamStore, grads: Mapping[str, np.ndarray],
              state: AdamState) -> None:
    """One in-place Adam update; absent gradients count as zero."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** state.step
    corr2 = 1.0 - b2 ** state.step
    for name, t in params.items():
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None or v is None:
            raise ContractError(f"no optimizer state for parameter {name!r}")
        if m.shape != t.data.shape:
            raise ContractError(
                f"moment buffer for {name!r} has shape {m.shape}, "
                f"parameter has {t.data.shape}")
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(t.data)
        elif g.shape != t.data.shape:
            raise ContractError(
                f"gradient for {name!r} has shape {g.shape}, "
                f"parameter has {t.data.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / corr1
        v_hat = v / corr2
        t.data -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)


def clip_global_norm(grads: Mapping[str, np.ndarray], max_norm: float) -> float:
    """Rescale all gradients in place so their joint L2 norm is at most
    ``max_norm``; returns the pre-clip norm.

    Idempotent: once clipped, a second call leaves the buffers unchanged.
    """
    if max_norm <= 0:
        raise ContractError(f"max_norm must be positive, got {max_norm}")
    total = 0.0
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericFaultError(f"non-finite gradient for parameter {name!r}")
        total += float(np.sum(g * g))
    norm = float(np.sqrt(total))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm
