"""Adam with bias correction, gradient-ascent convention.

All objectives in this library are lower bounds being maximized, so the
update applies the step with a plus sign: ``params + lr * m_hat / (sqrt(v_hat)
+ eps)``. State is explicit and the update is a pure function, so two
parameter vectors fed identical gradient streams stay bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["AdamState", "adam_step"]


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None

    @classmethod
    def for_params(cls, params: np.ndarray, lr: float = 1e-3) -> "AdamState":
        return cls(lr=lr, m=np.zeros_like(params), v=np.zeros_like(params))


def adam_step(params: np.ndarray, grad: np.ndarray, state: AdamState
              ) -> tuple[np.ndarray, AdamState]:
    """One ascent step; returns (new_params, new_state), inputs untouched."""
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.shape:
        raise ValueError(f"gradient shape {grad.shape} != params shape {params.shape}")
    if not np.isfinite(grad).all():
        raise FloatingPointError("non-finite gradient passed to adam_step")
    if state.m is None or state.v is None:
        state = AdamState(state.lr, state.beta1, state.beta2, state.eps, 0,
                          np.zeros_like(params), np.zeros_like(params))
    if state.m.shape != params.shape:
        raise ValueError("optimizer state shape does not match parameters")
    t = state.step_count + 1
    m = state.beta1 * state.m + (1 - state.beta1) * grad
    v = state.beta2 * state.v + (1 - state.beta2) * grad ** 2
    m_hat = m / (1 - state.beta1 ** t)
    v_hat = v / (1 - state.beta2 ** t)
    new_params = params + state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = AdamState(state.lr, state.beta1, state.beta2, state.eps, t, m, v)
    return new_params, new_state
