"""First-order update rules with explicit, cloneable state.

Steps are pure: they never mutate the caller's state, so a state can be
branched into several speculative update chains that evolve independently.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .validation import as_vector

__all__ = ["OptimizerSpec", "OptimizerState", "init_state", "step"]

_FAMILIES = ("sgd", "sgd_momentum", "adam")


@dataclass(frozen=True)
class OptimizerSpec:
    family: str = "adam"
    lr: float = 0.1
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown optimizer family {self.family!r}; expected one of {_FAMILIES}")
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        for name in ("momentum", "beta1", "beta2"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ValueError(f"{name} must be in [0, 1), got {v}")
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")

    def scaled(self, factor: float) -> "OptimizerSpec":
        """Same rule with the learning rate multiplied by ``factor``."""
        return replace(self, lr=self.lr * factor)


@dataclass(frozen=True)
class OptimizerState:
    step_count: int
    m: np.ndarray  # first moment / momentum buffer
    v: np.ndarray  # second moment (adam only)

    def clone(self) -> "OptimizerState":
        """Independent copy; stepping the copy never touches the original."""
        return OptimizerState(self.step_count, self.m.copy(), self.v.copy())


def init_state(spec: OptimizerSpec, d: int) -> OptimizerState:
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    return OptimizerState(step_count=0, m=np.zeros(d), v=np.zeros(d))


def step(spec: OptimizerSpec, state: OptimizerState, theta, grad) -> tuple[np.ndarray, OptimizerState]:
    """One update: returns (new theta, new state); inputs are left unmodified."""
    theta = as_vector(theta, "theta")
    grad = as_vector(grad, "grad")
    if theta.shape != grad.shape:
        raise ValueError(f"theta and grad dimensions differ: {theta.shape[0]} vs {grad.shape[0]}")

    t = state.step_count + 1
    if spec.family == "sgd":
        new_theta = theta - spec.lr * grad
        new_state = OptimizerState(t, state.m.copy(), state.v.copy())
    elif spec.family == "sgd_momentum":
        m = spec.momentum * state.m + grad
        new_theta = theta - spec.lr * m
        new_state = OptimizerState(t, m, state.v.copy())
    else:  # adam
        m = spec.beta1 * state.m + (1.0 - spec.beta1) * grad
        v = spec.beta2 * state.v + (1.0 - spec.beta2) * grad * grad
        m_hat = m / (1.0 - spec.beta1 ** t)
        v_hat = v / (1.0 - spec.beta2 ** t)
        new_theta = theta - spec.lr * m_hat / (np.sqrt(v_hat) + spec.eps)
        new_state = OptimizerState(t, m, v)
    return new_theta, new_state
