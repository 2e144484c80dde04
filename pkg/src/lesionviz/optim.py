"""Bias-corrected Adam."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError


@dataclass(frozen=True)
class AdamConfig:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidArgumentError(f"learning_rate must be > 0, got {self.learning_rate}")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0 <= b < 1:
                raise InvalidArgumentError(f"{name} must lie in [0, 1), got {b}")
        if not self.epsilon > 0:
            raise InvalidArgumentError(f"epsilon must be > 0, got {self.epsilon}")


@dataclass
class AdamState:
    step_count: int = 0
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def zeros_like(cls, params: list[np.ndarray]) -> "AdamState":
        return cls(0, [np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    state: AdamState,
    config: AdamConfig = AdamConfig(),
) -> tuple[list[np.ndarray], AdamState]:
    """One Adam update; inputs are left untouched and new arrays are returned.

    An empty ``state`` (no moments yet) is treated as zero moments at step 0.
    """
    if len(params) != len(grads):
        raise InvalidArgumentError(f"{len(params)} parameter arrays but {len(grads)} gradients")
    if not state.first_moment and state.step_count == 0:
        state = AdamState.zeros_like(params)
    if len(state.first_moment) != len(params) or len(state.second_moment) != len(params):
        raise InvalidArgumentError("optimizer state does not match the parameter list")

    t = state.step_count + 1
    b1, b2 = config.beta1, config.beta2
    correction1 = 1.0 - b1**t
    correction2 = 1.0 - b2**t

    new_params, new_m, new_v = [], [], []
    for i, (p, g, m, v) in enumerate(zip(params, grads, state.first_moment, state.second_moment)):
        if not (p.shape == g.shape == m.shape == v.shape):
            raise InvalidArgumentError(
                f"array {i}: parameter {p.shape}, gradient {g.shape}, moments {m.shape}/{v.shape} disagree"
            )
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        m_hat = m / correction1
        v_hat = v / correction2
        step = config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon)
        new_params.append((p - step).astype(p.dtype, copy=False))
        new_m.append(m.astype(p.dtype, copy=False))
        new_v.append(v.astype(p.dtype, copy=False))
    return new_params, AdamState(t, new_m, new_v)
