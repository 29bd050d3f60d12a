from dataclasses import dataclass, field, replace
from typing import Dict, Mapping, Tuple

import numpy as np

from turbinewatch.exceptions import ConfigurationException, NumericException, UsageException
from turbinewatch.tensor import ParameterSet, Tensor


@dataclass(frozen=True)
class AdamState:
    """
    Adam moments per parameter name. `t` counts completed steps; m and v
    stay empty until the first step.
    """

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def validate(self):
        if self.lr <= 0:
            raise ConfigurationException(f"learning rate must be positive, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigurationException("Adam betas must be in [0, 1)")
        if self.eps <= 0:
            raise ConfigurationException("Adam eps must be positive")


def adam_step(
    params: ParameterSet, grads: Mapping[str, Tensor], state: AdamState
) -> Tuple[ParameterSet, AdamState]:
    """One bias corrected Adam update. Returns new values, inputs are untouched."""
    state.validate()

    if set(grads) != set(params):
        raise UsageException("gradients and parameters name different tensors")

    t = state.t + 1
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t

    updated = ParameterSet()
    m, v = {}, {}
    for name, param in params.items():
        g = grads[name].data
        if g.shape != param.shape:
            raise UsageException(f"gradient for {name} has shape {g.shape}, expected {param.shape}")

        if not np.all(np.isfinite(g)):
            raise NumericException(f"non-finite gradient for {name}")

        m[name] = state.beta1 * state.m.get(name, 0.0) + (1.0 - state.beta1) * g
        v[name] = state.beta2 * state.v.get(name, 0.0) + (1.0 - state.beta2) * (g * g)

        step = (m[name] / bc1) / (np.sqrt(v[name] / bc2) + state.eps)
        updated.add(name, param.data - state.lr * step)

    return updated, replace(state, t=t, m=m, v=v)
