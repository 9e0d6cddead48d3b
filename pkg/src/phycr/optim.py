"""Adam with bias correction, operating on named parameter dictionaries."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DimensionError, NumericError
from .tensor import Tensor


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict, **hyper) -> AdamState:
        state = cls(**hyper)
        for name, p in params.items():
            state.m[name] = np.zeros(p.shape)
            state.v[name] = np.zeros(p.shape)
        return state

    def copy(self) -> AdamState:
        return AdamState(self.beta1, self.beta2, self.eps, self.step,
                         {k: a.copy() for k, a in self.m.items()},
                         {k: a.copy() for k, a in self.v.items()})


def adam_step(params: dict, grads: dict, state: AdamState, lr: float) -> dict:
    """Return new parameter tensors after one Adam update; ``state`` is advanced in place.

    Missing gradients count as zero.  Any non-finite gradient aborts the step
    before state or parameters are touched.
    """
    if not lr > 0:
        raise ConfigurationError(f"learning rate must be positive, got {lr}")
    for name, g in grads.items():
        if g is None:
            continue
        if g.shape != params[name].shape:
            raise DimensionError(f"gradient for {name!r} has shape {g.shape}, parameter {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}", step=state.step + 1)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    new = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros(p.shape)
        m = state.m.setdefault(name, np.zeros(p.shape))
        v = state.v.setdefault(name, np.zeros(p.shape))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        new[name] = Tensor(p.data - update, requires_grad=p.requires_grad)
    return new
