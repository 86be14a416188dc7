from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """One bias-corrected Adam update applied in place to ``params``.

    ``params`` maps names to tensors (anything with a ``.data`` array), ``grads``
    maps the same names to arrays. Parameters are visited in sorted-name order.
    """
    missing = set(params) - set(grads)
    if missing:
        raise KeyError(f"missing gradients for {sorted(missing)}")
    state.step += 1
    c1 = 1.0 - beta1 ** state.step
    c2 = 1.0 - beta2 ** state.step
    for name in sorted(params):
        g = np.asarray(grads[name], dtype=np.float64)
        p = params[name]
        if g.shape != p.data.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != {p.data.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


class Adam:
    def __init__(self, params: dict, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.state = AdamState()

    def step(self) -> None:
        grads = {k: (v.grad if v.grad is not None else np.zeros_like(v.data))
                 for k, v in self.params.items()}
        adam_step(self.params, grads, self.state, self.lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self) -> None:
        for v in self.params.values():
            v.grad = None
