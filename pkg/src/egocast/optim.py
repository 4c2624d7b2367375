from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from egocast.tensor import ContractError, Tensor


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], state: AdamState) -> AdamState:
    """One bias-corrected Adam update, applied in place to ``params``.

    Every parameter must carry a gradient; moment buffers are created lazily
    with the parameter's shape.
    """
    for name, p in params.items():
        if p.grad is None:
            raise ContractError(f"parameter {name!r} has no gradient")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    step_size = state.lr / c1
    inv_sqrt_c2 = 1.0 / np.sqrt(c2)
    for name, p in params.items():
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        tmp = np.multiply(g, 1.0 - b1)
        m *= b1
        m += tmp
        np.multiply(g, g, out=tmp)
        tmp *= 1.0 - b2
        v *= b2
        v += tmp
        # lr * mhat / (sqrt(vhat) + eps), evaluated in place
        np.sqrt(v, out=tmp)
        tmp *= inv_sqrt_c2
        tmp += state.eps
        np.divide(m, tmp, out=tmp)
        tmp *= step_size
        p.data -= tmp
    return state
