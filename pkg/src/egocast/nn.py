"""Parameter containers and transformer building blocks on top of :mod:`egocast.tensor`."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from egocast.tensor import (
    ConfigurationError,
    DimensionError,
    Tensor,
    concat,
    gelu,
    layer_norm,
    matmul,
    softmax,
)


class Module:
    """Minimal parameter registry: attributes that are Tensors or Modules are collected."""

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            if isinstance(value, Tensor) and value.requires_grad:
                out[prefix + key] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(f"{prefix}{key}."))
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{prefix}{key}.{i}."))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        if set(params) != set(state):
            missing = sorted(set(params) - set(state))
            extra = sorted(set(state) - set(params))
            raise KeyError(f"state mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
        for k, p in params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise DimensionError(f"{k}: stored shape {arr.shape} != parameter shape {p.shape}")
            p.data = arr.copy()


def _param(data: np.ndarray, name: str) -> Tensor:
    return Tensor(np.ascontiguousarray(data, dtype=np.float64), requires_grad=True, name=name)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True):
        bound = 1.0 / np.sqrt(n_in)
        self.weight = _param(rng.uniform(-bound, bound, size=(n_in, n_out)), "weight")
        self.bias = _param(np.zeros(n_out), "bias") if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.gamma = _param(np.ones(d), "gamma")
        self.beta = _param(np.zeros(d), "beta")
        self._eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, self._eps)


class MLP(Module):
    """Two linear layers with a GELU in between."""

    def __init__(self, n_in: int, hidden: int, n_out: int, rng: np.random.Generator):
        self.fc1 = Linear(n_in, hidden, rng)
        self.fc2 = Linear(hidden, n_out, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(gelu(self.fc1(x)))


@dataclass
class AttentionParams:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor


def multi_head_self_attention(x: Tensor, params: AttentionParams, heads: int) -> Tensor:
    """Scaled dot-product self-attention over ``x[..., k, d]`` with ``heads`` heads.

    Projections carry no bias and there is no masking or positional term, so the
    op is equivariant to permutations of the token axis.
    """
    d = x.shape[-1]
    if heads < 1 or d % heads:
        raise ConfigurationError(f"model width {d} is not divisible by {heads} heads")
    for name in ("wq", "wk", "wv", "wo"):
        w = getattr(params, name)
        if w.shape != (d, d):
            raise DimensionError(f"attention projection {name} has shape {w.shape}, expected {(d, d)}")
    dh = d // heads
    lead = x.shape[:-2]
    k = x.shape[-2]

    def split(t: Tensor) -> Tensor:
        # [..., k, d] -> [..., h, k, dh]
        t = t.reshape(*lead, k, heads, dh)
        nd = t.ndim
        axes = tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1)
        return t.transpose(*axes)

    q = split(matmul(x, params.wq))
    kk = split(matmul(x, params.wk))
    v = split(matmul(x, params.wv))
    nd = q.ndim
    kt = kk.transpose(*(tuple(range(nd - 2)) + (nd - 1, nd - 2)))
    scores = matmul(q, kt) * (1.0 / np.sqrt(dh))
    attn = softmax(scores, axis=-1)
    ctx = matmul(attn, v)
    ctx = ctx.transpose(*(tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1))).reshape(*lead, k, d)
    return matmul(ctx, params.wo)


class SelfAttention(Module):
    def __init__(self, d: int, heads: int, rng: np.random.Generator):
        if heads < 1 or d % heads:
            raise ConfigurationError(f"model width {d} is not divisible by {heads} heads")
        bound = 1.0 / np.sqrt(d)
        self.wq = _param(rng.uniform(-bound, bound, (d, d)), "wq")
        self.wk = _param(rng.uniform(-bound, bound, (d, d)), "wk")
        self.wv = _param(rng.uniform(-bound, bound, (d, d)), "wv")
        self.wo = _param(rng.uniform(-bound, bound, (d, d)), "wo")
        self._heads = heads

    def __call__(self, x: Tensor) -> Tensor:
        return multi_head_self_attention(x, AttentionParams(self.wq, self.wk, self.wv, self.wo), self._heads)


class EncoderBlock(Module):
    """Pre-norm residual block: attention then a 4x-wide GELU feed-forward."""

    def __init__(self, d: int, heads: int, rng: np.random.Generator):
        self.ln1 = LayerNorm(d)
        self.attn = SelfAttention(d, heads, rng)
        self.ln2 = LayerNorm(d)
        self.ff = MLP(d, 4 * d, d, rng)

    def __call__(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.ln1(x))
        return x + self.ff(self.ln2(x))


class TransformerEncoder(Module):
    def __init__(self, d: int, layers: int, heads: int, rng: np.random.Generator):
        self.blocks = [EncoderBlock(d, heads, rng) for _ in range(layers)]
        self.ln_out = LayerNorm(d)

    def __call__(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return self.ln_out(x)


def positional_slice(table: Tensor, length: int) -> Tensor:
    """Last ``length`` rows of a positional table, so the newest token always gets the final row."""
    k = table.shape[0]
    if not 1 <= length <= k:
        raise DimensionError(f"window length {length} outside 1..{k}")
    return table[k - length:]


__all__ = [
    "AttentionParams",
    "EncoderBlock",
    "LayerNorm",
    "Linear",
    "MLP",
    "Module",
    "SelfAttention",
    "TransformerEncoder",
    "concat",
    "multi_head_self_attention",
    "positional_slice",
]
