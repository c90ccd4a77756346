"""Small module system and the layers the pose networks are built from."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Parameter, Tensor


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal(0, std) truncated at two standard deviations (by resampling)."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out * std


def fan_in_uniform(rng: np.random.Generator, shape) -> np.ndarray:
    """U(-1/sqrt(fan_in), 1/sqrt(fan_in)); fan_in is the first axis times any kernel axes."""
    fan_in = int(np.prod(shape[:1] + shape[2:]))
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, shape)


class Module:
    """Parameters and sub-modules are discovered from attributes in definition order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, val in vars(self).items():
            path = f"{prefix}{key}"
            if isinstance(val, Parameter):
                yield path, val
            elif isinstance(val, Module):
                yield from val.named_parameters(path + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.layer{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def assign_names(self, prefix: str) -> None:
        for name, p in self.named_parameters(prefix + "."):
            p.name = name

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def num_params(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise KeyError(f"state mismatch: missing={missing[:5]} unexpected={extra[:5]}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != expected {p.shape}")
            p.data = arr.copy()
            p.grad = np.zeros_like(p.data)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, zero: bool = False):
        w = np.zeros((d_in, d_out)) if zero else fan_in_uniform(rng, (d_in, d_out))
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(d_out))

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-6):
        self.gamma = Parameter(np.ones(d))
        self.beta = Parameter(np.zeros(d))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, self.eps)


class MultiHeadSelfAttention(Module):
    def __init__(self, d: int, heads: int, rng: np.random.Generator):
        if d % heads:
            raise ValueError(f"width {d} not divisible by {heads} heads")
        self.heads = heads
        self.wq = Parameter(fan_in_uniform(rng, (d, d)))
        self.bq = Parameter(np.zeros(d))
        self.wk = Parameter(fan_in_uniform(rng, (d, d)))
        self.bk = Parameter(np.zeros(d))
        self.wv = Parameter(fan_in_uniform(rng, (d, d)))
        self.bv = Parameter(np.zeros(d))
        self.wo = Parameter(fan_in_uniform(rng, (d, d)))
        self.bo = Parameter(np.zeros(d))

    def _split(self, x: Tensor) -> Tensor:
        *lead, n, d = x.shape
        h = self.heads
        x = x.reshape(tuple(lead) + (n, h, d // h))
        k = len(lead)
        return x.transpose(tuple(range(k)) + (k + 1, k, k + 2))

    def __call__(self, x: Tensor) -> Tensor:
        *lead, n, d = x.shape
        q = self._split(T.linear(x, self.wq, self.bq))
        k = self._split(T.linear(x, self.wk, self.bk))
        v = self._split(T.linear(x, self.wv, self.bv))
        scores = T.scale(q @ k.swapaxes(-1, -2), 1.0 / math.sqrt(d // self.heads))
        ctx = T.softmax(scores) @ v
        nl = len(lead)
        ctx = ctx.transpose(tuple(range(nl)) + (nl + 1, nl, nl + 2)).reshape(tuple(lead) + (n, d))
        return T.linear(ctx, self.wo, self.bo)


class FeedForward(Module):
    def __init__(self, d: int, hidden: int, rng: np.random.Generator):
        self.w1 = Parameter(fan_in_uniform(rng, (d, hidden)))
        self.b1 = Parameter(np.zeros(hidden))
        self.w2 = Parameter(fan_in_uniform(rng, (hidden, d)))
        self.b2 = Parameter(np.zeros(d))

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(T.gelu(T.linear(x, self.w1, self.b1)), self.w2, self.b2)


class EncoderLayer(Module):
    """Pre-norm transformer block: x + MHSA(LN(x)), then + FFN(LN(.))."""

    def __init__(self, d: int, heads: int, mlp_ratio: float, rng: np.random.Generator, dropout: float = 0.0):
        self.ln1 = LayerNorm(d)
        self.mhsa = MultiHeadSelfAttention(d, heads, rng)
        self.ln2 = LayerNorm(d)
        self.ffn = FeedForward(d, int(d * mlp_ratio), rng)
        self.dropout = dropout

    def zero_output_projections(self) -> None:
        for p in (self.mhsa.wo, self.mhsa.bo, self.ffn.w2, self.ffn.b2):
            p.data[...] = 0.0

    def __call__(self, x: Tensor, rng: np.random.Generator | None = None) -> Tensor:
        if x.shape[-1] != self.ln1.gamma.shape[0]:
            raise T.DimensionError(f"encoder layer of width {self.ln1.gamma.shape[0]} got tokens {x.shape}")
        x = x + T.dropout(self.mhsa(self.ln1(x)), self.dropout, rng)
        return x + T.dropout(self.ffn(self.ln2(x)), self.dropout, rng)
