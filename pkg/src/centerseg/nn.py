"""Parameter containers and transformer building blocks."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, attention, gelu, layer_norm, parameter


class Module:
    """Minimal parameter container; parameters are discovered by attribute walk."""

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        out = []
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                out.append((name, value))
            elif isinstance(value, Module):
                out.extend(value.named_parameters(name + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.extend(item.named_parameters(f"{name}.{i}."))
                    elif isinstance(item, Tensor) and item.requires_grad:
                        out.append((f"{name}.{i}", item))
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]


def _normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    return rng.normal(0.0, std, size=shape)


class Linear(Module):
    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int,
                 std: float | None = None, zero: bool = False):
        std = 1.0 / np.sqrt(d_in) if std is None else std
        w = np.zeros((d_in, d_out)) if zero else _normal(rng, (d_in, d_out), std)
        self.weight = parameter(w)
        self.bias = parameter(np.zeros(d_out))

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gain = parameter(np.ones(dim))
        self.bias = parameter(np.zeros(dim))

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias)


class MLP(Module):
    """Linear -> GELU -> Linear."""

    def __init__(self, rng: np.random.Generator, dim: int, hidden: int, out: int | None = None):
        self.fc1 = Linear(rng, dim, hidden)
        self.fc2 = Linear(rng, hidden, dim if out is None else out)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(gelu(self.fc1(x)))


class MultiHeadAttention(Module):
    def __init__(self, rng: np.random.Generator, dim: int, heads: int):
        std = 1.0 / np.sqrt(dim)
        for nm in ("q", "k", "v", "o"):
            setattr(self, f"w{nm}", parameter(_normal(rng, (dim, dim), std)))
            setattr(self, f"b{nm}", parameter(np.zeros(dim)))
        self.heads = heads

    def weights(self) -> dict:
        return {k: getattr(self, k) for k in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")}

    def __call__(self, query: Tensor, key: Tensor, value: Tensor,
                 key_mask: np.ndarray | None = None) -> Tensor:
        return attention(query, key, value, self.weights(), self.heads, key_mask=key_mask)


class Block(Module):
    """Pre-norm transformer block; self-attention when ``context`` is omitted.

    For cross-attention the queries are normalized by ``ln1`` and the keys and
    values by ``ln_ctx``.
    """

    def __init__(self, rng: np.random.Generator, dim: int, heads: int,
                 mlp_ratio: int = 4, cross: bool = False):
        self.ln1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(rng, dim, heads)
        self.ln2 = LayerNorm(dim)
        self.mlp = MLP(rng, dim, dim * mlp_ratio)
        if cross:
            self.ln_ctx = LayerNorm(dim)

    def __call__(self, x: Tensor, context: Tensor | None = None,
                 key_mask: np.ndarray | None = None) -> Tensor:
        h = self.ln1(x)
        kv = h if context is None else self.ln_ctx(context)
        x = x + self.attn(h, kv, kv, key_mask=key_mask)
        return x + self.mlp(self.ln2(x))
