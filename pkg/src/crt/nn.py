"""Minimal layer library on top of the DiffArray engine."""

from __future__ import annotations

import math

import numpy as np

from .numerics import tensor as T
from .numerics.tensor import DiffArray


def param(values) -> DiffArray:
    return DiffArray(values, requires_grad=True)


class Module:
    """Parameter container; parameters are discovered from attributes in definition order."""

    def named_parameters(self, prefix: str = "") -> list[tuple[str, DiffArray]]:
        out = []
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, DiffArray) and value.requires_grad:
                out.append((full, value))
            elif isinstance(value, Module):
                out.extend(value.named_parameters(full + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.extend(item.named_parameters(f"{full}.{i}."))
            elif isinstance(value, dict):
                for key, item in value.items():
                    if isinstance(item, Module):
                        out.extend(item.named_parameters(f"{full}.{key}."))
        return out

    def parameters(self) -> list[DiffArray]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def num_parameters(self) -> int:
        return sum(p.values.size for p in self.parameters())


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True):
        limit = math.sqrt(6.0 / (n_in + n_out))
        self.weight = param(rng.uniform(-limit, limit, (n_in, n_out)))
        self.bias = param(np.zeros(n_out)) if bias else None

    def __call__(self, x) -> DiffArray:
        out = T.matmul(x, self.weight)
        return out + self.bias if self.bias is not None else out


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gamma = param(np.ones(dim))
        self.beta = param(np.zeros(dim))

    def __call__(self, x) -> DiffArray:
        return T.layer_norm(x, self.gamma, self.beta)


class Conv1d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator, scale: float = 1.0):
        std = scale * math.sqrt(2.0 / (c_in * kernel))
        self.weight = param(rng.normal(0.0, std, (kernel, c_in, c_out)))
        self.bias = param(np.zeros(c_out))

    def __call__(self, x) -> DiffArray:
        return T.conv1d(x, self.weight) + self.bias


class MLP(Module):
    """Two-layer perceptron."""

    def __init__(self, n_in: int, hidden: int, n_out: int, rng: np.random.Generator, activation: str = "gelu"):
        self.fc1 = Linear(n_in, hidden, rng)
        self.fc2 = Linear(hidden, n_out, rng)
        self.activation = activation

    def __call__(self, x) -> DiffArray:
        h = self.fc1(x)
        h = T.gelu(h) if self.activation == "gelu" else T.relu(h)
        return self.fc2(h)


class ResidualCNN(Module):
    """1-D residual conv stack over one patch, global-average-pooled to a vector.

    Input (n, patch_len, channels) -> output (n, dim).
    """

    def __init__(self, channels: int, dim: int, blocks: int, rng: np.random.Generator, kernel: int = 3):
        self.stem = Conv1d(channels, dim, kernel, rng)
        # second conv of each block starts small so deep stacks begin near identity
        self.blocks = [(Conv1d(dim, dim, kernel, rng), Conv1d(dim, dim, kernel, rng, scale=0.1))
                       for _ in range(blocks)]

    def named_parameters(self, prefix: str = "") -> list[tuple[str, DiffArray]]:
        out = self.stem.named_parameters(prefix + "stem.")
        for i, (c1, c2) in enumerate(self.blocks):
            out += c1.named_parameters(f"{prefix}blocks.{i}.conv1.")
            out += c2.named_parameters(f"{prefix}blocks.{i}.conv2.")
        return out

    def __call__(self, x) -> DiffArray:
        h = T.relu(self.stem(x))
        for c1, c2 in self.blocks:
            h = T.relu(h + c2(T.relu(c1(h))))
        return T.mean(h, axis=1)


class MultiHeadAttention(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        if dim % heads:
            raise ValueError(f"embedding dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.qkv = Linear(dim, 3 * dim, rng)
        self.out = Linear(dim, dim, rng)

    def __call__(self, x: DiffArray, key_bias: np.ndarray | None = None) -> DiffArray:
        B, L, D = x.shape
        H = self.heads
        dh = D // H
        qkv = T.transpose(T.reshape(self.qkv(x), (B, L, 3, H, dh)), (2, 0, 3, 1, 4))
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = T.matmul(q, T.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(dh))
        if key_bias is not None:
            scores = scores + key_bias
        attn = T.softmax(scores, axis=-1)
        ctx = T.reshape(T.transpose(T.matmul(attn, v), (0, 2, 1, 3)), (B, L, D))
        return self.out(ctx)


class TransformerBlock(Module):
    """Pre-norm block: x + MHA(LN(x)), then x + MLP(LN(x))."""

    def __init__(self, dim: int, heads: int, mlp_ratio: float, rng: np.random.Generator):
        self.norm1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads, rng)
        self.norm2 = LayerNorm(dim)
        self.mlp = MLP(dim, int(round(dim * mlp_ratio)), dim, rng)

    def __call__(self, x: DiffArray, key_bias: np.ndarray | None = None) -> DiffArray:
        x = x + self.attn(self.norm1(x), key_bias)
        return x + self.mlp(self.norm2(x))


def key_padding_bias(mask: np.ndarray) -> np.ndarray | None:
    """Additive attention bias from a (B, L) validity mask; None when nothing is padded."""
    if mask.all():
        return None
    return np.where(mask, 0.0, -1e9)[:, None, None, :]
