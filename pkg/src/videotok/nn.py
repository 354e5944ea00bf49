"""Neural building blocks composed from the autodiff primitives.

All blocks accept inputs with arbitrary leading batch axes, i.e. shape
(..., L, D) for sequence blocks. Weights are Xavier-uniform, biases zero,
drawn from an explicitly passed numpy Generator so construction order is
the only thing that determines parameter values.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .autodiff import Tensor, concat, gelu, matmul, power, reshape, softmax, swapaxes, tmean
from .errors import ConfigError

MASK_FILL = -1e9  # underflows to exactly 0 after exp() at float64


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    shape = (fan_in, fan_out) if shape is None else shape
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True)


def zeros_param(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


class Module:
    """Minimal parameter container; children found by attribute walk.

    Attribute insertion order (dict order) fixes the parameter ordering,
    which gradcheck and the optimizers rely on being deterministic.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            path = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{path}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{path}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def parameter_count(self) -> int:
        return sum(t.size for t in self.parameters())


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator):
        self.weight = xavier_uniform(rng, d_in, d_out)
        self.bias = zeros_param((d_out,))

    def __call__(self, x: Tensor) -> Tensor:
        return matmul(x, self.weight) + self.bias


class Mlp(Module):
    """Two-layer MLP with GELU between."""

    def __init__(self, d_in: int, hidden: int, d_out: int, rng: np.random.Generator):
        self.fc1 = Linear(d_in, hidden, rng)
        self.fc2 = Linear(hidden, d_out, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(gelu(self.fc1(x)))


class LayerNorm(Module):
    """Per-slice zero mean / unit variance over the last axis, then affine.

    Epsilon sits inside the square root, so a constant slice normalizes to
    exactly zero rather than dividing by zero.
    """

    def __init__(self, dim: int, eps: float = 1e-5):
        if dim < 2:
            raise ConfigError(f"layer norm needs at least 2 channels, got {dim}")
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = zeros_param((dim,))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        mu = tmean(x, axis=-1, keepdims=True)
        centered = x - mu
        var = tmean(centered * centered, axis=-1, keepdims=True)
        inv = power(var + self.eps, -0.5)
        return centered * inv * self.gamma + self.beta


def causal_mask(length: int) -> np.ndarray:
    """Additive (L, L) mask: 0 where key <= query position, MASK_FILL above."""
    return np.triu(np.full((length, length), MASK_FILL), k=1)


class MultiHeadAttention(Module):
    """Self-attention over (..., L, D) with optional causal masking."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        if dim % heads != 0:
            raise ConfigError(
                f"channel dim {dim} is not divisible by head count {heads}"
            )
        self.wq = Linear(dim, dim, rng)
        self.wk = Linear(dim, dim, rng)
        self.wv = Linear(dim, dim, rng)
        self.wo = Linear(dim, dim, rng)
        self.heads = heads
        self.dim = dim
        self.scale = 1.0 / np.sqrt(dim / heads)

    def _split(self, x: Tensor, batch: tuple[int, ...], length: int) -> Tensor:
        per_head = self.dim // self.heads
        x = reshape(x, batch + (length, self.heads, per_head))
        return swapaxes(x, -3, -2)  # (..., heads, L, per_head)

    def __call__(self, x: Tensor, causal: bool = False) -> Tensor:
        *batch, length, _ = x.shape
        batch = tuple(batch)
        q = self._split(self.wq(x), batch, length)
        k = self._split(self.wk(x), batch, length)
        v = self._split(self.wv(x), batch, length)
        scores = matmul(q, swapaxes(k, -1, -2)) * self.scale
        if causal:
            scores = scores + causal_mask(length)
        weights = softmax(scores)
        out = matmul(weights, v)
        out = swapaxes(out, -3, -2)
        out = reshape(out, batch + (length, self.dim))
        return self.wo(out)


class TransformerBlock(Module):
    """Pre-norm residual block: x + MHA(LN(x)) then + FFN(LN(.))."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, ffn_hidden: int | None = None):
        ffn_hidden = 4 * dim if ffn_hidden is None else ffn_hidden
        self.ln1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads, rng)
        self.ln2 = LayerNorm(dim)
        self.ffn = Mlp(dim, ffn_hidden, dim, rng)

    def __call__(self, x: Tensor, causal: bool = False) -> Tensor:
        x = x + self.attn(self.ln1(x), causal=causal)
        return x + self.ffn(self.ln2(x))

    def zero_output_projections(self) -> None:
        """Make the block an exact identity (residual path only); test hook."""
        self.attn.wo.weight.data[:] = 0.0
        self.attn.wo.bias.data[:] = 0.0
        self.ffn.fc2.weight.data[:] = 0.0
        self.ffn.fc2.bias.data[:] = 0.0


class TransformerStack(Module):
    def __init__(self, dim: int, heads: int, depth: int, rng: np.random.Generator, ffn_hidden: int | None = None):
        if depth < 1:
            raise ConfigError(f"transformer depth must be >= 1, got {depth}")
        self.blocks = [TransformerBlock(dim, heads, rng, ffn_hidden) for _ in range(depth)]

    def __call__(self, x: Tensor, causal: bool = False) -> Tensor:
        for block in self.blocks:
            x = block(x, causal=causal)
        return x


class TimestampEncoding:
    """Fixed sinusoidal table mapping a frame index to an additive D-vector.

    Deterministic in (max_frames, dim); rows for distinct frame indices
    differ in at least one component.
    """

    def __init__(self, max_frames: int, dim: int):
        positions = np.arange(max_frames, dtype=np.float64)[:, None]
        channels = np.arange(dim, dtype=np.float64)[None, :]
        angles = positions / np.power(10000.0, 2.0 * (channels // 2) / dim)
        table = np.empty((max_frames, dim))
        table[:, 0::2] = np.sin(angles[:, 0::2])
        table[:, 1::2] = np.cos(angles[:, 1::2])
        self.max_frames = max_frames
        self.dim = dim
        self.table = table

    def row(self, t: int) -> np.ndarray:
        if not 0 <= t < self.max_frames:
            raise IndexError(
                f"frame index {t} outside encoding range [0, {self.max_frames})"
            )
        return self.table[t]

    def grid_offsets(self, frames: int, tokens_per_frame: int) -> np.ndarray:
        """(frames, tokens, dim) constant: every token gets its frame's row."""
        if frames > self.max_frames:
            raise IndexError(
                f"grid has {frames} frames but encoding covers {self.max_frames}"
            )
        return np.repeat(self.table[:frames, None, :], tokens_per_frame, axis=1)

    def flat_offsets(self, frames: int, tokens_per_frame: int) -> np.ndarray:
        """(frames * tokens, dim) constant, frame-major order."""
        return self.grid_offsets(frames, tokens_per_frame).reshape(
            frames * tokens_per_frame, self.dim
        )


def timestamp_apply(tokens: Tensor, t: int, enc: TimestampEncoding) -> Tensor:
    """Add frame t's encoding row to every token in an (N, D) block."""
    if tokens.shape[-1] != enc.dim:
        raise ConfigError(
            f"token dim {tokens.shape[-1]} does not match encoding dim {enc.dim}"
        )
    return tokens + enc.row(t)


def transformer_block(x: Tensor, params: TransformerBlock, causal: bool = False) -> Tensor:
    return params(x, causal=causal)
