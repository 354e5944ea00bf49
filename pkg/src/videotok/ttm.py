"""Recurrent temporal encoders built on an explicit token memory.

Per frame, the core reads a handful of tokens from [memory || input],
runs them through a small transformer processor, and rewrites the whole
memory by soft-selecting from [memory || processed || input]. The vanilla
encoder keeps one undivided memory; the grouped encoder keeps G slots per
spatial token index and updates each group only from its own token, with
a frame-index encoding added to inputs so memory contents retain temporal
order. Both finish by attentionally pooling the final memory to M tokens.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, concat, matmul, reshape, softmax, swapaxes
from .encoders import AttentionMap, TemporalEncoder, TokenGrid
from .errors import ConfigError
from .nn import Mlp, Module, TimestampEncoding, TransformerStack


@dataclass(frozen=True)
class GroupedMemory:
    """Per-group recurrent state, shape (N groups, G slots, D)."""

    slots: Tensor

    @property
    def groups(self) -> int:
        return self.slots.shape[0]

    @property
    def slots_per_group(self) -> int:
        return self.slots.shape[1]

    @property
    def total_slots(self) -> int:
        return self.groups * self.slots_per_group


class TokenLearnerSelector(Module):
    """Soft-selects a fixed number of tokens from a candidate set.

    Scores come from a per-token MLP (D -> 2*out -> out); the softmax runs
    over candidates, so each selected token is a convex combination of the
    candidates and every attention row sums to 1.
    """

    def __init__(self, channels: int, out_tokens: int, rng: np.random.Generator):
        if out_tokens < 1:
            raise ConfigError(f"selector must emit >= 1 tokens, got {out_tokens}")
        self.out_tokens = out_tokens
        self.scorer = Mlp(channels, 2 * out_tokens, out_tokens, rng)

    def select(self, candidates: Tensor) -> tuple[Tensor, Tensor]:
        """(..., P, D) -> ((..., out, D) picked, (..., out, P) weights)."""
        scores = self.scorer(candidates)
        weights = softmax(swapaxes(scores, -1, -2))
        return matmul(weights, candidates), weights


class TtmCore(Module):
    """Shared read/process/write machinery for one memory of K slots."""

    def __init__(self, channels: int, slots: int, read_size: int,
                 layers: int, heads: int, rng: np.random.Generator,
                 ffn_hidden: int | None = None):
        self.read_selector = TokenLearnerSelector(channels, read_size, rng)
        self.processor = TransformerStack(channels, heads, layers, rng, ffn_hidden)
        self.write_selector = TokenLearnerSelector(channels, slots, rng)
        self.slots = slots
        self.read_size = read_size

    def step(self, memory: Tensor, inputs: Tensor) -> Tensor:
        """((B, K, D) memory, (B, P, D) inputs) -> (B, K, D) new memory.

        The old memory is a candidate set for the write, not an additive
        target: every slot is rewritten each step.
        """
        candidates = concat([memory, inputs], axis=-2)
        read, _ = self.read_selector.select(candidates)
        processed = self.processor(read, causal=False)
        write_candidates = concat([memory, processed, inputs], axis=-2)
        new_memory, _ = self.write_selector.select(write_candidates)
        return new_memory


class VanillaTtmEncoder(TemporalEncoder):
    """One undivided memory over all frames; no frame-index encoding."""

    def __init__(self, m: int, channels: int, memory_slots: int,
                 rng: np.random.Generator, read_size: int = 5,
                 layers: int = 1, heads: int = 4, ffn_hidden: int | None = None):
        self.m = m
        self.channels = channels
        self.memory_slots = memory_slots
        self.core = TtmCore(channels, memory_slots, read_size, layers, heads, rng, ffn_hidden)
        self.pool = TokenLearnerSelector(channels, m, rng)

    def run_memory_batch(self, x: Tensor) -> Tensor:
        b, t, n, d = x.shape
        if d != self.channels:
            raise ConfigError(f"grid channels {d} do not match encoder channels {self.channels}")
        memory = Tensor(np.zeros((b, self.memory_slots, d)))
        for step in range(t):
            memory = self.core.step(memory, x[:, step])
        return memory

    def forward_batch(self, x: Tensor) -> tuple[Tensor, Tensor]:
        memory = self.run_memory_batch(x)
        tokens, weights = self.pool.select(memory)
        return tokens, weights


class GroupedTtmEncoder(TemporalEncoder):
    """Separate memory of G slots per spatial token index (N groups).

    Group j is updated only from input token j; parameters are shared
    across groups and every group runs through the core in one batched
    call, which is arithmetically identical to a per-group loop.
    """

    def __init__(self, m: int, channels: int, group_slots: int,
                 rng: np.random.Generator, read_size: int = 3,
                 layers: int = 1, heads: int = 4, ffn_hidden: int | None = None,
                 timestamp: bool = True, max_frames: int = 64):
        self.m = m
        self.channels = channels
        self.group_slots = group_slots
        self.core = TtmCore(channels, group_slots, read_size, layers, heads, rng, ffn_hidden)
        self.pool = TokenLearnerSelector(channels, m, rng)
        self.timestamp = timestamp
        self.positional = TimestampEncoding(max_frames, channels)

    def step_batch(self, memory: Tensor, frame: Tensor, t: int) -> Tensor:
        """((B, N, G, D) memory, (B, N, D) frame tokens) -> new memory."""
        b, n, g, d = memory.shape
        if frame.shape[-2] != n:
            raise ConfigError(
                f"frame has {frame.shape[-2]} tokens but memory has {n} groups"
            )
        if self.timestamp:
            frame = frame + self.positional.row(t)
        grouped_memory = reshape(memory, (b * n, g, d))
        grouped_inputs = reshape(frame, (b * n, 1, d))
        new_memory = self.core.step(grouped_memory, grouped_inputs)
        return reshape(new_memory, (b, n, g, d))

    def run_memory_batch(self, x: Tensor) -> Tensor:
        b, t, n, d = x.shape
        if d != self.channels:
            raise ConfigError(f"grid channels {d} do not match encoder channels {self.channels}")
        memory = Tensor(np.zeros((b, n, self.group_slots, d)))
        for step in range(t):
            memory = self.step_batch(memory, x[:, step], step)
        return memory

    def final_memory(self, grid: TokenGrid) -> GroupedMemory:
        """Run the recurrence and return the pre-pooling memory state."""
        t, n, d = grid.tokens.shape
        memory = self.run_memory_batch(reshape(grid.tokens, (1, t, n, d)))
        return GroupedMemory(reshape(memory, memory.shape[1:]))

    def forward_batch(self, x: Tensor) -> tuple[Tensor, Tensor]:
        b, _, n, d = x.shape
        memory = self.run_memory_batch(x)
        flat = reshape(memory, (b, n * self.group_slots, d))
        tokens, weights = self.pool.select(flat)
        return tokens, weights


# -- functional forms -------------------------------------------------------


def ttm_read(memory_tokens: Tensor, input_tokens: Tensor, core: TtmCore) -> Tensor:
    """Soft-select read_size tokens from [memory || input], both (.., D)."""
    candidates = concat([memory_tokens, input_tokens], axis=-2)
    picked, _ = core.read_selector.select(candidates)
    return picked

def ttm_process(read_tokens: Tensor, core: TtmCore) -> Tensor:
    return core.processor(read_tokens, causal=False)

def ttm_write(memory_tokens: Tensor, processed: Tensor, input_tokens: Tensor,
              core: TtmCore) -> Tensor:
    candidates = concat([memory_tokens, processed, input_tokens], axis=-2)
    new_memory, _ = core.write_selector.select(candidates)
    return new_memory

def grouped_ttm_step(memory: GroupedMemory, frame_tokens: Tensor, t: int,
                     encoder: GroupedTtmEncoder) -> GroupedMemory:
    """Advance one grid's grouped memory by a single frame."""
    n, g, d = memory.slots.shape
    if frame_tokens.shape[0] != n:
        raise ConfigError(
            f"frame has {frame_tokens.shape[0]} tokens but memory has {n} groups"
        )
    batched = encoder.step_batch(
        reshape(memory.slots, (1, n, g, d)),
        reshape(frame_tokens, (1, n, d)),
        t,
    )
    return GroupedMemory(reshape(batched, (n, g, d)))

def final_memory_pool(encoder: TemporalEncoder, memory_tokens: Tensor) -> tuple[Tensor, AttentionMap]:
    """Pool a flattened (K, D) memory down to the encoder's M tokens."""
    tokens, weights = encoder.pool.select(memory_tokens)
    return tokens, AttentionMap(weights)
