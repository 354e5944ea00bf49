"""Token-memory encoders: read/write selection contracts, group isolation,
order sensitivity, and the grouped/vanilla configuration equivalence."""

import numpy as np
import pytest

from videotok.autodiff import Tensor
from videotok.encoders import TokenGrid
from videotok.errors import ConfigError
from videotok.ttm import (
    GroupedMemory,
    GroupedTtmEncoder,
    TokenLearnerSelector,
    TtmCore,
    VanillaTtmEncoder,
    grouped_ttm_step,
    ttm_process,
    ttm_read,
    ttm_write,
)


def rng(seed=0):
    return np.random.default_rng(seed)


def make_core(channels=6, slots=4, read_size=3, seed=0):
    return TtmCore(channels, slots, read_size, layers=1, heads=2, rng=rng(seed))


def zero_selector(selector):
    for _, p in selector.named_parameters():
        p.data[:] = 0.0


def make_grid(t=4, n=5, d=6, seed=1, scale=1.0):
    return TokenGrid(Tensor(rng(seed).normal(scale=scale, size=(t, n, d))))


# -- read / process / write ---------------------------------------------------


def test_read_zero_selector_returns_candidate_mean():
    core = make_core()
    zero_selector(core.read_selector)
    memory = Tensor(rng(2).normal(size=(4, 6)))
    inputs = Tensor(rng(3).normal(size=(2, 6)))
    reads = ttm_read(memory, inputs, core).data
    mean = np.concatenate([memory.data, inputs.data]).mean(axis=0)
    for row in reads:
        np.testing.assert_allclose(row, mean, atol=1e-12)


def test_read_single_candidate_degenerate_softmax():
    core = TtmCore(6, slots=1, read_size=1, layers=1, heads=2, rng=rng(4))
    token = rng(5).normal(size=(1, 6))
    out = core.read_selector.select(Tensor(token))[0].data
    np.testing.assert_allclose(out, token, atol=1e-12)


def test_read_convex_hull_bound():
    core = make_core(seed=6)
    for seed in range(5):
        memory = Tensor(rng(10 + seed).normal(scale=2, size=(4, 6)))
        inputs = Tensor(rng(20 + seed).normal(scale=2, size=(3, 6)))
        reads = ttm_read(memory, inputs, core).data
        cand = np.concatenate([memory.data, inputs.data])
        assert np.all(reads >= cand.min(axis=0) - 1e-9)
        assert np.all(reads <= cand.max(axis=0) + 1e-9)


def test_process_zero_projections_is_identity():
    core = make_core(seed=7)
    for block in core.processor.blocks:
        block.zero_output_projections()
    tokens = rng(8).normal(size=(3, 6))
    np.testing.assert_array_equal(ttm_process(Tensor(tokens), core).data, tokens)


def test_process_preserves_shape():
    core = make_core(seed=9)
    for r in (1, 2, 5):
        out = ttm_process(Tensor(rng(r).normal(size=(r, 6))), core)
        assert out.shape == (r, 6)


def test_write_zero_selector_returns_candidate_mean():
    core = make_core(seed=11)
    zero_selector(core.write_selector)
    memory = Tensor(rng(12).normal(size=(4, 6)))
    processed = Tensor(rng(13).normal(size=(3, 6)))
    inputs = Tensor(rng(14).normal(size=(2, 6)))
    new = ttm_write(memory, processed, inputs, core).data
    assert new.shape == (4, 6)
    mean = np.concatenate([memory.data, processed.data, inputs.data]).mean(axis=0)
    for row in new:
        np.testing.assert_allclose(row, mean, atol=1e-12)


def test_write_convex_hull_bound():
    core = make_core(seed=15)
    memory = Tensor(rng(16).normal(scale=3, size=(4, 6)))
    processed = Tensor(rng(17).normal(scale=3, size=(3, 6)))
    inputs = Tensor(rng(18).normal(scale=3, size=(2, 6)))
    new = ttm_write(memory, processed, inputs, core).data
    cand = np.concatenate([memory.data, processed.data, inputs.data])
    assert np.all(new >= cand.min(axis=0) - 1e-9)
    assert np.all(new <= cand.max(axis=0) + 1e-9)


def test_selector_rows_sum_to_one():
    selector = TokenLearnerSelector(6, 4, rng(19))
    _, weights = selector.select(Tensor(rng(20).normal(size=(7, 6))))
    np.testing.assert_allclose(weights.data.sum(axis=-1), 1.0, atol=1e-6)


# -- vanilla TTM -----------------------------------------------------------------


def test_vanilla_single_frame_matches_manual_pipeline():
    enc = VanillaTtmEncoder(m=3, channels=6, memory_slots=4, rng=rng(21),
                            read_size=3, layers=1, heads=2)
    grid = make_grid(t=1, n=5, d=6, seed=22)
    out = enc.encode(grid).tokens.data
    memory = Tensor(np.zeros((4, 6)))
    stepped = ttm_write(
        memory,
        ttm_process(ttm_read(memory, grid.tokens[0], enc.core), enc.core),
        grid.tokens[0],
        enc.core,
    )
    manual, _ = enc.pool.select(stepped)
    np.testing.assert_allclose(out, manual.data, atol=1e-13)


def test_vanilla_is_sensitive_to_frame_order():
    enc = VanillaTtmEncoder(m=3, channels=6, memory_slots=8, rng=rng(23),
                            read_size=3, layers=1, heads=2)
    grid = make_grid(t=4, n=5, d=6, seed=24)
    swapped = grid.tokens.data.copy()
    swapped[[0, 2]] = swapped[[2, 0]]
    a = enc.encode(grid).tokens.data
    b = enc.encode(TokenGrid(Tensor(swapped))).tokens.data
    assert not np.allclose(a, b)


def test_vanilla_output_shape_and_finite():
    enc = VanillaTtmEncoder(m=5, channels=6, memory_slots=8, rng=rng(25),
                            read_size=3, layers=1, heads=2)
    out = enc.encode(make_grid(seed=26)).tokens.data
    assert out.shape == (5, 6)
    assert np.all(np.isfinite(out))


# -- grouped TTM ------------------------------------------------------------------


def make_grouped(m=4, channels=6, g=2, seed=27, timestamp=True):
    return GroupedTtmEncoder(m=m, channels=channels, group_slots=g, rng=rng(seed),
                             read_size=3, layers=1, heads=2, timestamp=timestamp)


def test_grouped_step_group_isolation_is_bit_exact():
    enc = make_grouped()
    grid = make_grid(t=3, n=5, d=6, seed=28)
    base = enc.final_memory(grid).slots.data
    for group in range(5):
        bumped = grid.tokens.data.copy()
        bumped[:, group] += 0.25
        mem = enc.final_memory(TokenGrid(Tensor(bumped))).slots.data
        others = [j for j in range(5) if j != group]
        assert np.array_equal(mem[others], base[others])
        assert not np.allclose(mem[group], base[group])


def test_grouped_step_zero_selectors_give_candidate_means():
    enc = make_grouped(seed=29, timestamp=False)
    zero_selector(enc.core.read_selector)
    zero_selector(enc.core.write_selector)
    for block in enc.core.processor.blocks:
        block.zero_output_projections()
    memory = GroupedMemory(Tensor(rng(30).normal(size=(5, 2, 6))))
    frame = Tensor(rng(31).normal(size=(5, 6)))
    new = grouped_ttm_step(memory, frame, 0, enc).slots.data
    for j in range(5):
        first = np.concatenate([memory.slots.data[j], frame.data[j:j + 1]])
        reads = np.repeat(first.mean(axis=0)[None], 3, axis=0)  # zero read + identity proc
        cand = np.concatenate([memory.slots.data[j], reads, frame.data[j:j + 1]])
        for slot in new[j]:
            np.testing.assert_allclose(slot, cand.mean(axis=0), atol=1e-12)


def test_grouped_step_preserves_memory_shape():
    enc = make_grouped(seed=32)
    memory = GroupedMemory(Tensor(rng(33).normal(size=(5, 2, 6))))
    frame = Tensor(rng(34).normal(size=(5, 6)))
    out = grouped_ttm_step(memory, frame, 1, enc)
    assert out.slots.shape == (5, 2, 6)
    assert out.total_slots == 10


def test_grouped_step_rejects_group_count_mismatch():
    enc = make_grouped(seed=35)
    memory = GroupedMemory(Tensor(np.zeros((5, 2, 6))))
    with pytest.raises(ConfigError, match="groups"):
        grouped_ttm_step(memory, Tensor(np.zeros((4, 6))), 0, enc)


def test_grouped_batched_step_matches_per_group_loop():
    enc = make_grouped(seed=36)
    memory = rng(37).normal(size=(5, 2, 6))
    frame = rng(38).normal(size=(5, 6))
    batched = grouped_ttm_step(
        GroupedMemory(Tensor(memory)), Tensor(frame), 2, enc
    ).slots.data
    stamped = frame + enc.positional.row(2)
    for j in range(5):
        single = enc.core.step(
            Tensor(memory[j][None]), Tensor(stamped[j][None, None])
        ).data[0]
        np.testing.assert_allclose(batched[j], single, atol=1e-13)


def test_grouped_timestamp_sensitivity():
    enc = make_grouped(seed=39)
    noise = rng(40).normal(scale=0.1, size=(4, 3, 6))
    content = rng(41).normal(size=(3, 6))
    early = noise.copy()
    early[0] += content
    early[1] += content
    late = noise.copy()
    late[2] += content
    late[3] += content
    a = enc.encode(TokenGrid(Tensor(early))).tokens.data
    b = enc.encode(TokenGrid(Tensor(late))).tokens.data
    assert not np.allclose(a, b)


def test_grouped_output_changes_under_frame_swap():
    enc = make_grouped(seed=42)
    grid = make_grid(t=4, n=3, d=6, seed=43)
    swapped = grid.tokens.data.copy()
    swapped[[1, 3]] = swapped[[3, 1]]
    assert not np.allclose(
        enc.encode(grid).tokens.data,
        enc.encode(TokenGrid(Tensor(swapped))).tokens.data,
    )


def test_grouped_single_group_equals_vanilla_bit_exact():
    # One spatial token per frame, no timestamp: the grouped recurrence with
    # G slots is the same computation as a vanilla memory of N*G = G slots.
    g = 3
    grouped = GroupedTtmEncoder(m=2, channels=6, group_slots=g, rng=rng(44),
                                read_size=3, layers=1, heads=2, timestamp=False)
    vanilla = VanillaTtmEncoder(m=2, channels=6, memory_slots=g, rng=rng(44),
                                read_size=3, layers=1, heads=2)
    grid = make_grid(t=5, n=1, d=6, seed=45)
    assert np.array_equal(
        grouped.encode(grid).tokens.data, vanilla.encode(grid).tokens.data
    )


def test_grouped_memory_slot_count_conserved_across_steps():
    enc = make_grouped(seed=46)
    grid = make_grid(t=6, n=4, d=6, seed=47)
    mem = GroupedMemory(Tensor(np.zeros((4, 2, 6))))
    for t in range(6):
        mem = grouped_ttm_step(mem, grid.tokens[t], t, enc)
        assert mem.slots.shape == (4, 2, 6)


def test_grouped_pool_attention_rows_sum_to_one():
    enc = make_grouped(seed=48)
    grid = make_grid(t=3, n=4, d=6, seed=49)
    _, weights = enc.forward_batch(
        Tensor(grid.tokens.data[None])
    )
    np.testing.assert_allclose(weights.data.sum(axis=-1), 1.0, atol=1e-6)
