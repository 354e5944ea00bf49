"""Finite-difference verification of analytic gradients.

The oracle is central differences on the forward pass treated as a black
box: f'(x) ~ (f(x+h) - f(x-h)) / 2h at h=1e-5 in float64. Every encoder
variant is checked over all of its parameters and the input grid against
a fixed random probe loss.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import Tensor, tsum
from .encoders import EncoderConfig, TemporalEncoder, build_encoder

DEFAULT_STEP = 1e-5
DEFAULT_TOLERANCE = 1e-4


@dataclass
class GradcheckResult:
    label: str
    max_rel_error: float
    worst_tensor: str
    worst_index: int
    tolerance: float
    checked: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def __str__(self) -> str:
        status = "ok" if self.passed else "FAIL"
        return (
            f"{self.label:32s} {status:4s} max_rel_err={self.max_rel_error:.3e} "
            f"({self.checked} values, worst: {self.worst_tensor}[{self.worst_index}])"
        )


def relative_error(analytic: float, numeric: float) -> float:
    # Unit floor: exactly-zero gradients meet finite-difference roundoff
    # as an absolute comparison rather than a 0/0 ratio.
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1.0)


def finite_difference_check(
    forward: Callable[[], Tensor],
    watched: list[tuple[str, Tensor]],
    label: str = "gradcheck",
    step: float = DEFAULT_STEP,
    tolerance: float = DEFAULT_TOLERANCE,
) -> GradcheckResult:
    """Compare backward() gradients of ``forward()`` against central
    differences for every element of every watched tensor."""
    loss = forward()
    loss.backward()
    analytic = {name: np.array(t.grad_or_zeros()) for name, t in watched}
    for _, t in watched:
        t.grad = None

    worst = (0.0, "", -1)
    checked = 0
    for name, tensor in watched:
        flat = tensor.data.reshape(-1)
        grads = analytic[name].reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            upper = forward().item()
            flat[i] = original - step
            lower = forward().item()
            flat[i] = original
            numeric = (upper - lower) / (2.0 * step)
            err = relative_error(grads[i], numeric)
            checked += 1
            if err > worst[0]:
                worst = (err, name, i)
    return GradcheckResult(label, worst[0], worst[1], worst[2], tolerance, checked)


def probe_loss(encoder: TemporalEncoder, grid: Tensor, probe: np.ndarray) -> Tensor:
    """Scalar projection of the encoder output onto fixed random weights."""
    out = encoder.encode_batch(grid)
    return tsum(out * probe)


def encoder_gradcheck(
    config: EncoderConfig,
    frames: int,
    tokens_per_frame: int,
    seed: int = 7,
    label: str | None = None,
    step: float = DEFAULT_STEP,
    tolerance: float = DEFAULT_TOLERANCE,
) -> GradcheckResult:
    """Gradcheck one encoder variant over its parameters and the input grid."""
    rng = np.random.default_rng(seed)
    encoder = build_encoder(config, rng)
    grid = Tensor(
        rng.uniform(-1.0, 1.0, size=(1, frames, tokens_per_frame, config.channels)),
        requires_grad=True,
    )
    probe = np.random.default_rng(seed + 1).normal(size=(1, config.m, config.channels))
    watched = [("input_grid", grid)] + list(encoder.named_parameters())
    return finite_difference_check(
        lambda: probe_loss(encoder, grid, probe),
        watched,
        label=label or config.variant,
        step=step,
        tolerance=tolerance,
    )


def default_suite() -> list[tuple[str, EncoderConfig, int, int]]:
    """(label, config, frames, tokens-per-frame) rows at gradcheck scale."""
    rows: list[tuple[str, EncoderConfig, int, int]] = [
        ("mean_pool", EncoderConfig("mean_pool", m=3, channels=4), 2, 3),
        ("sum_pool", EncoderConfig("sum_pool", m=3, channels=4), 2, 3),
        ("fixed_window_pool", EncoderConfig("fixed_window_pool", m=4, channels=4, window=2), 2, 4),
        ("per_frame_pool", EncoderConfig("per_frame_pool", m=4, channels=4, per_frame_k=2), 2, 3),
        ("transformer_last_m",
         EncoderConfig("transformer_last_m", m=2, channels=4, layers=2, heads=2), 2, 3),
        ("tokenlearner_pool", EncoderConfig("tokenlearner_pool", m=2, channels=4), 2, 3),
        ("tokenlearner_pool+timestamp",
         EncoderConfig("tokenlearner_pool", m=2, channels=4, timestamp=True), 2, 3),
        ("perceiver_pool", EncoderConfig("perceiver_pool", m=2, channels=4), 2, 3),
        ("vanilla_ttm",
         EncoderConfig("vanilla_ttm", m=4, channels=8, memory_slots=8,
                       read_size=3, layers=1, heads=2), 3, 4),
        ("grouped_ttm",
         EncoderConfig("grouped_ttm", m=4, channels=8, group_slots=2,
                       read_size=3, layers=1, heads=2), 3, 4),
        ("grouped_ttm-no-timestamp",
         EncoderConfig("grouped_ttm", m=4, channels=8, group_slots=2,
                       read_size=3, layers=1, heads=2, timestamp=False), 3, 4),
    ]
    return rows


def run_suite(
    rows: list[tuple[str, EncoderConfig, int, int]] | None = None,
    step: float = DEFAULT_STEP,
    tolerance: float = DEFAULT_TOLERANCE,
) -> list[GradcheckResult]:
    rows = default_suite() if rows is None else rows
    return [
        encoder_gradcheck(config, frames, tokens, label=label, step=step, tolerance=tolerance)
        for label, config, frames, tokens in rows
    ]
