"""Downstream-cost model, throughput benchmark, and the ablation sweep.

The cost model is the reason token budgets matter: a consumer that
attends over its whole context pays c_att*(M+L)^2 + c_ff*(M+L) for M
video tokens alongside L text tokens. The benchmark pairs each encoder
with a dummy quadratic-cost downstream stage so wall-clock throughput
reflects that scaling; the sweep trains every (variant, M, seed) cell on
shared per-seed datasets and emits one CSV row per cell.
"""

from __future__ import annotations

import csv
import io
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import Tensor
from .data import SyntheticTaskSpec, generate, split_examples
from .encoders import EncoderConfig, build_encoder, desk_config
from .training import TrainConfig, evaluate, train

ABLATION_CSV_HEADER = (
    "variant,M,seed,split,accuracy,loss,encode_ms,downstream_cost,samples_per_sec,status"
)
BUDGET_CSV_HEADER = "variant,M,mean_accuracy"


@dataclass(frozen=True)
class CostModel:
    """Quadratic downstream cost in the total token count M + L."""

    text_tokens: int = 100
    attention_coeff: float = 1.0
    feedforward_coeff: float = 0.0


def cost_estimate(model: CostModel, m: int) -> float:
    if m < 0:
        raise ValueError(f"token count must be >= 0, got {m}")
    total = m + model.text_tokens
    return model.attention_coeff * total * total + model.feedforward_coeff * total


@dataclass
class BenchRow:
    variant: str
    m: int
    encode_ms_first: float
    encode_ms_median: float
    downstream_ms_median: float
    downstream_cost: float
    samples_per_sec: float


@dataclass
class BenchReport:
    rows: list[BenchRow] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(
            ["variant", "M", "encode_ms_first", "encode_ms_median",
             "downstream_ms_median", "downstream_cost", "samples_per_sec"]
        )
        for r in self.rows:
            writer.writerow(
                [r.variant, r.m, f"{r.encode_ms_first:.3f}", f"{r.encode_ms_median:.3f}",
                 f"{r.downstream_ms_median:.3f}", f"{r.downstream_cost:.1f}",
                 f"{r.samples_per_sec:.2f}"]
            )
        return buf.getvalue()


def simulated_downstream(tokens: np.ndarray, text_tokens: int, rounds: int = 8,
                         width: int = 256, seed: int = 0) -> np.ndarray:
    """Dummy attention stack over M + L tokens; cost grows as (M+L)^2.

    Plain numpy on purpose: this stands in for the consumer model, not for
    anything trainable.
    """
    rng = np.random.default_rng(seed)
    m = tokens.shape[0]
    x = np.empty((m + text_tokens, width))
    proj = rng.normal(size=(tokens.shape[1], width)) / np.sqrt(tokens.shape[1])
    x[:m] = tokens @ proj
    x[m:] = rng.normal(size=(text_tokens, width))
    w = rng.normal(size=(width, width)) / np.sqrt(width)
    for _ in range(rounds):
        scores = x @ x.T / np.sqrt(width)
        scores -= scores.max(axis=-1, keepdims=True)
        att = np.exp(scores)
        att /= att.sum(axis=-1, keepdims=True)
        x = att @ x + x @ w
        x /= np.sqrt(np.mean(x * x) + 1e-9)
    return x


def bench_throughput(
    variants: list[str],
    m_values: list[int],
    frames: int = 8,
    tokens_per_frame: int = 16,
    channels: int = 64,
    trials: int = 5,
    cost_model: CostModel | None = None,
    seed: int = 0,
) -> BenchReport:
    """Median-of-trials wall-clock for encode plus the downstream stand-in."""
    if trials < 3:
        raise ValueError(f"need at least 3 trials for a stable median, got {trials}")
    cost_model = cost_model or CostModel()
    rng = np.random.default_rng(seed)
    grid = rng.normal(size=(1, frames, tokens_per_frame, channels))
    report = BenchReport()
    for variant in sorted(variants):
        for m in sorted(m_values):
            config = desk_config(
                variant, m=m, frames=frames, tokens_per_frame=tokens_per_frame,
                channels=channels,
            )
            encoder = build_encoder(config, np.random.default_rng(seed))
            encode_times, downstream_times = [], []
            for _ in range(trials):
                start = time.perf_counter()
                tokens = encoder.encode_batch(Tensor(grid))
                encode_times.append((time.perf_counter() - start) * 1e3)
                out = tokens.data[0]
                start = time.perf_counter()
                simulated_downstream(out, cost_model.text_tokens)
                downstream_times.append((time.perf_counter() - start) * 1e3)
            encode_med = float(np.median(encode_times))
            downstream_med = float(np.median(downstream_times))
            report.rows.append(
                BenchRow(
                    variant=variant,
                    m=config.m,
                    encode_ms_first=encode_times[0],
                    encode_ms_median=encode_med,
                    downstream_ms_median=downstream_med,
                    downstream_cost=cost_estimate(cost_model, config.m),
                    samples_per_sec=1e3 / (encode_med + downstream_med),
                )
            )
    report.rows.sort(key=lambda r: (r.variant, r.m))
    return report


# -- ablation sweep ---------------------------------------------------------------


@dataclass(frozen=True)
class AblationCell:
    variant: str
    m: int
    seed: int


@dataclass
class AblationPlan:
    """Everything one sweep needs; the dataset is shared across variants
    within a seed so encoders are compared on identical data."""

    task: SyntheticTaskSpec
    variants: list[str]
    m_values: list[int]
    seeds: list[int]
    train_size: int = 2000
    test_size: int = 500
    train_config: TrainConfig = field(default_factory=TrainConfig)
    encoder_overrides: dict = field(default_factory=dict)

    def cells(self) -> list[AblationCell]:
        return [
            AblationCell(v, m, s)
            for s in sorted(self.seeds)
            for v in sorted(self.variants)
            for m in sorted(self.m_values)
        ]


def make_cell_config(plan: AblationPlan, variant: str, m: int) -> EncoderConfig:
    config = desk_config(
        variant, m=m, frames=plan.task.frames,
        tokens_per_frame=plan.task.tokens_per_frame, channels=plan.task.channels,
    )
    overrides = dict(plan.encoder_overrides.get(variant, {}))
    if overrides:
        config = config.with_overrides(**overrides)
    return config


def run_cell(plan: AblationPlan, cell: AblationCell, with_timings: bool = False) -> dict:
    """Train/evaluate one (variant, M, seed) cell; errors become a row status."""
    try:
        task = replace(plan.task, seed=cell.seed, count=plan.train_size + plan.test_size)
        train_set, test_set = split_examples(generate(task), plan.train_size, plan.test_size)
        config = make_cell_config(plan, cell.variant, cell.m)
        train_cfg = replace(plan.train_config, seed=cell.seed)
        result = train(config, task.num_classes, train_set, train_cfg)
        report = evaluate(result.encoder, result.readout, test_set)
        row = {
            "variant": cell.variant,
            "M": config.m,
            "seed": cell.seed,
            "split": "test",
            "accuracy": f"{report.accuracy:.6f}",
            "loss": f"{report.mean_loss:.6f}",
            "encode_ms": "",
            "downstream_cost": f"{cost_estimate(CostModel(), config.m):.1f}",
            "samples_per_sec": "",
            "status": "ok",
        }
        if with_timings:
            grids = np.stack([e.grid.tokens.data for e in test_set[:32]])
            start = time.perf_counter()
            result.encoder.encode_batch(Tensor(grids))
            elapsed = time.perf_counter() - start
            row["encode_ms"] = f"{1e3 * elapsed / len(grids):.3f}"
            row["samples_per_sec"] = f"{len(grids) / elapsed:.2f}"
        return row
    except Exception as err:  # sweep must survive individual cell failures
        return {
            "variant": cell.variant,
            "M": cell.m,
            "seed": cell.seed,
            "split": "test",
            "accuracy": "",
            "loss": "",
            "encode_ms": "",
            "downstream_cost": "",
            "samples_per_sec": "",
            "status": f"error: {err}",
        }


def _run_cell_star(args) -> dict:
    return run_cell(*args)


def run_ablation(plan: AblationPlan, jobs: int = 1, with_timings: bool = False) -> tuple[str, str]:
    """Returns (runs_csv, budget_curve_csv) as strings.

    Accuracy/loss columns are byte-deterministic given the plan; timing
    columns stay empty unless with_timings is set.
    """
    cells = plan.cells()
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_cell_star, [(plan, c, with_timings) for c in cells]))
    else:
        rows = [run_cell(plan, c, with_timings) for c in cells]

    rows.sort(key=lambda r: (r["variant"], int(r["M"]), int(r["seed"])))
    buf = io.StringIO()
    writer = csv.DictWriter(
        buf, fieldnames=ABLATION_CSV_HEADER.split(","), lineterminator="\n"
    )
    writer.writeheader()
    writer.writerows(rows)

    curve = io.StringIO()
    curve_writer = csv.writer(curve, lineterminator="\n")
    curve_writer.writerow(BUDGET_CSV_HEADER.split(","))
    grouped: dict[tuple[str, int], list[float]] = {}
    for row in rows:
        if row["status"] == "ok":
            grouped.setdefault((row["variant"], int(row["M"])), []).append(
                float(row["accuracy"])
            )
    for (variant, m), accs in sorted(grouped.items()):
        curve_writer.writerow([variant, m, f"{np.mean(accs):.6f}"])
    return buf.getvalue(), curve.getvalue()
