"""Supervised training/evaluation on top of any temporal encoder.

The readout deliberately stays tiny — mean over the M video tokens, then
one linear map to class logits — so its capacity does not depend on the
token budget and accuracy differences are attributable to the encoder.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor, log_softmax, tmean, tsum
from .encoders import EncoderConfig, TemporalEncoder, build_encoder
from .errors import NumericError, TrainingDiverged
from .data import LabeledExample
from .nn import Linear, Module


class Readout(Module):
    """Mean over tokens, then a single linear layer D -> classes."""

    def __init__(self, channels: int, classes: int, rng: np.random.Generator):
        self.classes = classes
        self.linear = Linear(channels, classes, rng)

    def __call__(self, video_tokens: Tensor) -> Tensor:
        return self.linear(tmean(video_tokens, axis=-2))


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-softmax of the true class; log-sum-exp stable."""
    labels = np.asarray(labels)
    b, k = logits.shape
    if labels.shape != (b,):
        raise ValueError(f"expected {b} labels, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(
            f"labels must lie in [0, {k}), got range "
            f"[{labels.min()}, {labels.max()}]"
        )
    onehot = np.zeros((b, k))
    onehot[np.arange(b), labels] = 1.0
    return tsum(log_softmax(logits) * onehot) * (-1.0 / b)


# -- optimizers ---------------------------------------------------------------


class Sgd:
    def __init__(self, params: list[Tensor], lr: float):
        self.params = params
        self.lr = lr

    def step(self) -> None:
        for p in self.params:
            if p.grad is not None:
                p.data -= self.lr * p.grad

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


class Adam:
    def __init__(self, params: list[Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def step(self) -> None:
        self.t += 1
        bias1 = 1.0 - self.beta1 ** self.t
        bias2 = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            p.data -= self.lr * (self.m[i] / bias1) / (np.sqrt(self.v[i] / bias2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def global_grad_norm(params: list[Tensor]) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    return float(np.sqrt(total))


def clip_gradients(params: list[Tensor], max_norm: float) -> float:
    """Scale all gradients so their global norm is at most max_norm."""
    norm = global_grad_norm(params)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


# -- configs and reports --------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 3e-3
    optimizer: str = "adam"
    seed: int = 0
    clip_norm: float = 1.0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError(f"learning rate must be >= 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch_size}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")


@dataclass
class EvalReport:
    accuracy: float
    mean_loss: float
    per_class_accuracy: list[float]
    wall_seconds: float
    config: dict = field(default_factory=dict)

    def to_json_line(self) -> str:
        return json.dumps(
            {
                "accuracy": self.accuracy,
                "mean_loss": self.mean_loss,
                "per_class_accuracy": self.per_class_accuracy,
                "wall_seconds": self.wall_seconds,
                "config": self.config,
            },
            sort_keys=True,
        )

    @staticmethod
    def from_json_line(line: str) -> "EvalReport":
        obj = json.loads(line)
        return EvalReport(
            accuracy=obj["accuracy"],
            mean_loss=obj["mean_loss"],
            per_class_accuracy=obj["per_class_accuracy"],
            wall_seconds=obj["wall_seconds"],
            config=obj.get("config", {}),
        )


@dataclass
class TrainResult:
    encoder: TemporalEncoder
    readout: Readout
    history: list[EvalReport]
    first_batch_loss: float


# -- batching -------------------------------------------------------------------


def stack_examples(examples: list[LabeledExample]) -> tuple[np.ndarray, np.ndarray]:
    grids = np.stack([e.grid.tokens.data for e in examples])
    labels = np.array([e.label for e in examples], dtype=np.int64)
    return grids, labels


def _forward_logits(encoder: TemporalEncoder, readout: Readout, batch: np.ndarray) -> Tensor:
    tokens = encoder.encode_batch(Tensor(batch))
    return readout(tokens)


def evaluate(encoder: TemporalEncoder, readout: Readout,
             examples: list[LabeledExample], batch_size: int = 256,
             config_echo: dict | None = None) -> EvalReport:
    """Forward-only pass; mutates nothing. Argmax ties break toward the
    lower class index (numpy argmax takes the first maximum)."""
    start = time.perf_counter()
    grids, labels = stack_examples(examples)
    k = readout.classes
    correct = np.zeros(k)
    totals = np.zeros(k)
    loss_sum = 0.0
    for lo in range(0, len(examples), batch_size):
        hi = min(lo + batch_size, len(examples))
        logits = _forward_logits(encoder, readout, grids[lo:hi])
        loss_sum += cross_entropy(logits, labels[lo:hi]).item() * (hi - lo)
        predictions = np.argmax(logits.data, axis=-1)
        for cls in range(k):
            mask = labels[lo:hi] == cls
            totals[cls] += mask.sum()
            correct[cls] += (predictions[mask] == cls).sum()
    per_class = [
        float(correct[c] / totals[c]) if totals[c] else 0.0 for c in range(k)
    ]
    return EvalReport(
        accuracy=float(correct.sum() / max(totals.sum(), 1)),
        mean_loss=loss_sum / max(len(examples), 1),
        per_class_accuracy=per_class,
        wall_seconds=time.perf_counter() - start,
        config=dict(config_echo or {}),
    )


def train(encoder: TemporalEncoder | EncoderConfig, readout: Readout | int,
          examples: list[LabeledExample], cfg: TrainConfig) -> TrainResult:
    """Deterministic given (cfg.seed, dataset): init, shuffling and updates
    all draw from one seeded generator. Raises TrainingDiverged with the
    failing (epoch, batch, loss) if the loss goes non-finite."""
    if not examples:
        raise ValueError("training dataset is empty")
    rng = np.random.default_rng(cfg.seed)
    if isinstance(encoder, EncoderConfig):
        encoder = build_encoder(encoder, rng)
    channels = examples[0].grid.channels
    if isinstance(readout, int):
        readout = Readout(channels, readout, rng)

    grids, labels = stack_examples(examples)
    params = encoder.parameters() + readout.parameters()
    if cfg.optimizer == "adam":
        opt = Adam(params, cfg.learning_rate)
    else:
        opt = Sgd(params, cfg.learning_rate)

    history: list[EvalReport] = []
    first_batch_loss: float | None = None
    n = len(examples)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for batch_index, lo in enumerate(range(0, n, cfg.batch_size)):
            idx = order[lo:lo + cfg.batch_size]
            try:
                logits = _forward_logits(encoder, readout, grids[idx])
                loss = cross_entropy(logits, labels[idx])
            except NumericError as err:
                raise TrainingDiverged(epoch, batch_index, float("nan")) from err
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDiverged(epoch, batch_index, value)
            if first_batch_loss is None:
                first_batch_loss = value
            loss.backward()
            clip_gradients(params, cfg.clip_norm)
            opt.step()
            opt.zero_grad()
        history.append(
            evaluate(encoder, readout, examples,
                     config_echo={"epoch": epoch, "train_config": vars(cfg)})
        )
    return TrainResult(encoder, readout, history, first_batch_loss)


# -- checkpointing ----------------------------------------------------------------


def save_checkpoint(path, encoder: TemporalEncoder, readout: Readout,
                    meta: dict | None = None) -> None:
    arrays = {f"encoder.{k}": t.data for k, t in encoder.named_parameters()}
    arrays.update({f"readout.{k}": t.data for k, t in readout.named_parameters()})
    arrays["__channels"] = np.array([readout.linear.weight.shape[0]])
    arrays["__classes"] = np.array([readout.classes])
    np.savez(path, **arrays)
    if meta is not None:
        Path(str(path) + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_checkpoint(path, encoder: TemporalEncoder) -> Readout:
    """Restore parameters into a freshly built encoder; returns the readout."""
    blob = np.load(path)
    channels = int(blob["__channels"][0])
    classes = int(blob["__classes"][0])
    readout = Readout(channels, classes, np.random.default_rng(0))
    for prefix, module in (("encoder.", encoder), ("readout.", readout)):
        for name, tensor in module.named_parameters():
            key = prefix + name
            if key not in blob:
                raise KeyError(f"checkpoint is missing parameter {key}")
            if blob[key].shape != tensor.data.shape:
                raise ValueError(
                    f"checkpoint parameter {key} has shape {blob[key].shape}, "
                    f"model expects {tensor.data.shape}"
                )
            tensor.data[...] = blob[key]
    return readout
