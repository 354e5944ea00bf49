"""Synthetic token grids, labeled temporal-reasoning tasks, and grid files.

Generation is a pure function of (task spec, seed): every sample draws
its randomness from a generator keyed on (seed, sample index), so a
dataset is bit-identical however and wherever it is produced.

Tasks:

* ``temporal_order`` — two cue vectors are planted at one spatial index in
  two different frames; the label says which came first. Consecutive
  samples are exact order-flipped twins, so any function of the frame
  multiset (mean or sum pooling composed with any readout) carries zero
  label information by construction.
* ``spatial_locate`` — an index-specific cue appears at spatial index j in
  every frame; label = j. Order-agnostic pooling can solve it.
* ``group_recall`` — an index-specific cue appears in group j in the first
  frame only, followed by heavy distractors in the other groups; label = j.
  Solving it with a recurrent memory requires retaining group j's content.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .encoders import TokenGrid
from .errors import FormatError

TASKS = ("temporal_order", "spatial_locate", "group_recall")

MAGIC = b"TGRD"
VERSION = 1
DTYPE_F64 = 1
_HEADER = struct.Struct("<4sIIIIBB")
_LABEL = struct.Struct("<I")

DISTRACTOR_GAIN = 1.0  # group_recall distractor noise scale, in cue units


@dataclass(frozen=True)
class SyntheticTaskSpec:
    """Deterministic description of a labeled synthetic dataset."""

    task: str
    frames: int = 8
    tokens_per_frame: int = 16
    channels: int = 64
    cue_magnitude: float = 1.0
    noise_scale: float = 0.1
    count: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if self.task == "temporal_order" and self.frames < 2:
            raise ValueError("temporal_order needs at least 2 frames")
        if self.task == "group_recall" and self.frames < 3:
            raise ValueError("group_recall needs at least 3 frames")
        if self.task in ("spatial_locate", "group_recall") and self.tokens_per_frame < 2:
            raise ValueError(f"{self.task} needs at least 2 tokens per frame")

    @property
    def num_classes(self) -> int:
        return 2 if self.task == "temporal_order" else self.tokens_per_frame


@dataclass(frozen=True)
class LabeledExample:
    grid: TokenGrid
    label: int


def _sample_rng(seed: int, index: int) -> np.random.Generator:
    # Keyed, order-independent stream per sample.
    return np.random.default_rng((seed, index))


def _unit_rms(v: np.ndarray) -> np.ndarray:
    return v / np.sqrt(np.mean(v * v))


def order_cues(channels: int, magnitude: float) -> tuple[np.ndarray, np.ndarray]:
    """Two fixed unit-RMS cue vectors ('first' and 'second' markers).

    Drawn once from a fixed generator: random directions stay incoherent
    with the sinusoidal frame encodings, unlike structured patterns which
    can collide with an encoding row.
    """
    cue_rng = np.random.default_rng(0x7067)
    first = _unit_rms(cue_rng.normal(size=channels))
    second = _unit_rms(cue_rng.normal(size=channels))
    return magnitude * first, magnitude * second


def index_cues(count: int, channels: int, magnitude: float) -> np.ndarray:
    """(count, channels) unit-RMS cue vectors, one per index.

    DCT-II style rows: mutually orthogonal for count <= channels, so the
    classes are maximally separated in feature space.
    """
    positions = np.arange(count, dtype=np.float64)[:, None]
    chans = np.arange(channels, dtype=np.float64)[None, :]
    table = np.cos(np.pi * (chans + 0.5) * positions / channels)
    return magnitude * np.stack([_unit_rms(row) for row in table])


def _noise(rng: np.random.Generator, spec: SyntheticTaskSpec) -> np.ndarray:
    return rng.normal(
        0.0, spec.noise_scale, size=(spec.frames, spec.tokens_per_frame, spec.channels)
    )


def gen_temporal_order(spec: SyntheticTaskSpec) -> list[LabeledExample]:
    """Samples 2p and 2p+1 share noise and cue placement; only the temporal
    order of the two cues differs, which flips the label."""
    cue_first, cue_second = order_cues(spec.channels, spec.cue_magnitude)
    examples = []
    for i in range(spec.count):
        pair, flip = divmod(i, 2)
        rng = _sample_rng(spec.seed, pair)
        grid = _noise(rng, spec)
        spatial = int(rng.integers(spec.tokens_per_frame))
        t_lo, t_hi = sorted(rng.choice(spec.frames, size=2, replace=False).tolist())
        label = 1 - flip  # label 1: cue A strictly before cue B
        t_a, t_b = (t_lo, t_hi) if label == 1 else (t_hi, t_lo)
        grid[t_a, spatial] += cue_first
        grid[t_b, spatial] += cue_second
        examples.append(LabeledExample(TokenGrid(Tensor(grid)), label))
    return examples


def gen_spatial_locate(spec: SyntheticTaskSpec) -> list[LabeledExample]:
    """Cue for index j sits at spatial index j in every frame; label = j."""
    cues = index_cues(spec.tokens_per_frame, spec.channels, spec.cue_magnitude)
    examples = []
    for i in range(spec.count):
        rng = _sample_rng(spec.seed, i)
        grid = _noise(rng, spec)
        label = i % spec.tokens_per_frame
        grid[:, label] += cues[label]
        examples.append(LabeledExample(TokenGrid(Tensor(grid)), label))
    return examples


def gen_group_recall(spec: SyntheticTaskSpec) -> list[LabeledExample]:
    """Cue for group j appears at frame 0 only; frames 1..T-1 flood every
    other group with distractor noise at cue scale; label = j."""
    cues = index_cues(spec.tokens_per_frame, spec.channels, spec.cue_magnitude)
    distractor_scale = DISTRACTOR_GAIN * spec.cue_magnitude
    examples = []
    for i in range(spec.count):
        rng = _sample_rng(spec.seed, i)
        grid = _noise(rng, spec)
        label = i % spec.tokens_per_frame
        grid[0, label] += cues[label]
        distractors = rng.normal(
            0.0, distractor_scale,
            size=(spec.frames - 1, spec.tokens_per_frame, spec.channels),
        )
        distractors[:, label] = 0.0
        grid[1:] += distractors
        examples.append(LabeledExample(TokenGrid(Tensor(grid)), label))
    return examples


_GENERATORS = {
    "temporal_order": gen_temporal_order,
    "spatial_locate": gen_spatial_locate,
    "group_recall": gen_group_recall,
}


def generate(spec: SyntheticTaskSpec) -> list[LabeledExample]:
    return _GENERATORS[spec.task](spec)


def split_examples(
    examples: list[LabeledExample], train: int, test: int
) -> tuple[list[LabeledExample], list[LabeledExample]]:
    if train + test > len(examples):
        raise ValueError(
            f"cannot split {len(examples)} examples into {train} train + {test} test"
        )
    return examples[:train], examples[train:train + test]


# -- token grid file format ---------------------------------------------------


def save_grid(grid: TokenGrid, path, label: int | None = None) -> None:
    """Write magic/version/dims header + row-major little-endian f64 payload."""
    data = np.ascontiguousarray(grid.tokens.data, dtype="<f8")
    t, n, d = data.shape
    header = _HEADER.pack(MAGIC, VERSION, t, n, d, DTYPE_F64, 0 if label is None else 1)
    with open(path, "wb") as fh:
        fh.write(header)
        if label is not None:
            fh.write(_LABEL.pack(int(label)))
        fh.write(data.tobytes())


def load_grid(path) -> tuple[TokenGrid, int | None]:
    """Bit-exact inverse of save_grid; validates every header field."""
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(blob)} bytes)")
    magic, version, t, n, d, dtype, has_label = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}, expected {VERSION}")
    if dtype != DTYPE_F64:
        raise FormatError(f"{path}: unsupported dtype code {dtype}")
    offset = _HEADER.size
    label: int | None = None
    if has_label == 1:
        if len(blob) < offset + _LABEL.size:
            raise FormatError(f"{path}: truncated label field")
        (label,) = _LABEL.unpack_from(blob, offset)
        offset += _LABEL.size
    elif has_label != 0:
        raise FormatError(f"{path}: invalid has_label flag {has_label}")
    expected = t * n * d * 8
    payload = blob[offset:]
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload holds {len(payload)} bytes, header declares {expected}"
        )
    data = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(t, n, d)
    return TokenGrid(Tensor(data)), label


def save_dataset(examples: list[LabeledExample], out_dir, spec: SyntheticTaskSpec | None = None) -> list[str]:
    """Write one .tgrd file per example plus a manifest.json; returns names."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for i, example in enumerate(examples):
        name = f"grid_{i:05d}.tgrd"
        save_grid(example.grid, out / name, label=example.label)
        names.append(name)
    manifest = {
        "files": names,
        "labels": [e.label for e in examples],
        "spec": asdict(spec) if spec is not None else None,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return names


def load_dataset(directory) -> list[LabeledExample]:
    root = Path(directory)
    manifest = json.loads((root / "manifest.json").read_text())
    examples = []
    for name in manifest["files"]:
        grid, label = load_grid(root / name)
        if label is None:
            raise FormatError(f"{name}: dataset grids must carry labels")
        examples.append(LabeledExample(grid, label))
    return examples
