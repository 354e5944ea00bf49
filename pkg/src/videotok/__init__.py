"""videotok: temporal token compression for video token grids.

A (T, N, D) grid of per-frame tokens goes in; exactly M video tokens come
out. The encoder zoo spans parameter-free pooling, learnable attentional
pooling, a causal last-M transformer, and recurrent token-memory models,
all trainable end-to-end through the built-in float64 autodiff core.
"""

from .autodiff import Tensor, Tape, backward, concat, gelu, log_softmax, matmul, softmax, stack
from .encoders import (
    ATTENTIONAL_VARIANTS,
    LEARNABLE_VARIANTS,
    VARIANTS,
    AttentionMap,
    EncoderConfig,
    TokenGrid,
    VideoTokens,
    build_encoder,
    desk_config,
    encode,
    fixed_window_pool,
    paper_scale_config,
    pool_temporal,
)
from .errors import ConfigError, FormatError, TrainingDiverged
from .data import (
    LabeledExample,
    SyntheticTaskSpec,
    TASKS,
    generate,
    load_dataset,
    load_grid,
    save_dataset,
    save_grid,
)
from .nn import TimestampEncoding, timestamp_apply
from .training import (
    Adam,
    EvalReport,
    Readout,
    Sgd,
    TrainConfig,
    TrainResult,
    cross_entropy,
    evaluate,
    train,
)
from .gradcheck import GradcheckResult, encoder_gradcheck, run_suite
from .ttm import GroupedMemory, GroupedTtmEncoder, VanillaTtmEncoder, grouped_ttm_step

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
