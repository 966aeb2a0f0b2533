from .config import ModelConfig
from .params import init_params, param_shapes, validate_params, zeros_like_params, TEMPORAL_PARAM_NAMES
from .network import (
    Batch,
    ForwardOutput,
    ForwardStats,
    LossBreakdown,
    LossWeights,
    compose_embeddings,
    compute_loss,
    embedding_sum,
    forward,
    forward_sequence,
    loss_and_gradients,
    stack_batch,
)
from .checkpoint import (
    load_checkpoint,
    load_optimizer_state,
    save_checkpoint,
    save_optimizer_state,
)

__all__ = [
    "Batch",
    "ForwardOutput",
    "ForwardStats",
    "LossBreakdown",
    "LossWeights",
    "ModelConfig",
    "TEMPORAL_PARAM_NAMES",
    "compose_embeddings",
    "compute_loss",
    "embedding_sum",
    "forward",
    "forward_sequence",
    "init_params",
    "load_checkpoint",
    "load_optimizer_state",
    "loss_and_gradients",
    "param_shapes",
    "save_checkpoint",
    "save_optimizer_state",
    "stack_batch",
    "validate_params",
    "zeros_like_params",
]
