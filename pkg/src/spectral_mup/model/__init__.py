from .autodiff import Node, Tape
from .checkpoint import load_checkpoint, save_checkpoint
from .transformer import (
    ModelConfig,
    TransformerParams,
    collect_activations,
    forward,
    group_table,
    init_params,
    loss_and_backward,
    loss_only,
    measure_activations,
    param_layout,
    resolve_groups,
    token_norm,
)

__all__ = [
    "ModelConfig",
    "Node",
    "Tape",
    "TransformerParams",
    "collect_activations",
    "forward",
    "group_table",
    "init_params",
    "loss_and_backward",
    "load_checkpoint",
    "loss_only",
    "measure_activations",
    "param_layout",
    "resolve_groups",
    "save_checkpoint",
    "token_norm",
]
