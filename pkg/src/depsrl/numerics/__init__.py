"""Minimal float64 tensor engine with reverse-mode differentiation."""

from depsrl.numerics import ops
from depsrl.numerics.io import git_blob_hash, load_tensors, save_tensors
from depsrl.numerics.ops import (
    add,
    concat,
    dropout,
    embedding,
    index,
    log_softmax,
    lstm_cell,
    matmul,
    mean_over_sets,
    mul,
    reduce_sum,
    reshape,
    scale,
    sigmoid,
    stack,
    tanh,
    transpose,
)
from depsrl.numerics.optim import AdamState, AdamW, adamw_step, linear_warmup
from depsrl.numerics.tensor import Tape, Tensor, backward

__all__ = [
    "AdamState",
    "AdamW",
    "Tape",
    "Tensor",
    "adamw_step",
    "add",
    "backward",
    "concat",
    "dropout",
    "embedding",
    "git_blob_hash",
    "index",
    "linear_warmup",
    "load_tensors",
    "log_softmax",
    "lstm_cell",
    "matmul",
    "mean_over_sets",
    "mul",
    "ops",
    "reduce_sum",
    "reshape",
    "save_tensors",
    "scale",
    "sigmoid",
    "stack",
    "tanh",
    "transpose",
]
