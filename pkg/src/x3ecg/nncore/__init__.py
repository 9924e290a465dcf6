"""Minimal float64 tensor kernel with tape-based reverse-mode differentiation."""
from .core import DTYPE, Tape, Tensor, active_tape, as_tensor, backward, record
from .gradcheck import grad_check
from .io import load_tensors, read_tensors, save_tensors, write_tensors
from .losses import bce_with_logits, cross_entropy, mae
from .ops import (
    BatchNormStats,
    add,
    batchnorm1d,
    concat,
    conv1d,
    dense,
    dropout,
    getitem,
    global_avg_pool1d,
    maxpool1d,
    mul,
    relu,
    reshape,
    sigmoid,
    softmax,
    sub,
    tmean,
    tsum,
)

__all__ = [
    "DTYPE", "Tape", "Tensor", "active_tape", "as_tensor", "backward", "record", "grad_check",
    "load_tensors", "read_tensors", "save_tensors", "write_tensors", "bce_with_logits",
    "cross_entropy", "mae", "BatchNormStats", "add", "batchnorm1d", "concat", "conv1d", "dense",
    "dropout", "getitem", "global_avg_pool1d", "maxpool1d", "mul", "relu", "reshape", "sigmoid",
    "softmax", "sub", "tmean", "tsum",
]
