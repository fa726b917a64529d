"""Tensor core, layers, optimizer, and parameter storage."""

from .tensor import (
    Tensor,
    no_grad,
    set_default_dtype,
    default_dtype,
    grad_check,
    sigmoid,
    gelu,
    glu,
    softmax,
    log_softmax,
    conv1d,
    conv2d,
    concat,
    stack,
    embedding,
    clip,
)
from .layers import (
    uniform_init,
    linear,
    layer_norm,
    add_linear,
    apply_linear,
    add_conv1d,
    apply_conv1d,
    add_conv2d,
    apply_conv2d,
    add_layer_norm,
    apply_layer_norm,
    add_gru,
    add_bigru,
    add_lstm,
    add_bilstm,
    gru_layer,
    lstm_layer,
    lstm_step,
    lstm_cell,
    mse_loss,
    l1_loss,
    bce_loss,
)
from .optim import OptimState, adam_step, one_cycle_lr
from .store import ParamStore, StoreFormatError, StoreShapeError, StoreVersionError

__all__ = [
    "Tensor",
    "no_grad",
    "set_default_dtype",
    "default_dtype",
    "grad_check",
    "sigmoid",
    "gelu",
    "glu",
    "softmax",
    "log_softmax",
    "conv1d",
    "conv2d",
    "concat",
    "stack",
    "embedding",
    "clip",
    "uniform_init",
    "linear",
    "layer_norm",
    "add_linear",
    "apply_linear",
    "add_conv1d",
    "apply_conv1d",
    "add_conv2d",
    "apply_conv2d",
    "add_layer_norm",
    "apply_layer_norm",
    "add_gru",
    "add_bigru",
    "add_lstm",
    "add_bilstm",
    "gru_layer",
    "lstm_layer",
    "lstm_step",
    "lstm_cell",
    "mse_loss",
    "l1_loss",
    "bce_loss",
    "OptimState",
    "adam_step",
    "one_cycle_lr",
    "ParamStore",
    "StoreFormatError",
    "StoreShapeError",
    "StoreVersionError",
]
