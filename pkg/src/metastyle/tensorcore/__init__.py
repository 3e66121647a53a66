"""Minimal reverse-mode automatic differentiation over dense arrays."""

from .errors import DegenerateInputError, DimensionError, NumericError, UsageError
from .gradcheck import check_gradients, numeric_grad, relative_error
from .ops import (
    add,
    avgpool,
    bias_add,
    concat,
    conv2d,
    cosine,
    elementwise,
    exp,
    expand,
    frobenius_distance,
    index,
    l2_normalize,
    matmul,
    mean,
    mul,
    reduce,
    relu,
    reshape,
    resample,
    scale,
    sigmoid,
    softplus,
    square,
    sub,
    tanh,
    transpose,
    upsample2,
)
from . import ops
from .params import (
    FROZEN,
    STYLIZABLE,
    ParamStore,
    apply_update,
    load_checkpoint,
    save_checkpoint,
    sgd_step,
)
from .tensor import Tape, Tensor, active_tape, backward, default_dtype, precision, record

__all__ = [
    "DegenerateInputError", "DimensionError", "NumericError", "UsageError",
    "check_gradients", "numeric_grad", "relative_error",
    "add", "avgpool", "bias_add", "concat", "conv2d", "cosine", "elementwise", "exp",
    "expand", "frobenius_distance", "index", "l2_normalize", "matmul", "mean", "mul",
    "reduce", "relu", "reshape", "resample", "scale", "sigmoid", "softplus", "square", "sub",
    "ops", "tanh", "transpose", "upsample2",
    "FROZEN", "STYLIZABLE", "ParamStore", "apply_update", "load_checkpoint", "save_checkpoint", "sgd_step",
    "Tape", "Tensor", "active_tape", "backward", "default_dtype", "precision", "record",
]
