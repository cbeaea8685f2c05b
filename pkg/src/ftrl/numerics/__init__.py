from .tensor import (
    ContractError,
    NonFiniteError,
    Tensor,
    add,
    as_tensor,
    clip,
    concat,
    debug_mode,
    div,
    exp,
    gaussian_log_prob,
    gelu,
    getitem,
    grad,
    layer_norm,
    log,
    matmul,
    mean,
    minimum,
    mul,
    neg,
    no_grad,
    relu,
    reshape,
    set_debug,
    softmax,
    square,
    stack,
    sub,
    sum_,
    swapaxes,
    tanh,
    transpose,
)
from .nn import MLP, LayerNorm, Linear, Module, param
from .optim import Adam, clip_grad_norm, global_norm

__all__ = [
    "Adam", "ContractError", "LayerNorm", "Linear", "MLP", "Module", "NonFiniteError", "Tensor",
    "add", "as_tensor", "clip", "clip_grad_norm", "concat", "debug_mode", "div", "exp",
    "gaussian_log_prob", "gelu", "getitem", "global_norm", "grad", "layer_norm", "log", "matmul", "mean",
    "minimum", "mul", "neg", "no_grad", "param", "relu", "reshape", "set_debug", "softmax",
    "square", "stack", "sub", "sum_", "swapaxes", "tanh", "transpose",
]
