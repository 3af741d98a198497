"""Dense tensors with reverse-mode differentiation and the Adam optimizer.

Every primitive's backward rule is itself written with traced operations, so
gradients of gradients (needed by the critic's gradient penalty) come out of
the same machinery.
"""

from .core import (
    Tape,
    Tensor,
    add,
    avg_pool2,
    avg_unpool2,
    backward,
    broadcast_to,
    clamp_min,
    concat,
    dense,
    div,
    exp,
    flip_hw,
    grad,
    leaky_relu,
    log,
    matmul,
    mean,
    mul,
    narrow,
    nearest_up2,
    neg,
    no_grad,
    pad2d,
    pow_const,
    reshape,
    sigmoid,
    sqrt,
    strided_sample,
    sub,
    sum_axes,
    swap01,
    transpose,
    variance,
    zero_insert,
)
from .conv import conv2d, conv2d_wgrad, deconv2d
from .optim import AdamState, adam_step
from .store import ParamStore

__all__ = [
    "AdamState",
    "ParamStore",
    "Tape",
    "Tensor",
    "adam_step",
    "add",
    "avg_pool2",
    "avg_unpool2",
    "backward",
    "broadcast_to",
    "clamp_min",
    "concat",
    "conv2d",
    "conv2d_wgrad",
    "deconv2d",
    "dense",
    "div",
    "exp",
    "flip_hw",
    "grad",
    "leaky_relu",
    "log",
    "matmul",
    "mean",
    "mul",
    "narrow",
    "nearest_up2",
    "neg",
    "no_grad",
    "pad2d",
    "pow_const",
    "reshape",
    "sigmoid",
    "sqrt",
    "strided_sample",
    "sub",
    "sum_axes",
    "swap01",
    "transpose",
    "variance",
    "zero_insert",
]
