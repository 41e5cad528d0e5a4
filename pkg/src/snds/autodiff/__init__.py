from snds.autodiff.ops import (
    add,
    affine,
    avg_pool2d,
    batch_norm,
    conv2d,
    flatten,
    mul,
    relu,
    reshape,
    scale_shift,
    softmax,
    softmax_cross_entropy,
    stack,
    sub,
    sum_squares,
    total,
    weighted_sum,
)
from snds.autodiff.optim import SGD, cosine_rampdown, sgd_step
from snds.autodiff.tensor import Parameter, Tensor, backward, is_grad_enabled, no_grad, record, topological_order

__all__ = [
    "Parameter",
    "SGD",
    "Tensor",
    "add",
    "affine",
    "avg_pool2d",
    "backward",
    "batch_norm",
    "conv2d",
    "cosine_rampdown",
    "flatten",
    "is_grad_enabled",
    "mul",
    "no_grad",
    "record",
    "relu",
    "reshape",
    "scale_shift",
    "sgd_step",
    "softmax",
    "softmax_cross_entropy",
    "stack",
    "sub",
    "sum_squares",
    "topological_order",
    "total",
    "weighted_sum",
]
