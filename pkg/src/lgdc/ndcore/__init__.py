from lgdc.ndcore import ops
from lgdc.ndcore.ops import (
    concat,
    column_norm,
    conv2d,
    elementwise,
    matmul,
    max_pool2d,
    relu,
    reshape,
    softmax,
    softplus,
    transpose,
)
from lgdc.ndcore.random import derive_rng, derive_seed, make_rng
from lgdc.ndcore.tensor import GradTape, Tensor, backward, is_grad_enabled, no_grad

__all__ = [
    "GradTape",
    "Tensor",
    "backward",
    "column_norm",
    "concat",
    "conv2d",
    "derive_rng",
    "derive_seed",
    "elementwise",
    "is_grad_enabled",
    "make_rng",
    "matmul",
    "max_pool2d",
    "no_grad",
    "ops",
    "relu",
    "reshape",
    "softmax",
    "softplus",
    "transpose",
]
