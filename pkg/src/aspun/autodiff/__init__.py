"""Minimal reverse-mode differentiation engine on numpy arrays."""

from .gradcheck import (
    REGISTRY,
    check_gradients,
    directional_check,
    grad_check,
    grad_check_all,
    relative_error,
)
from .ops import (
    add,
    avg_pool2d,
    cassi_adjoint,
    cassi_forward,
    concat,
    conv2d,
    gelu,
    global_avg_pool,
    layer_norm,
    matmul,
    mul,
    permute,
    relu,
    reshape,
    sigmoid,
    slice_axis,
    softmax,
    softplus,
    split,
    sqrt,
    sub,
    tensor_mean,
    tensor_sum,
    transposed_conv2d,
    window_merge,
    window_partition,
)
from .tensor import (
    Tensor,
    as_tensor,
    debug_nan_checks_enabled,
    grad_enabled,
    no_grad,
    set_debug_nan_checks,
)

__all__ = [
    "REGISTRY",
    "Tensor",
    "add",
    "as_tensor",
    "avg_pool2d",
    "cassi_adjoint",
    "cassi_forward",
    "check_gradients",
    "concat",
    "conv2d",
    "debug_nan_checks_enabled",
    "directional_check",
    "gelu",
    "global_avg_pool",
    "grad_check",
    "grad_check_all",
    "grad_enabled",
    "layer_norm",
    "matmul",
    "mul",
    "no_grad",
    "permute",
    "relative_error",
    "relu",
    "reshape",
    "set_debug_nan_checks",
    "sigmoid",
    "slice_axis",
    "softmax",
    "softplus",
    "split",
    "sqrt",
    "sub",
    "tensor_mean",
    "tensor_sum",
    "transposed_conv2d",
    "window_merge",
    "window_partition",
]
