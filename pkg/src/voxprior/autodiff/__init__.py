from .tensor import (Tensor, as_tensor, backward, no_grad, set_grad_enabled,
                     add, neg, mul, power, log, exp, sum_, mean, reshape,
                     transpose, matmul, relu, leaky_relu, sigmoid, clamp,
                     pad_end, crop_end)
from .conv import (conv2d, conv3d, conv_transpose2d, conv_transpose3d,
                   conv_nd, conv_transpose_nd, conv_wgrad_nd)
from .ops import dense, activation, batchnorm, bce, l2_norm, scale, BCE_CLAMP
from .checkpoint import save_tensors, load_tensors

__all__ = [
    "Tensor", "as_tensor", "backward", "no_grad", "set_grad_enabled",
    "add", "neg", "mul", "power", "log", "exp", "sum_", "mean", "reshape",
    "transpose", "matmul", "relu", "leaky_relu", "sigmoid", "clamp",
    "pad_end", "crop_end",
    "conv2d", "conv3d", "conv_transpose2d", "conv_transpose3d",
    "conv_nd", "conv_transpose_nd", "conv_wgrad_nd",
    "dense", "activation", "batchnorm", "bce", "l2_norm", "scale", "BCE_CLAMP",
    "save_tensors", "load_tensors",
]
