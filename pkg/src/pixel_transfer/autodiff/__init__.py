from .batchnorm import BN_EPS, BN_MOMENTUM, BatchNorm2d, BatchNormWarning, batch_norm2d
from .gradcheck import finite_difference_check
from .ops import (
    activation,
    add,
    binary_cross_entropy,
    concat,
    conv2d,
    conv2d_transposed,
    conv_output_size,
    conv_transposed_output_size,
    leaky_relu,
    mean,
    mse_loss,
    mul,
    relu,
    reshape,
    sigmoid,
    tanh,
    where_items,
)
from .optim import Adam, MissingGradientError, SGDMomentum, make_optimizer
from .tensor import ComputationRecord, Tensor, backward, is_grad_enabled, make_result, no_grad

__all__ = [
    "Adam",
    "BN_EPS",
    "BN_MOMENTUM",
    "BatchNorm2d",
    "BatchNormWarning",
    "ComputationRecord",
    "MissingGradientError",
    "SGDMomentum",
    "Tensor",
    "activation",
    "add",
    "backward",
    "batch_norm2d",
    "binary_cross_entropy",
    "concat",
    "conv2d",
    "conv2d_transposed",
    "conv_output_size",
    "conv_transposed_output_size",
    "finite_difference_check",
    "is_grad_enabled",
    "leaky_relu",
    "make_optimizer",
    "make_result",
    "mean",
    "mse_loss",
    "mul",
    "no_grad",
    "relu",
    "reshape",
    "sigmoid",
    "tanh",
    "where_items",
]
