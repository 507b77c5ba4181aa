from .tensor import Tensor, gradient_check, numeric_gradient, param, spmm, tensor
from .layers import (
    GatedRecurrentGraphCell,
    GraphConvLayer,
    GraphQNetwork,
    Linear,
    RecurrentGraphModel,
    squeeze_last,
    weighted_bce,
)
from .optim import Adam
from .attribution import completeness_gap, evaluate_scalar, integrated_gradients
from .checkpoint import describe_checkpoint, load_checkpoint, save_checkpoint

__all__ = [
    "Adam",
    "GatedRecurrentGraphCell",
    "GraphConvLayer",
    "GraphQNetwork",
    "Linear",
    "RecurrentGraphModel",
    "Tensor",
    "completeness_gap",
    "describe_checkpoint",
    "evaluate_scalar",
    "gradient_check",
    "integrated_gradients",
    "load_checkpoint",
    "numeric_gradient",
    "param",
    "save_checkpoint",
    "spmm",
    "squeeze_last",
    "tensor",
    "weighted_bce",
]
