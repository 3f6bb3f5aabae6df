from .io import load, loads, save, dumps, WeightFormatError
from .losses import (
    binary_cross_entropy,
    kl_standard_normal,
    squared_error,
    vae_loss,
    weighted_cross_entropy,
)
from .network import ACTIVATIONS, Dense, DenseNet
from .optim import Optimizer
from .tensor import ContractError, DimensionError, Tensor, concat, sigmoid, softmax

__all__ = [
    "ACTIVATIONS",
    "ContractError",
    "Dense",
    "DenseNet",
    "DimensionError",
    "Optimizer",
    "Tensor",
    "WeightFormatError",
    "binary_cross_entropy",
    "concat",
    "dumps",
    "kl_standard_normal",
    "load",
    "loads",
    "save",
    "sigmoid",
    "softmax",
    "squared_error",
    "vae_loss",
    "weighted_cross_entropy",
]
