"""Minimal NumPy neural-network stack: ops, layers, optimizer, weight files."""

from .layers import BatchNorm, Conv, Dense, Flatten, Network, Relu
from .ops import (batchnorm_backward, batchnorm_forward, conv_backward,
                  conv_forward, dense_backward, dense_forward, he_uniform,
                  l2_loss, relu_backward, relu_forward)
from .optim import Adam
from .weights import ModelWeights, read_weights, write_weights

__all__ = [
    "Adam", "BatchNorm", "Conv", "Dense", "Flatten", "ModelWeights",
    "Network", "Relu", "batchnorm_backward", "batchnorm_forward",
    "conv_backward", "conv_forward", "dense_backward", "dense_forward",
    "he_uniform", "l2_loss", "read_weights", "relu_backward", "relu_forward",
    "write_weights",
]
