from .layers import (Layer, Conv2D, MaxPool2D, BatchNorm, Dropout, ELU, Dense,
                     GlobalAvgPool, Softmax, layer_from_spec)
from .losses import softmax, softmax_cross_entropy
from .network import Sequential, MultiHeadNet
from .optim import Adam
from .gradcheck import check_gradients, check_input_gradient

__all__ = [
    "Layer", "Conv2D", "MaxPool2D", "BatchNorm", "Dropout", "ELU", "Dense",
    "GlobalAvgPool", "Softmax", "layer_from_spec", "softmax",
    "softmax_cross_entropy", "Sequential", "MultiHeadNet", "Adam",
    "check_gradients", "check_input_gradient",
]
