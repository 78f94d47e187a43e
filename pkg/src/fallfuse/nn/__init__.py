"""Hand-written layers, losses, optimizers and gradient checking."""
from .gradcheck import grad_check, grad_check_softmax_ce, relative_error
from .layers import Layer, LayerSpec, Mode, Sequential, build_layer
from .losses import cross_entropy, softmax
from .optim import Optimizer, OptimizerConfig

__all__ = [
    "grad_check", "grad_check_softmax_ce", "relative_error", "Layer", "LayerSpec", "Mode", "Sequential",
    "build_layer", "cross_entropy", "softmax", "Optimizer", "OptimizerConfig",
]
