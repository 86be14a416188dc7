"""Small reverse-mode autodiff engine and the layers built on it."""
from .autograd import Tensor, as_tensor, parameter
from .layers import (LayerParams, attention, conv1d, conv1d_transposed, kl_gauss, layer_norm,
                     linear, mlp, mse_loss, resnet_block)
from .optim import Adam, AdamState, adam_step
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "Tensor", "as_tensor", "parameter", "LayerParams", "attention", "conv1d",
    "conv1d_transposed", "kl_gauss", "layer_norm", "linear", "mlp", "mse_loss", "resnet_block",
    "Adam", "AdamState", "adam_step", "load_checkpoint", "save_checkpoint",
]
