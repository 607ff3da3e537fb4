"""From-scratch CNN building blocks, optimizers and training."""

from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import gradient_check, numerical_gradient, relative_error
from .layers import Conv2D, Dense, Flatten, Layer, MaxPool, ReLU, Softmax, layer_from_dict
from .model import (
    AdamSpec,
    Model,
    ModelConfig,
    SGDSpec,
    backward,
    cross_entropy_grad,
    forward,
    glorot_init,
    loss_and_grads,
    weighted_cross_entropy,
)
from .optim import SGD, Adam, AdamState, adam_step, make_optimizer
from .train import Splits, TrainConfig, TrainingRun, train

__all__ = [
    "Adam", "AdamSpec", "AdamState", "Conv2D", "Dense", "Flatten", "Layer", "MaxPool", "Model",
    "ModelConfig", "ReLU", "SGD", "SGDSpec", "Softmax", "Splits", "TrainConfig", "TrainingRun",
    "adam_step", "backward", "cross_entropy_grad", "forward", "glorot_init", "gradient_check",
    "layer_from_dict", "load_checkpoint", "loss_and_grads", "make_optimizer", "numerical_gradient",
    "relative_error", "save_checkpoint", "train", "weighted_cross_entropy",
]
