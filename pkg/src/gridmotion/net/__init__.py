from .arch import ArchError, Network, build_network, conv_output_edge, NAMED_ARCHS
from .layers import (
    bilinear_kernel,
    orientation_loss,
    recombine_angle,
    softmax,
    weighted_softmax_loss,
)
from .checkpoint import load_network, save_network
from .train import TrainConfig, init_from_coarser, lr_at, train
from .gradcheck import gradient_check

__all__ = [
    "ArchError", "Network", "build_network", "conv_output_edge", "NAMED_ARCHS",
    "bilinear_kernel", "orientation_loss", "recombine_angle", "softmax",
    "weighted_softmax_loss", "load_network", "save_network",
    "TrainConfig", "init_from_coarser", "lr_at", "train", "gradient_check",
]
