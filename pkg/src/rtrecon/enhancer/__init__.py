"""Trainable U-shaped residual enhancer (numpy forward/backward)."""
from .layers import conv2d, conv2d_backward
from .network import FULL_SCALE, NetworkConfig, UNet, parameter_count

__all__ = ["conv2d", "conv2d_backward", "NetworkConfig", "UNet", "parameter_count", "FULL_SCALE"]
