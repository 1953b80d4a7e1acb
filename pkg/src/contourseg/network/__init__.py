"""Toy-scale PDANet built on the autodiff tensor."""

from .blocks import (
    conv_module,
    cwam,
    gaussian_blur,
    gaussian_kernel_1d,
    holistic_attention,
    init_params,
    minmax_normalise,
    partial_decoder,
    pdm,
    rfb_block,
    se_block,
    se_gates,
)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ModelParams, NetworkConfig
from .pdanet import check_params, init_model, param_shapes, pdanet_forward

__all__ = [
    "CheckpointError", "ModelParams", "NetworkConfig", "check_params", "conv_module", "cwam",
    "gaussian_blur", "gaussian_kernel_1d", "holistic_attention", "init_model", "init_params",
    "load_checkpoint", "minmax_normalise", "partial_decoder", "pdanet_forward", "pdm",
    "param_shapes", "rfb_block", "save_checkpoint", "se_block", "se_gates",
]
