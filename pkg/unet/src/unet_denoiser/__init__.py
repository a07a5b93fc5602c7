"""Residual U-Net denoiser for shot-stack containers.

A standalone companion to the reconstruction toolkit: it speaks the same
on-disk container format and exit-code contract but shares no code with it.
Training fits a residual network on patch pairs cut from an input/reference
container pair; inference slides the network over each frame and adds the
overlap-averaged residual back onto the input.
"""

from .container import ContainerError, ExchangeHeader, read_container, write_container
from .errors import ConfigError, DataError, NumericalError
from .infer import denoise_container, denoise_frames, load_model, slide_residual
from .model import NetSpec, ResidualUNet, build_net
from .patches import (
    AUGMENT_FOLD,
    PatchSpec,
    augment_pair,
    build_training_pairs,
    extract_patches,
    from_channels,
    normalize_scale,
    patch_grid,
    to_channels,
)
from .train import TrainResult, TrainSpec, train

__all__ = [
    "AUGMENT_FOLD",
    "ConfigError",
    "ContainerError",
    "DataError",
    "ExchangeHeader",
    "NetSpec",
    "NumericalError",
    "PatchSpec",
    "ResidualUNet",
    "TrainResult",
    "TrainSpec",
    "augment_pair",
    "build_net",
    "build_training_pairs",
    "denoise_container",
    "denoise_frames",
    "extract_patches",
    "from_channels",
    "load_model",
    "normalize_scale",
    "patch_grid",
    "read_container",
    "slide_residual",
    "to_channels",
    "train",
    "write_container",
]
