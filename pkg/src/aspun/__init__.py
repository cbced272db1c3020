"""Snapshot spectral imaging toolkit.

Simulates coded-aperture snapshot acquisition of hyperspectral cubes and
reconstructs them two ways: a classical FISTA sparse solver and a trained
unfolding network with per-channel adaptive step sizes, built on a small
numpy reverse-mode autodiff engine whose every op is validated against
central finite differences.
"""

from . import autodiff, cassi, fista, io, network, training
from .cassi import (
    CodedMask,
    DispersionSpec,
    Measurement,
    SpectralCube,
    adjoint,
    disperse,
    forward,
    integrate,
    measurement_width,
    modulate,
    shift_back,
    simulate,
)
from .errors import (
    ConfigError,
    DivergenceError,
    FormatError,
    ShapeError,
    StageError,
    TrainingDivergedError,
)
from .fista import (
    SolverConfig,
    SolverState,
    extrapolate,
    gradient_step,
    momentum_update,
    objective,
    power_iteration_lipschitz,
    soft_threshold,
    solve,
)
from .network import (
    NetworkConfig,
    UnfoldingNetwork,
    asp_step,
    unfold_forward,
)
from .training import (
    SyntheticSceneSpec,
    TrainConfig,
    adam_step,
    charbonnier_loss,
    cosine_lr,
    generate_scene,
    psnr,
    ssim,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "CodedMask",
    "ConfigError",
    "DispersionSpec",
    "DivergenceError",
    "FormatError",
    "Measurement",
    "NetworkConfig",
    "ShapeError",
    "SolverConfig",
    "SolverState",
    "SpectralCube",
    "StageError",
    "SyntheticSceneSpec",
    "TrainConfig",
    "TrainingDivergedError",
    "UnfoldingNetwork",
    "adam_step",
    "adjoint",
    "asp_step",
    "autodiff",
    "cassi",
    "charbonnier_loss",
    "cosine_lr",
    "disperse",
    "extrapolate",
    "fista",
    "forward",
    "generate_scene",
    "gradient_step",
    "integrate",
    "io",
    "measurement_width",
    "modulate",
    "momentum_update",
    "network",
    "objective",
    "power_iteration_lipschitz",
    "psnr",
    "shift_back",
    "simulate",
    "soft_threshold",
    "solve",
    "ssim",
    "train",
    "training",
    "unfold_forward",
]
