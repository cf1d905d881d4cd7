"""Simulation and estimate checks for the stochastic fast logarithmic diffusion
equation ``dX = Lap log X dt + X o dW`` on a periodic box."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigError,
    DomainError,
    GridMismatch,
    MissingArtifact,
    NonConvergence,
    ParamError,
    ReplayError,
    StabilityError,
    StochlogError,
    SummabilityError,
    ZeroModeError,
)
from .grid import Grid, ScalarField, SpectralField  # noqa: E402
from .kernels import BACKEND  # noqa: E402
from .monotone import YosidaParams  # noqa: E402
from .noise import NoiseModel, NoiseSpec, build_noise_model  # noqa: E402
from .solver import (  # noqa: E402
    DatumSpec,
    PathDiagnostics,
    RegularizationParams,
    SimConfig,
    simulate_ensemble,
    simulate_path,
)

__all__ = [
    "BACKEND", "ConfigError", "DatumSpec", "DomainError", "Grid", "GridMismatch",
    "MissingArtifact", "NoiseModel", "NoiseSpec", "NonConvergence", "ParamError",
    "PathDiagnostics", "RegularizationParams", "ReplayError", "ScalarField", "SimConfig",
    "SpectralField", "StabilityError", "StochlogError", "SummabilityError", "YosidaParams",
    "ZeroModeError", "build_noise_model", "simulate_ensemble", "simulate_path",
]
