"""Generative diffeomorphic shape modelling on regular lattices."""

from .config import PipelineConfig, load_config, parse_config, save_config
from .errors import (
    ConfigError,
    DataError,
    GshapeError,
    LatticeMismatch,
    NonFiniteState,
    SingularSystem,
    SolverNotConverged,
)
from .inference import (
    LatentPosterior,
    LatentPrecisionPosterior,
    MixtureWeights,
    ModelState,
    NoisePrecisionPosterior,
    ResidualPosterior,
    evaluate_subject,
    gram_matrix,
    lower_bound,
    reconstruct,
    update_latent,
    update_latent_precision,
    update_noise_precision,
    update_residual,
)
from .interp import pull, push, spatial_gradient
from .lattice import Lattice
from .metric import MetricParams, SpectralKernel, build_kernel
from .model import RegistrationResult, ShapeModel
from .shooting import Deformation, ShootingResult, jacobian, shoot
from .subspace import OrthoTransform, orthogonalise, rescale, update_subspace
from .synthesis import SyntheticSpec, synthesise, write_synthetic_dataset
from .template import (
    DataTermDerivs,
    data_derivs,
    data_energy,
    softmax,
    update_template,
    warp_template,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "DataTermDerivs",
    "Deformation",
    "GshapeError",
    "Lattice",
    "LatentPosterior",
    "LatentPrecisionPosterior",
    "LatticeMismatch",
    "MetricParams",
    "MixtureWeights",
    "ModelState",
    "NoisePrecisionPosterior",
    "NonFiniteState",
    "OrthoTransform",
    "PipelineConfig",
    "RegistrationResult",
    "ResidualPosterior",
    "ShapeModel",
    "ShootingResult",
    "SingularSystem",
    "SolverNotConverged",
    "SpectralKernel",
    "SyntheticSpec",
    "build_kernel",
    "data_derivs",
    "data_energy",
    "evaluate_subject",
    "gram_matrix",
    "jacobian",
    "load_config",
    "lower_bound",
    "orthogonalise",
    "parse_config",
    "pull",
    "push",
    "reconstruct",
    "rescale",
    "save_config",
    "shoot",
    "softmax",
    "spatial_gradient",
    "synthesise",
    "update_latent",
    "update_latent_precision",
    "update_noise_precision",
    "update_residual",
    "update_subspace",
    "update_template",
    "warp_template",
    "write_synthetic_dataset",
]
