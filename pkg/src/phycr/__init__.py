"""PhyCRNet and PhyCRNet-s: recurrent conv nets that learn to time-step 2D PDEs from residuals alone, in numpy."""
from .errors import (AlignmentError, ConfigurationError, ContractError, DimensionError, FormatError, NumericError,
                     PhycrError)
from .layers import ArchSpec, count_params, init_params, rollout
from .physics import PdeSystem, burgers, fitzhugh_nagumo, lambda_omega, physics_loss
from .trainer import Checkpoint, RunConfig, infer, preset, resume, train

__version__ = "0.1.0"

__all__ = [
    "AlignmentError", "ArchSpec", "Checkpoint", "ConfigurationError", "ContractError", "DimensionError",
    "FormatError", "NumericError", "PdeSystem", "PhycrError", "RunConfig", "burgers", "count_params",
    "fitzhugh_nagumo", "infer", "init_params", "lambda_omega", "physics_loss", "preset", "resume", "rollout",
    "train",
]
