"""Expected-information-gain estimation, design optimization, adaptive loops.

The package estimates how much an experiment design is expected to teach
us about a latent quantity, optimizes designs against that target, trains
amortized design policies, and serves live adaptive sessions over HTTP.
"""

from .core import Design, History, LatentSample, ModelSpec, Outcome, OutcomeKind, log_joint, sample_joint
from .estimators import EigEstimate, MlmcConfig, NmcConfig, mlmc_eig, nmc_eig, rb_eig
from .models import build_model, model_catalog
from .rng import RngStream

__version__ = "0.1.0"

__all__ = [
    "Design",
    "LatentSample",
    "Outcome",
    "OutcomeKind",
    "History",
    "ModelSpec",
    "RngStream",
    "sample_joint",
    "log_joint",
    "EigEstimate",
    "NmcConfig",
    "MlmcConfig",
    "nmc_eig",
    "rb_eig",
    "mlmc_eig",
    "build_model",
    "model_catalog",
    "__version__",
]
