from .adam import AdamState, adam_step
from .base import CapabilityError, Model, ModelCapabilities
from .gaussian import GaussianToyModel, gaussian_make, gaussian_pathwise, gaussian_score
from .gmm import GmmModel, enumerate_latents, gmm_make, gmm_score, true_posterior

__all__ = [
    "AdamState",
    "CapabilityError",
    "GaussianToyModel",
    "GmmModel",
    "Model",
    "ModelCapabilities",
    "adam_step",
    "enumerate_latents",
    "gaussian_make",
    "gaussian_pathwise",
    "gaussian_score",
    "gmm_make",
    "gmm_score",
    "true_posterior",
]
