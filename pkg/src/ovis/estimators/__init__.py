"""Gradient estimators for the importance-weighted and Renyi bounds."""

from __future__ import annotations

import numpy as np

from ..rng import Stream
from .exact import exact_ocv_phi_batch, exact_optimal_cv
from .pathwise import dreg, pathwise_iwae, pathwise_phi_batch, stl
from .score import (
    ovis_gamma,
    ovis_mc,
    reinforce,
    rws_sleep_phi,
    rws_wake_phi,
    score_phi_batch,
    theta_gradient,
    theta_gradient_batch,
    vimco,
)
from .spec import (
    DEFAULT_CLIP_EPS,
    KINDS,
    ControlVariateTerms,
    EstimatorSpec,
    GradientEstimate,
    UnsupportedAlphaError,
)
from .tvo import make_tvo_partition, tvo_gradient, tvo_phi_batch

__all__ = [
    "DEFAULT_CLIP_EPS",
    "KINDS",
    "ControlVariateTerms",
    "EstimatorSpec",
    "GradientEstimate",
    "UnsupportedAlphaError",
    "dreg",
    "estimate",
    "estimate_phi_batch",
    "exact_optimal_cv",
    "make_tvo_partition",
    "ovis_gamma",
    "ovis_mc",
    "pathwise_iwae",
    "reinforce",
    "rws_sleep_phi",
    "rws_wake_phi",
    "stl",
    "theta_gradient",
    "theta_gradient_batch",
    "tvo_gradient",
    "vimco",
]

_SCORE_KINDS = frozenset({
    "reinforce", "vimco_arith", "vimco_geom", "ovis_mc", "ovis_gamma",
    "rws_wake_phi", "rws_sleep_phi",
})
_PATHWISE_KINDS = frozenset({"pathwise_iwae", "stl", "dreg"})


def estimate_phi_batch(model, x, spec: EstimatorSpec, rng: Stream, n: int) -> np.ndarray:
    """n independent phi-gradient replicates, shape (n, |phi|)."""
    if spec.kind in _SCORE_KINDS:
        return score_phi_batch(model, x, spec, rng, n)
    if spec.kind == "exact_ocv":
        return exact_ocv_phi_batch(model, x, spec, rng, n)
    if spec.kind == "tvo":
        return tvo_phi_batch(model, x, spec, rng, n)
    if spec.kind in _PATHWISE_KINDS:
        return pathwise_phi_batch(model, x, spec, rng, n)
    raise ValueError(f"unknown estimator kind {spec.kind!r}")


def estimate_theta_batch(model, x, spec: EstimatorSpec, rng: Stream, n: int) -> np.ndarray:
    """n replicates of the shared generative gradient at this spec's (K, alpha)."""
    if spec.kind in _PATHWISE_KINDS:
        eps = model.sample_eps(spec.k, n, rng.child(0))
        z = model.latents_from_eps(x, eps)
    else:
        z = model.sample_latents(x, spec.k, n, rng.child(0))
    return theta_gradient_batch(model, x, z, spec.alpha)


def estimate(model, x, spec: EstimatorSpec, rng: Stream) -> GradientEstimate:
    """One draw of the estimator named by ``spec``."""
    single = {
        "reinforce": reinforce,
        "vimco_arith": vimco,
        "vimco_geom": vimco,
        "ovis_mc": ovis_mc,
        "ovis_gamma": ovis_gamma,
        "exact_ocv": exact_optimal_cv,
        "rws_wake_phi": rws_wake_phi,
        "tvo": tvo_gradient,
        "pathwise_iwae": pathwise_iwae,
        "stl": stl,
        "dreg": dreg,
    }
    if spec.kind == "rws_sleep_phi":
        return rws_sleep_phi(model, spec, rng)
    return single[spec.kind](model, x, spec, rng)
