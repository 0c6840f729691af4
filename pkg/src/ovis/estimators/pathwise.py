"""Pathwise (reparameterized) gradient estimators: IWAE, STL, DReG.

For models with a deterministic sampling path ``z_k = g(eps_k; phi)`` the
total derivative of ``log Z_K`` splits into a path term and a score term:

    pathwise_iwae: sum_k v_k [ (d log w_k / dz_k) dz_k/dphi - h_k ]
    stl:           sum_k v_k   (d log w_k / dz_k) dz_k/dphi
    dreg:          sum_k v_k^2 (d log w_k / dz_k) dz_k/dphi

STL drops the zero-expectation score-through-q term (biased for K > 1);
DReG doubly reparameterizes it into the squared weights. At K = 1 the two
coincide.
"""

from __future__ import annotations

import numpy as np

from ..models.base import require
from ..rng import Stream
from ..weights import normalized_weights
from .spec import EstimatorSpec, GradientEstimate

__all__ = ["pathwise_iwae", "stl", "dreg", "pathwise_phi_batch"]


def _pathwise_core(model, x, spec: EstimatorSpec, rng: Stream, n: int):
    require(model.capabilities.has_pathwise,
            f"{spec.kind} needs a reparameterizable sampling path")
    eps = model.sample_eps(spec.k, n, rng.child(0))
    z = model.latents_from_eps(x, eps)
    log_w = model.log_weight(x, z)
    v = normalized_weights(log_w, 0.0)
    return z, log_w, v


def pathwise_phi_batch(model, x, spec: EstimatorSpec, rng: Stream, n: int) -> np.ndarray:
    z, _, v = _pathwise_core(model, x, spec, rng, n)
    path_coeff = v ** 2 if spec.kind == "dreg" else v
    grad = model.phi_grad_from_pathwise_prefactors(x, z, path_coeff)
    if spec.kind == "pathwise_iwae":
        grad = grad + model.phi_grad_from_prefactors(x, z, -v)
    return grad


def _single(model, x, spec: EstimatorSpec, rng: Stream) -> GradientEstimate:
    z, _, v = _pathwise_core(model, x, spec, rng, 1)
    path_coeff = v ** 2 if spec.kind == "dreg" else v
    phi_grad = model.phi_grad_from_pathwise_prefactors(x, z, path_coeff)
    if spec.kind == "pathwise_iwae":
        phi_grad = phi_grad + model.phi_grad_from_prefactors(x, z, -v)
    theta_grad = model.theta_grad_from_prefactors(x, z, v)
    return GradientEstimate(phi_grad[0], theta_grad[0], {})


def pathwise_iwae(model, x, spec: EstimatorSpec, rng: Stream) -> GradientEstimate:
    """Reparameterized total derivative of log Z_K, score term included."""
    assert spec.kind == "pathwise_iwae"
    return _single(model, x, spec, rng)


def stl(model, x, spec: EstimatorSpec, rng: Stream) -> GradientEstimate:
    """Sticking-the-landing: pathwise term only."""
    assert spec.kind == "stl"
    return _single(model, x, spec, rng)


def dreg(model, x, spec: EstimatorSpec, rng: Stream) -> GradientEstimate:
    """Doubly-reparameterized estimator with v_k^2 weights."""
    assert spec.kind == "dreg"
    return _single(model, x, spec, rng)
