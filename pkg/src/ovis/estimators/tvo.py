"""Thermodynamic variational objective gradient.

The objective is a left-Riemann sum of ``E_{pi_beta}[log w]`` over a
partition ``0 = beta_0 < ... < beta_P = 1`` of the geometric path
``pi_beta propto q * w^beta``. Differentiating each stratum through its
self-normalized expectation yields

    grad E_{pi_beta}[f] = E_{pi_beta}[grad f] + Cov_{pi_beta}[grad log pi~_beta, f]

with ``f = log w``, ``grad_phi f = -h`` and ``grad_phi log pi~_beta =
(1 - beta) h``. Both terms are estimated with the same K proposal draws:
SNIS weights ``u_k propto w_k^beta`` and a reliability-corrected weighted
covariance (factor ``1/(1 - sum u^2)``), which makes the beta = 0 stratum an
exactly unbiased ELBO gradient -- the P = 1 left rule then reproduces the
ELBO score-function gradient in expectation.
"""

from __future__ import annotations

import numpy as np
from scipy.special import softmax

from ..models.base import require
from ..rng import Stream
from .spec import EstimatorSpec, GradientEstimate

__all__ = ["tvo_gradient", "tvo_phi_batch", "make_tvo_partition"]

# Below this leave-out mass a stratum has one effective sample and carries no
# covariance information.
_MIN_REL_MASS = 1e-12


def make_tvo_partition(p: int, beta1: float) -> tuple[float, ...]:
    """beta_0 = 0 plus p knots log-uniform from beta1 to 1 (p strata)."""
    if p < 1:
        raise ValueError("need at least one stratum")
    if p == 1:
        return (0.0, 1.0)
    if not 0.0 < beta1 < 1.0:
        raise ValueError(f"beta1 must lie in (0, 1), got {beta1}")
    knots = np.logspace(np.log10(beta1), 0.0, p)
    return (0.0, *map(float, knots))


def tvo_coeff(log_w: np.ndarray, partition: tuple[float, ...]) -> np.ndarray:
    """Prefactors such that the phi gradient is sum_k coeff_k h_k."""
    coeff = np.zeros_like(log_w)
    for beta, beta_next in zip(partition[:-1], partition[1:]):
        u = softmax(beta * log_w, axis=-1)
        f_bar = np.sum(u * log_w, axis=-1, keepdims=True)
        rel_mass = 1.0 - np.sum(u ** 2, axis=-1, keepdims=True)
        corr = np.where(rel_mass > _MIN_REL_MASS, 1.0 / np.maximum(rel_mass, _MIN_REL_MASS), 0.0)
        cov_part = corr * (1.0 - beta) * u * (log_w - f_bar)
        coeff += (beta_next - beta) * (cov_part - u)
    return coeff


def tvo_phi_batch(model, x, spec: EstimatorSpec, rng: Stream, n: int) -> np.ndarray:
    require(model.capabilities.has_score, "tvo needs an analytic score")
    z = model.sample_latents(x, spec.k, n, rng.child(0))
    log_w = model.log_weight(x, z)
    coeff = tvo_coeff(log_w, spec.tvo_partition)
    return model.phi_grad_from_prefactors(x, z, coeff)


def tvo_gradient(model, x, spec: EstimatorSpec, rng: Stream) -> GradientEstimate:
    """One TVO draw; theta follows the shared generative gradient."""
    assert spec.kind == "tvo"
    require(model.capabilities.has_score, "tvo needs an analytic score")
    z = model.sample_latents(x, spec.k, 1, rng.child(0))
    log_w = model.log_weight(x, z)
    coeff = tvo_coeff(log_w, spec.tvo_partition)
    phi_grad = model.phi_grad_from_prefactors(x, z, coeff)[0]
    from .score import theta_gradient_batch
    theta_grad = theta_gradient_batch(model, x, z, 0.0)[0]
    return GradientEstimate(phi_grad, theta_grad, {"coeff": coeff[0], "log_w": log_w[0]})
