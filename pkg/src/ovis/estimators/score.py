"""Score-function gradient estimators for the importance-weighted bound.

Every estimator here has the form ``g = sum_k coeff_k h_k`` with ``h_k`` the
inference-network score of importance sample k. The functions below compute
the coefficient matrix for a batch of replicates and let the model contract
it against its scores. With ``a = (1 - alpha) log_w``, ``L_k = log sum_{l!=k}
exp(a_l)``, ``v_k = sigmoid(a_k - L_k)`` and ``s = 1/(1 - alpha)``:

* reinforce:   coeff_k = d_k = s log Z_K(alpha) - v_k  (no control variate)
* vimco:       coeff_k = (log Z_K - log Zhat_[-k]) - v_k, where Zhat swaps
               the held-out weight for the arithmetic or geometric mean of
               the others (alpha = 0 only)
* ovis_gamma:  coeff_k = s log[(1 - 1/K) / (1 - min(1-eps, v_k))]
               + (gamma - 1) v_k - (1 - gamma) log(1 - 1/K)
* ovis_mc:     coeff_k = d_k - (1/S) sum_s d_k with the k-th weight replaced
               by each of S shared auxiliary draws from q
* rws wake:    coeff_k = v_k;  rws sleep uses dreamed pairs and plain scores

``alpha = 1`` (the ELBO limit) replaces ``s log Z_K`` by ``mean(log_w)`` and
``v_k`` by ``1/K``; the implied ovis_gamma leave-one-out term becomes
``(log w_k - mean(log_w)) / (K - 1)``.

The theta gradient shared by all of these is ``sum_k v_k(alpha) d log
p(x, z_k)/dtheta``.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from ..models.base import require
from ..rng import Stream
from ..weights import (
    log_ess,
    log_zk,
    loo_log_sum_exp,
    loo_sum,
    normalized_weights,
    prefactor_d,
    smoothed_log_weights,
)
from .spec import EstimatorSpec, GradientEstimate

__all__ = [
    "reinforce",
    "vimco",
    "ovis_mc",
    "ovis_gamma",
    "rws_wake_phi",
    "rws_sleep_phi",
    "theta_gradient",
    "theta_gradient_coeff",
]


def _inv1ma(alpha: float) -> float:
    return 1.0 / (1.0 - alpha)


def _d_with_substitute(a_sub, loo_lse, log_w_sub, loo_logw_sum, k: int, alpha: float):
    """d_k after replacing the k-th smoothed weight by ``a_sub``.

    ``loo_lse`` is log sum_{l != k} exp(a_l), broadcastable against a_sub;
    ``loo_logw_sum`` (sum of the raw log weights excluding k) is only used by
    the alpha = 1 limit.
    """
    if alpha == 1.0:
        return (loo_logw_sum + log_w_sub) / k - 1.0 / k
    v = expit(a_sub - loo_lse)
    lz = np.logaddexp(a_sub, loo_lse) - np.log(k)
    return _inv1ma(alpha) * lz - v


# -- coefficient builders (batch: log_w has shape (n, K)) ----------------------


def reinforce_coeff(log_w: np.ndarray, alpha: float) -> np.ndarray:
    return prefactor_d(log_w, alpha)


def vimco_coeff(log_w: np.ndarray, geometric: bool) -> np.ndarray:
    k = log_w.shape[-1]
    lz = log_zk(log_w, 0.0)[..., None]
    loo_lse = loo_log_sum_exp(log_w)
    if geometric:
        loo_log_mean = loo_sum(log_w) / (k - 1)
        log_zhat = np.logaddexp(loo_lse, loo_log_mean) - np.log(k)
    else:
        log_zhat = loo_lse - np.log(k - 1)
    v = normalized_weights(log_w, 0.0)
    return (lz - log_zhat) - v


def ovis_gamma_coeff(log_w: np.ndarray, alpha: float, gamma: float,
                     clip_eps: float) -> np.ndarray:
    k = log_w.shape[-1]
    log1m1k = np.log1p(-1.0 / k)
    if alpha == 1.0:
        loo_term = (log_w - np.mean(log_w, axis=-1, keepdims=True)) / (k - 1)
        v = np.full_like(log_w, 1.0 / k)
    else:
        v = normalized_weights(log_w, alpha)
        v_clipped = np.minimum(1.0 - clip_eps, v) if clip_eps > 0 else v
        with np.errstate(divide="ignore"):
            loo_term = _inv1ma(alpha) * (log1m1k - np.log1p(-v_clipped))
    return loo_term + (gamma - 1.0) * v - (1.0 - gamma) * log1m1k


def ovis_gamma_control(log_w: np.ndarray, alpha: float, gamma: float) -> np.ndarray:
    """The z_{-k}-measurable control used by ovis_gamma.

    This is ``s log[(1/(K-1)) sum_{l != k} w_l^(1-alpha)] + (1 - gamma)
    log(1 - 1/K)``; the remaining ``-gamma v_k`` piece of the paper's unified
    expression depends on z_k and is a deliberate bias term at gamma > 0, not
    part of the control variate.
    """
    k = log_w.shape[-1]
    if alpha == 1.0:
        core = loo_sum(log_w) / (k - 1)
    else:
        a = smoothed_log_weights(log_w, alpha)
        core = _inv1ma(alpha) * (loo_log_sum_exp(a) - np.log(k - 1))
    return core + (1.0 - gamma) * np.log1p(-1.0 / k)


def ovis_mc_coeff(log_w: np.ndarray, log_w_aux: np.ndarray, alpha: float
                  ) -> tuple[np.ndarray, np.ndarray]:
    """(coefficients, per-k control) for the sample-based optimal control.

    The S auxiliary weights are shared across all K positions, so one draw
    costs K + S weight evaluations.
    """
    k = log_w.shape[-1]
    a = smoothed_log_weights(log_w, alpha)
    a_aux = smoothed_log_weights(log_w_aux, alpha)
    if k == 1:
        loo_lse = np.full(log_w.shape, -np.inf)
        loo_logw = np.zeros(log_w.shape)
    else:
        loo_lse = loo_log_sum_exp(a)
        loo_logw = loo_sum(log_w)
    d_actual = _d_with_substitute(a, loo_lse, log_w, loo_logw, k, alpha)
    d_sub = _d_with_substitute(
        a_aux[..., None, :], loo_lse[..., :, None],
        log_w_aux[..., None, :], loo_logw[..., :, None], k, alpha)
    control = np.mean(d_sub, axis=-1)
    return d_actual - control, control


def wake_phi_coeff(log_w: np.ndarray) -> np.ndarray:
    return normalized_weights(log_w, 0.0)


def theta_gradient_coeff(log_w: np.ndarray, alpha: float) -> np.ndarray:
    return normalized_weights(log_w, alpha)


# -- batch entry points ---------------------------------------------------------


def score_phi_batch(model, x, spec: EstimatorSpec, rng: Stream, n: int) -> np.ndarray:
    """(n, |phi|) array of independent phi-gradient replicates."""
    require(model.capabilities.has_score, f"{spec.kind} needs an analytic score")
    if spec.kind == "rws_sleep_phi":
        return _sleep_batch(model, spec, rng, n)
    z = model.sample_latents(x, spec.k, n, rng.child(0))
    log_w = model.log_weight(x, z)
    if spec.kind == "ovis_mc":
        z_aux = model.sample_latents(x, spec.s, n, rng.child(1))
        log_w_aux = model.log_weight(x, z_aux)
        coeff, _ = ovis_mc_coeff(log_w, log_w_aux, spec.alpha)
    else:
        coeff = _plain_coeff(log_w, spec)
    return model.phi_grad_from_prefactors(x, z, coeff)


def _plain_coeff(log_w: np.ndarray, spec: EstimatorSpec) -> np.ndarray:
    if spec.kind == "reinforce":
        return reinforce_coeff(log_w, spec.alpha)
    if spec.kind == "vimco_arith":
        return vimco_coeff(log_w, geometric=False)
    if spec.kind == "vimco_geom":
        return vimco_coeff(log_w, geometric=True)
    if spec.kind == "ovis_gamma":
        return ovis_gamma_coeff(log_w, spec.alpha, spec.gamma, spec.clip_eps)
    if spec.kind == "rws_wake_phi":
        return wake_phi_coeff(log_w)
    raise ValueError(f"no prefactor form for kind {spec.kind!r}")


def _sleep_batch(model, spec: EstimatorSpec, rng: Stream, n: int) -> np.ndarray:
    require(model.capabilities.has_generative_sampling,
            "sleep phase needs generative sampling")
    xs, zs = model.sample_joint(n * spec.k, rng.child(0))
    scores = model.score_phi_pairs(xs, zs)
    return scores.reshape(n, spec.k, -1).mean(axis=1)


def theta_gradient_batch(model, x, z: np.ndarray, alpha: float = 0.0) -> np.ndarray:
    log_w = model.log_weight(x, z)
    return model.theta_grad_from_prefactors(x, z, theta_gradient_coeff(log_w, alpha))


# -- single-draw public operations ------------------------------------------------


def _single(model, x, spec: EstimatorSpec, rng: Stream) -> GradientEstimate:
    require(model.capabilities.has_score, f"{spec.kind} needs an analytic score")
    z = model.sample_latents(x, spec.k, 1, rng.child(0))
    log_w = model.log_weight(x, z)
    aux: dict = {}
    if spec.kind == "ovis_mc":
        z_aux = model.sample_latents(x, spec.s, 1, rng.child(1))
        log_w_aux = model.log_weight(x, z_aux)
        coeff, control = ovis_mc_coeff(log_w, log_w_aux, spec.alpha)
        aux["control"] = control[0]
    else:
        coeff = _plain_coeff(log_w, spec)
        if spec.kind in ("vimco_arith", "vimco_geom"):
            # VIMCO's control is log Zhat_[-k]; expose the z_{-k}-measurable part.
            aux["control"] = (log_zk(log_w, 0.0)[..., None]
                              - (coeff + normalized_weights(log_w, 0.0)))[0]
        elif spec.kind == "ovis_gamma":
            aux["control"] = ovis_gamma_control(log_w, spec.alpha, spec.gamma)[0]
    phi_grad = model.phi_grad_from_prefactors(x, z, coeff)[0]
    theta_grad = theta_gradient_batch(model, x, z, spec.alpha)[0]
    aux.update(
        log_w=log_w[0],
        coeff=coeff[0],
        ess=float(np.exp(log_ess(log_w[0], spec.alpha))),
        log_zk=float(log_zk(log_w, spec.alpha)[0]),
    )
    return GradientEstimate(phi_grad, theta_grad, aux)


def reinforce(model, x, spec: EstimatorSpec, rng: Stream) -> GradientEstimate:
    """Plain score-function estimator of the bound gradient, Renyi-aware."""
    assert spec.kind == "reinforce"
    return _single(model, x, spec, rng)


def vimco(model, x, spec: EstimatorSpec, rng: Stream) -> GradientEstimate:
    """Leave-one-out baseline estimator, arithmetic or geometric averaging."""
    assert spec.kind in ("vimco_arith", "vimco_geom")
    return _single(model, x, spec, rng)


def ovis_mc(model, x, spec: EstimatorSpec, rng: Stream) -> GradientEstimate:
    """Sample-based approximation of the optimal control variate."""
    assert spec.kind == "ovis_mc"
    return _single(model, x, spec, rng)


def ovis_gamma(model, x, spec: EstimatorSpec, rng: Stream) -> GradientEstimate:
    """Closed-form control interpolating the high- and low-ESS limits."""
    assert spec.kind == "ovis_gamma"
    return _single(model, x, spec, rng)


def rws_wake_phi(model, x, spec: EstimatorSpec, rng: Stream) -> GradientEstimate:
    """Wake-phase inference gradient: sum_k v_k h_k on data-driven samples."""
    assert spec.kind == "rws_wake_phi"
    return _single(model, x, spec, rng)


def rws_sleep_phi(model, spec: EstimatorSpec, rng: Stream) -> GradientEstimate:
    """Sleep-phase inference gradient: mean score over dreamed (x, z) pairs."""
    assert spec.kind == "rws_sleep_phi"
    require(model.capabilities.has_score, "sleep phase needs an analytic score")
    phi_grad = _sleep_batch(model, spec, rng, 1)[0]
    return GradientEstimate(phi_grad, None, {})


def theta_gradient(model, x, z: np.ndarray, alpha: float = 0.0) -> np.ndarray:
    """Generative gradient sum_k v_k(alpha) d log p(x, z_k)/dtheta.

    ``z`` holds the K latent draws for one datapoint, shape (K, ...).
    """
    return theta_gradient_batch(model, x, z[None, ...], alpha)[0]
