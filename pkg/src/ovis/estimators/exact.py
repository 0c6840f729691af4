"""Exact optimal control variate via latent enumeration.

For models with an enumerable latent the trace-of-covariance-optimal scalar
controls can be evaluated exactly:

    c_k = f_{-k} + sum_l E_k[ f_l h_k^T h_l ] / E_k[ ||h_k||^2 ]

with the decomposition ``d_k = f_k + f_{-k}`` chosen as

    f_{-k} = s * log Ztilde_[-k](alpha)           (z_k-independent)
    f_k    = -s * log(1 - v_k) - v_k              (s = 1/(1 - alpha))

which satisfies ``f_k + f_{-k} = d_k`` identically. Every expectation
``E_k[.]`` enumerates z_k over the C latent values while holding the other
draws fixed; the estimator and control are invariant to where z_k-constants
sit in the decomposition, so this choice is purely for convenience.

All leave-one-out and leave-two-out log-sums are computed from the surviving
entries only, so the bits of ``c_k`` are a function of ``z_{-k}`` alone:
redrawing z_k reproduces c_k exactly.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit, logsumexp

from ..models.base import require
from ..rng import Stream
from .spec import ControlVariateTerms, EstimatorSpec, GradientEstimate

__all__ = ["exact_optimal_cv", "exact_ocv_phi_batch"]


def _excluded_lse(a: np.ndarray, drop: tuple[int, ...]) -> np.ndarray:
    """logsumexp over the last axis with the given indices removed."""
    keep = [i for i in range(a.shape[-1]) if i not in drop]
    if not keep:
        return np.full(a.shape[:-1], -np.inf)
    return logsumexp(a[..., keep], axis=-1)


def _f_of_v(v: np.ndarray, inv1ma: float) -> np.ndarray:
    """f = -s log(1 - v) - v, the z_k-dependent part of d."""
    with np.errstate(divide="ignore"):
        return -inv1ma * np.log1p(-v) - v


def _exact_ocv_core(model, x, spec: EstimatorSpec, z: np.ndarray
                    ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Coefficients (d - c), d, f, f_minus for draws z of shape (n, K)."""
    alpha = spec.alpha
    inv1ma = 1.0 / (1.0 - alpha)
    k = spec.k
    log_q, log_p, score_table = model.latent_tables(x)
    q = np.exp(log_q)
    atab = (1.0 - alpha) * (log_p - log_q)              # (C,)
    hn2 = np.sum(score_table ** 2, axis=-1)             # (C,)
    gram = score_table @ score_table.T                  # (C, C)
    denom = float(q @ hn2)                              # E_k[||h_k||^2], z-free

    a = atab[z]                                         # (n, K)
    log_k = np.log(k)

    # Strict-exclusion log-sums: position k (and l) never touch their own entry.
    loo = np.stack([_excluded_lse(a, (kk,)) for kk in range(k)], axis=-1)  # (n, K)
    v = expit(a - loo)
    d = inv1ma * (np.logaddexp(a, loo) - log_k) - v

    if k == 1:
        # No leave-one-out mass: put all of d into the z_k-dependent part.
        f = d
        f_minus = np.zeros_like(d)
        d_sub = inv1ma * (atab - log_k) - 1.0           # (C,)
        num = np.broadcast_to((d_sub * hn2) @ q, a.shape).copy()
        c = f_minus + num / denom
        return d - c, d, f, f_minus

    f = _f_of_v(v, inv1ma)
    f_minus = inv1ma * (loo - log_k)

    # E_k[f_k ||h_k||^2]: substitute each class c for z_k.
    v_sub = expit(atab - loo[..., None])                # (n, K, C)
    f_sub = _f_of_v(v_sub, inv1ma)
    num = (f_sub * hn2) @ q                             # (n, K)

    # E_k[f_l h_k^T] h_l for l != k, z_k swept over classes:
    #   v_l(c) = sigmoid(a_l - log[sum_{m not in {k,l}} e^{a_m} + e^{atab_c}])
    pair = np.stack([
        np.stack([_excluded_lse(a, (kk, ll)) for ll in range(k)], axis=-1)
        for kk in range(k)], axis=-2)                   # (n, K_k, K_l)
    rest = np.logaddexp(pair[..., None], atab)          # (n, K_k, K_l, C)
    v_l = expit(a[..., None, :, None] - rest)
    f_l = _f_of_v(v_l, inv1ma)
    # gram_l[n, ll, c] = h(c)^T h(z_l); expectation over c (the swept z_k).
    gram_l = np.moveaxis(gram[:, z], 0, -1)[:, None, :, :]
    cross = np.einsum("nklc,c->nkl", f_l * gram_l, q)
    mask = ~np.eye(k, dtype=bool)
    num = num + (cross * mask).sum(axis=-1)
    c = f_minus + num / denom
    return d - c, d, f, f_minus


def exact_ocv_phi_batch(model, x, spec: EstimatorSpec, rng: Stream, n: int) -> np.ndarray:
    require(model.capabilities.enumerable_latent is not None,
            "exact optimal control needs an enumerable latent")
    z = model.sample_latents(x, spec.k, n, rng.child(0))
    coeff, _, _, _ = _exact_ocv_core(model, x, spec, z)
    return model.phi_grad_from_prefactors(x, z, coeff)


def exact_optimal_cv(model, x, spec: EstimatorSpec, rng: Stream) -> GradientEstimate:
    """One draw of the exactly-enumerated optimal-control estimator."""
    assert spec.kind == "exact_ocv"
    require(model.capabilities.enumerable_latent is not None,
            "exact optimal control needs an enumerable latent")
    require(model.capabilities.has_score, "exact optimal control needs scores")
    z = model.sample_latents(x, spec.k, 1, rng.child(0))
    coeff, d, f, f_minus = _exact_ocv_core(model, x, spec, z)
    phi_grad = model.phi_grad_from_prefactors(x, z, coeff)[0]
    from .score import theta_gradient_batch
    theta_grad = theta_gradient_batch(model, x, z, spec.alpha)[0]
    aux = {
        "control": (d - coeff)[0],
        "terms": ControlVariateTerms(f_k=f[0], f_minus_k=f_minus[0]),
        "coeff": coeff[0],
    }
    return GradientEstimate(phi_grad, theta_grad, aux)
