"""Numerically stable algebra over importance weights.

Everything downstream (gradient estimators, diagnostics, the bound itself)
is a function of the K log importance weights of one datapoint. This module
owns that algebra: normalization at a Renyi smoothing level ``alpha``,
effective sample size, and the leave-one-out sums used by every
control-variate estimator.

Conventions, for a weight set ``log_w`` of size K and ``alpha`` in [0, 1]:

    a_k       = (1 - alpha) * log_w_k           (smoothed log weights)
    log Z_K   = logsumexp(a) - log K            (log of the smoothed mean)
    v_k       = softmax(a)_k                    (normalized weights)
    d_k       = log Z_K / (1 - alpha) - v_k     (score-estimator prefactor)
    ESS       = 1 / sum_k v_k^2                 (effective sample size)

``alpha = 0`` is the plain importance-weighted case; ``alpha = 1`` is taken
as an analytic limit (``v_k = 1/K``, ``d_k = mean(log_w) - 1/K``). Values of
``alpha`` inside ``(1 - 1e-6, 1)`` are rejected: the ``1/(1 - alpha)``
prefactor would silently amplify cancellation noise.

All functions accept arrays with the particle axis last and broadcast over
leading axes, so Monte Carlo replicates can be processed in batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp as _logsumexp

__all__ = [
    "ALPHA_LIMIT_GAP",
    "LeaveOneOut",
    "WeightSet",
    "build_weight_set",
    "ess",
    "leave_one_out",
    "log_ess",
    "log_sum_exp",
    "loo_log_sum_exp",
    "loo_sum",
    "normalized_weights",
    "prefactor_d",
    "smoothed_log_weights",
]

# alpha values in (1 - ALPHA_LIMIT_GAP, 1) are rejected; alpha == 1 uses the
# analytic limit branch.
ALPHA_LIMIT_GAP = 1e-6

# Fraction of the total (shifted) weight mass below which a leave-one-out sum
# is recomputed with a dedicated logsumexp over the K-1 survivors.
_LOO_RESCUE_THRESHOLD = 1e-6


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if 1.0 - ALPHA_LIMIT_GAP < alpha < 1.0:
        raise ValueError(
            f"alpha={alpha} is inside (1 - {ALPHA_LIMIT_GAP}, 1); the 1/(1-alpha) "
            "prefactor is numerically unstable there. Use alpha = 1 exactly "
            "(analytic limit) or a smaller alpha."
        )
    return alpha


def log_sum_exp(values, axis=None):
    """log(sum(exp(values))), stable under large shifts.

    Shift-invariant: ``log_sum_exp(v + c) == log_sum_exp(v) + c``. Rejects
    empty input and NaN entries.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("log_sum_exp of an empty array is undefined")
    if np.isnan(values).any():
        raise ValueError("log_sum_exp input contains NaN")
    return _logsumexp(values, axis=axis)


def smoothed_log_weights(log_w: np.ndarray, alpha: float) -> np.ndarray:
    """(1 - alpha) * log_w, the log weights of the Renyi-smoothed set."""
    return (1.0 - alpha) * np.asarray(log_w, dtype=np.float64)


def normalized_weights(log_w, alpha: float = 0.0):
    """v_k(alpha): softmax of the smoothed log weights along the last axis."""
    log_w = np.asarray(log_w, dtype=np.float64)
    if alpha == 1.0:
        return np.full_like(log_w, 1.0 / log_w.shape[-1])
    a = smoothed_log_weights(log_w, alpha)
    a_max = np.max(a, axis=-1, keepdims=True)
    e = np.exp(a - a_max)
    return e / np.sum(e, axis=-1, keepdims=True)


def log_zk(log_w, alpha: float = 0.0):
    """log Z_K(alpha) = logsumexp((1-alpha) log_w) - log K."""
    log_w = np.asarray(log_w, dtype=np.float64)
    k = log_w.shape[-1]
    if alpha == 1.0:
        return np.zeros(log_w.shape[:-1])
    return _logsumexp(smoothed_log_weights(log_w, alpha), axis=-1) - np.log(k)


def prefactor_d(log_w, alpha: float = 0.0):
    """d_k(alpha) = log Z_K(alpha) / (1 - alpha) - v_k(alpha).

    At ``alpha = 1`` the analytic limit ``mean(log_w) - 1/K`` is used.
    """
    log_w = np.asarray(log_w, dtype=np.float64)
    k = log_w.shape[-1]
    if alpha == 1.0:
        d = np.mean(log_w, axis=-1, keepdims=True) - 1.0 / k
        return np.broadcast_to(d, log_w.shape).copy()
    scale = 1.0 / (1.0 - alpha)
    lz = log_zk(log_w, alpha)
    return scale * lz[..., None] - normalized_weights(log_w, alpha)


def log_ess(log_w, alpha: float = 0.0):
    """log ESS(alpha) = 2 lse(a) - lse(2a) with a the smoothed log weights."""
    a = smoothed_log_weights(np.asarray(log_w, dtype=np.float64), alpha)
    return 2.0 * _logsumexp(a, axis=-1) - _logsumexp(2.0 * a, axis=-1)


def loo_sum(values: np.ndarray) -> np.ndarray:
    """sum_{l != k} values_l along the last axis, for every k.

    Computed from exclusive prefix and suffix sums, so the result for index k
    never touches ``values[k]`` (no cancellation, and the output bits are a
    function of the other K-1 entries only).
    """
    values = np.asarray(values, dtype=np.float64)
    c = np.cumsum(values, axis=-1)
    prefix = np.concatenate([np.zeros_like(c[..., :1]), c[..., :-1]], axis=-1)
    r = np.cumsum(values[..., ::-1], axis=-1)[..., ::-1]
    suffix = np.concatenate([r[..., 1:], np.zeros_like(r[..., :1])], axis=-1)
    return prefix + suffix


def _excluded_lse(a: np.ndarray, k: int) -> np.ndarray:
    """logsumexp over the last axis with index k removed (own-max shift)."""
    rest = np.delete(a, k, axis=-1)
    return _logsumexp(rest, axis=-1)


def loo_log_sum_exp(a: np.ndarray) -> np.ndarray:
    """log sum_{l != k} exp(a_l) along the last axis, for every k.

    Requires K >= 2. Uses one shared shift plus exclusive prefix/suffix sums
    (O(K), all-positive additions). Entries whose leave-one-out mass is a
    negligible fraction of the total -- where the shared shift would under- or
    overflow the survivors -- are recomputed with a dedicated logsumexp over
    the K-1 remaining values.
    """
    a = np.asarray(a, dtype=np.float64)
    k = a.shape[-1]
    if k < 2:
        raise ValueError("leave-one-out requires K >= 2")
    a_max = np.max(a, axis=-1, keepdims=True)
    e = np.exp(a - a_max)
    loo = loo_sum(e)
    total = np.sum(e, axis=-1, keepdims=True)
    with np.errstate(divide="ignore"):
        out = a_max + np.log(loo)
    needs_rescue = loo <= _LOO_RESCUE_THRESHOLD * total
    if np.any(needs_rescue):
        for kk in np.unique(np.nonzero(needs_rescue)[-1]):
            rows = needs_rescue[..., kk]
            exact = _excluded_lse(a, int(kk))
            out[..., kk] = np.where(rows, exact, out[..., kk])
    return out


@dataclass(frozen=True)
class WeightSet:
    """The K log importance weights of one datapoint, at smoothing alpha.

    Derived quantities are computed eagerly at construction; instances are
    immutable and safe to share across threads.
    """

    log_w: np.ndarray
    alpha: float
    k: int = field(init=False)
    log_zk: float = field(init=False)
    v: np.ndarray = field(init=False)
    d: np.ndarray = field(init=False)

    def __post_init__(self):
        log_w = np.atleast_1d(np.asarray(self.log_w, dtype=np.float64))
        if log_w.ndim != 1:
            raise ValueError(f"log_w must be a vector, got shape {log_w.shape}")
        if log_w.size < 1:
            raise ValueError("a weight set needs at least one particle")
        if not np.isfinite(log_w).all():
            raise ValueError("log weights must be finite (no NaN or +-inf)")
        alpha = _check_alpha(self.alpha)
        log_w = log_w.copy()
        log_w.setflags(write=False)
        object.__setattr__(self, "log_w", log_w)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "k", log_w.size)
        object.__setattr__(self, "log_zk", float(log_zk(log_w, alpha)))
        v = normalized_weights(log_w, alpha)
        v.setflags(write=False)
        object.__setattr__(self, "v", v)
        d = prefactor_d(log_w, alpha)
        d.setflags(write=False)
        object.__setattr__(self, "d", d)

    @property
    def ess(self) -> float:
        """Effective sample size 1 / sum_k v_k(alpha)^2, in [1, K]."""
        return float(np.exp(log_ess(self.log_w, self.alpha)))


def build_weight_set(log_w, alpha: float = 0.0) -> WeightSet:
    """Construct a validated :class:`WeightSet`."""
    return WeightSet(np.asarray(log_w), alpha)


def ess(ws: WeightSet) -> float:
    """Effective sample size of a weight set at its own alpha."""
    return ws.ess


@dataclass(frozen=True)
class LeaveOneOut:
    """Leave-one-out normalizers of a weight set (at its smoothed weights).

    * ``log_z_tilde[k]``  : log (1/K) sum_{l != k} w_l        (biased)
    * ``log_z_hat_arith[k]``: log (1/(K-1)) sum_{l != k} w_l  (unbiased mean;
      this is also the arithmetic VIMCO replacement Z-hat)
    * ``log_z_hat_geom[k]`` : VIMCO Z-hat with the held-out weight replaced
      by the geometric mean of the others.
    """

    log_z_tilde: np.ndarray
    log_z_hat_arith: np.ndarray
    log_z_hat_geom: np.ndarray


def leave_one_out(ws: WeightSet) -> LeaveOneOut:
    """Leave-one-out quantities of a weight set. Requires K >= 2."""
    if ws.k < 2:
        raise ValueError("leave-one-out is undefined for K = 1")
    a = smoothed_log_weights(ws.log_w, ws.alpha)
    k = ws.k
    loo_lse = loo_log_sum_exp(a)
    log_z_tilde = loo_lse - np.log(k)
    log_z_hat_arith = loo_lse - np.log(k - 1)
    # Geometric: (1/K) (sum_{l != k} w_l + exp(mean_{l != k} log w_l)).
    loo_log_mean = loo_sum(a) / (k - 1)
    log_z_hat_geom = np.logaddexp(loo_lse, loo_log_mean) - np.log(k)
    return LeaveOneOut(log_z_tilde, log_z_hat_arith, log_z_hat_geom)
