"""Gaussian mixture testbed with a categorical latent and an analytic MLP.

    p_theta(z) = Cat(softmax(theta))      z in {0, ..., C-1}
    p(x | z)   = N(x; 10 z, 5^2)          emissions fixed, never trainable
    q_phi(z|x) = Cat(softmax(eta_phi(x))) eta: 1 -> 16 -> C MLP, tanh hidden

The true generative weights are proportional to ``c + 5``; the softmax
normalizes them. The latent is enumerable, so scores, exact marginals,
posteriors and exact bound gradients are all available in closed form.

The MLP is small enough that forward and backward passes are hand-written
numpy. For a fixed datapoint the per-class score vectors ``h(z) = d log
q(z|x) / dphi`` form a (C, |phi|) table computed once and indexed by the
sampled classes, which is what makes 1e5-replicate Monte Carlo runs cheap.
"""

from __future__ import annotations

import numpy as np
from scipy.special import log_softmax, logsumexp, softmax

from ..params import ParameterVector
from ..rng import Stream
from .base import Model, ModelCapabilities

__all__ = ["GmmModel", "gmm_make", "gmm_score", "enumerate_latents", "true_posterior"]

HIDDEN = 16
EMISSION_MEAN_STEP = 10.0
EMISSION_STD = 5.0


def _emission_log_lik(x, z_values: np.ndarray) -> np.ndarray:
    """log N(x; 10 z, 25) broadcast over x[..., None] vs z_values."""
    x = np.asarray(x, dtype=np.float64)
    mu = EMISSION_MEAN_STEP * z_values
    return (-0.5 * ((x[..., None] - mu) / EMISSION_STD) ** 2
            - 0.5 * np.log(2 * np.pi * EMISSION_STD ** 2))


def _sample_categorical(gen: np.random.Generator, probs: np.ndarray, shape) -> np.ndarray:
    """Sample ints from a single categorical ``probs`` (C,)."""
    cdf = np.cumsum(probs)
    cdf[-1] = 1.0
    u = gen.random(shape)
    return np.searchsorted(cdf, u, side="right").astype(np.int64)


def _scatter_sum(z: np.ndarray, coeff: np.ndarray, c: int) -> np.ndarray:
    """Accumulate coeff[..., k] into class buckets: out[..., z[..., k]] += coeff.

    z and coeff share shape (..., K); returns (..., C).
    """
    lead = z.shape[:-1]
    rows = int(np.prod(lead, dtype=np.int64))
    flat_z = z.reshape(rows, -1)
    flat_c = coeff.reshape(rows, -1)
    combined = (np.arange(rows)[:, None] * c + flat_z).reshape(-1)
    out = np.bincount(combined, weights=flat_c.reshape(-1), minlength=rows * c)
    return out.reshape(*lead, c)


class GmmModel(Model):

    capabilities = ModelCapabilities(
        has_score=True, enumerable_latent=None, has_generative_sampling=True)

    def __init__(self, c: int, theta_star: np.ndarray, phi: ParameterVector):
        self.c = int(c)
        self.capabilities = ModelCapabilities(
            has_score=True, enumerable_latent=self.c, has_generative_sampling=True)
        self.theta_star = np.asarray(theta_star, dtype=np.float64)
        self.theta = ParameterVector.zeros([("logits", (c,))])
        self.theta.segment("logits")[:] = theta_star
        self.phi = phi
        self.z_values = np.arange(c)

    # -- MLP -----------------------------------------------------------------

    def _forward(self, x):
        """Hidden activations and logits; x scalar or (...,) array."""
        x = np.asarray(x, dtype=np.float64)
        w1 = self.phi.segment("W1")[:, 0]
        b1 = self.phi.segment("b1")
        w2 = self.phi.segment("W2")
        b2 = self.phi.segment("b2")
        t = np.tanh(x[..., None] * w1 + b1)
        eta = t @ w2.T + b2
        return t, eta

    def q_logits(self, x) -> np.ndarray:
        return self._forward(x)[1]

    def q_probs(self, x) -> np.ndarray:
        return softmax(self.q_logits(x), axis=-1)

    def _backprop(self, x, t: np.ndarray, s: np.ndarray) -> np.ndarray:
        """Pull logit-space gradients s (..., C) back to flat phi (..., P).

        ``t`` is the matching hidden activation (..., H); leading axes of
        x/t/s must broadcast.
        """
        x = np.asarray(x, dtype=np.float64)
        w2 = self.phi.segment("W2")
        g_b2 = s
        g_w2 = s[..., :, None] * t[..., None, :]
        back = (s @ w2) * (1.0 - t ** 2)
        g_b1 = back
        g_w1 = back * x[..., None]
        lead = s.shape[:-1]
        return np.concatenate([
            g_w1.reshape(*lead, HIDDEN),
            g_b1.reshape(*lead, HIDDEN),
            g_w2.reshape(*lead, self.c * HIDDEN),
            g_b2.reshape(*lead, self.c),
        ], axis=-1)

    # -- tables for a fixed datapoint -----------------------------------------

    def latent_tables(self, x) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(log q(z|x), log p(x, z), score_table) over all C classes.

        ``score_table[z]`` is the flat phi-score of class z, shape (C, P).
        """
        t, eta = self._forward(float(x))
        log_q = log_softmax(eta)
        q = np.exp(log_q)
        log_prior = log_softmax(self.theta.segment("logits"))
        log_p = log_prior + _emission_log_lik(float(x), self.z_values)
        upstream = np.eye(self.c) - q  # row z: e_z - q
        score_table = self._backprop(float(x), t, upstream)
        return log_q, log_p, score_table

    def exact_log_marginal(self, x) -> float:
        _, log_p, _ = self.latent_tables(x)
        return float(logsumexp(log_p))

    def posterior(self, x) -> np.ndarray:
        """Exact p_theta(z | x) by enumeration."""
        _, log_p, _ = self.latent_tables(x)
        return softmax(log_p)

    # -- sampling --------------------------------------------------------------

    def sample_latents(self, x, k: int, n: int, rng: Stream) -> np.ndarray:
        probs = self.q_probs(float(x))
        return _sample_categorical(rng.generator(), probs, (n, k))

    def sample_latents_batch(self, xs: np.ndarray, k: int, rng: Stream,
                             n: int | None = None) -> np.ndarray:
        """Draws from q(.|x_b) for a batch of datapoints.

        Returns (B, k) ints, or (n, B, k) when ``n`` is given.
        """
        xs = np.asarray(xs, dtype=np.float64)
        cdf = np.cumsum(self.q_probs(xs), axis=-1)
        cdf[..., -1] = 1.0
        if n is None:
            u = rng.generator().random((xs.size, k))
            idx = np.sum(u[..., None] > cdf[:, None, :], axis=-1)
        else:
            u = rng.generator().random((n, xs.size, k))
            idx = np.sum(u[..., None] > cdf[None, :, None, :], axis=-1)
        return np.minimum(idx, self.c - 1).astype(np.int64)

    def sample_joint(self, n: int, rng: Stream) -> tuple[np.ndarray, np.ndarray]:
        """Dream (x, z) pairs from the trainable generative model."""
        gen = rng.generator()
        probs = softmax(self.theta.segment("logits"))
        z = _sample_categorical(gen, probs, (n,))
        x = EMISSION_MEAN_STEP * z + EMISSION_STD * gen.standard_normal(n)
        return x, z

    def sample_dataset(self, n: int, rng: Stream) -> np.ndarray:
        """Observations from the *true* model p_{theta*}."""
        gen = rng.generator()
        probs = softmax(self.theta_star)
        z = _sample_categorical(gen, probs, (n,))
        return EMISSION_MEAN_STEP * z + EMISSION_STD * gen.standard_normal(n)

    # -- weights and gradients --------------------------------------------------

    def log_weight(self, x, z: np.ndarray) -> np.ndarray:
        log_q, log_p, _ = self.latent_tables(x)
        lw = log_p - log_q
        return lw[z]

    def phi_grad_from_prefactors(self, x, z, coeff: np.ndarray) -> np.ndarray:
        _, _, score_table = self.latent_tables(x)
        cls_w = _scatter_sum(z, coeff, self.c)  # per-class prefactor mass
        return cls_w @ score_table

    def theta_grad_from_prefactors(self, x, z, coeff: np.ndarray) -> np.ndarray:
        """sum_k coeff_k (e_{z_k} - softmax(theta)), flat theta layout."""
        probs = softmax(self.theta.segment("logits"))
        cls_w = _scatter_sum(z, coeff, self.c)
        return cls_w - coeff.sum(axis=-1)[..., None] * probs

    def score_phi(self, x, z: int) -> np.ndarray:
        _, _, score_table = self.latent_tables(x)
        return score_table[int(z)]

    def score_phi_pairs(self, xs: np.ndarray, zs: np.ndarray) -> np.ndarray:
        """Scores d log q(z_i | x_i)/dphi for paired (x_i, z_i), shape (n, P)."""
        xs = np.asarray(xs, dtype=np.float64)
        zs = np.asarray(zs)
        t, eta = self._forward(xs)
        q = softmax(eta, axis=-1)
        upstream = -q
        upstream[np.arange(zs.size), zs] += 1.0
        return self._backprop(xs, t, upstream)

    # -- batched-x gradient assembly (training) ----------------------------------

    def log_weight_batch(self, xs: np.ndarray, z: np.ndarray) -> np.ndarray:
        """log w for xs (B,) and z of shape (..., B, K)."""
        xs = np.asarray(xs, dtype=np.float64)
        log_q = log_softmax(self.q_logits(xs), axis=-1)
        log_prior = log_softmax(self.theta.segment("logits"))
        log_p = log_prior + _emission_log_lik(xs, self.z_values)
        lw = log_p - log_q  # (B, C)
        b_idx = np.arange(xs.size)[:, None]
        if z.ndim == 2:
            return lw[b_idx, z]
        return lw[b_idx[None, ...], z]

    def phi_grad_mean_from_prefactors(self, xs: np.ndarray, z: np.ndarray,
                                      coeff: np.ndarray) -> np.ndarray:
        """Batch-averaged phi gradient for xs (B,), z/coeff (..., B, K).

        Returns (..., P): mean over the batch of sum_k coeff h.
        """
        xs = np.asarray(xs, dtype=np.float64)
        b = xs.size
        t, eta = self._forward(xs)           # (B, H), (B, C)
        q = softmax(eta, axis=-1)
        s = _scatter_sum(z, coeff, self.c)   # (..., B, C)
        s -= coeff.sum(axis=-1)[..., None] * q
        w2 = self.phi.segment("W2")
        g_b2 = s.sum(axis=-2) / b
        g_w2 = np.einsum("...bc,bh->...ch", s, t) / b
        back = (s @ w2) * (1.0 - t ** 2)     # (..., B, H)
        g_b1 = back.sum(axis=-2) / b
        g_w1 = np.einsum("...bh,b->...h", back, xs) / b
        lead = s.shape[:-2]
        return np.concatenate([
            g_w1.reshape(*lead, HIDDEN),
            g_b1.reshape(*lead, HIDDEN),
            g_w2.reshape(*lead, self.c * HIDDEN),
            g_b2.reshape(*lead, self.c),
        ], axis=-1)

    def theta_grad_mean_from_prefactors(self, xs: np.ndarray, z: np.ndarray,
                                        coeff: np.ndarray) -> np.ndarray:
        probs = softmax(self.theta.segment("logits"))
        b = np.asarray(xs).size
        s = _scatter_sum(z, coeff, self.c).sum(axis=-2)  # (..., C)
        s -= coeff.sum(axis=(-1, -2))[..., None] * probs
        return s / b


def gmm_make(c: int, seed: int = 0) -> GmmModel:
    """Build the mixture model with true weights prop. to (c + 5).

    The generative logits are set to the true values ``log(c + 5)``; training
    harnesses re-initialize them. The inference MLP is initialized per layer
    with uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) draws from ``seed``.
    """
    if c < 2:
        raise ValueError(f"need at least 2 clusters, got {c}")
    theta_star = np.log(np.arange(c) + 5.0)
    phi = ParameterVector.zeros([
        ("W1", (HIDDEN, 1)), ("b1", (HIDDEN,)),
        ("W2", (c, HIDDEN)), ("b2", (c,)),
    ])
    gen = Stream(seed, (0x4D,)).generator()
    for name, fan_in in (("W1", 1), ("b1", 1), ("W2", HIDDEN), ("b2", HIDDEN)):
        bound = 1.0 / np.sqrt(fan_in)
        seg = phi.segment(name)
        seg[...] = gen.uniform(-bound, bound, size=seg.shape)
    return GmmModel(c, theta_star, phi)


def gmm_score(model: GmmModel, x, z: int) -> np.ndarray:
    """Analytic d log q(z|x) / dphi through the 1-16-C tanh MLP."""
    if not 0 <= int(z) < model.c:
        raise ValueError(f"latent {z} outside {{0..{model.c - 1}}}")
    return model.score_phi(x, int(z))


def enumerate_latents(model: GmmModel, x):
    """Yield (z, log q(z|x), log p(x, z)) for every latent value once."""
    if model.capabilities.enumerable_latent is None:
        from .base import CapabilityError
        raise CapabilityError("model latent is not enumerable")
    log_q, log_p, _ = model.latent_tables(x)
    for z in range(model.c):
        yield z, float(log_q[z]), float(log_p[z])


def true_posterior(theta_star: np.ndarray, xs) -> np.ndarray:
    """p_{theta*}(z | x) for each x, by enumeration. Shape (len(xs), C)."""
    theta_star = np.asarray(theta_star, dtype=np.float64)
    z_values = np.arange(theta_star.size)
    log_joint = log_softmax(theta_star) + _emission_log_lik(xs, z_values)
    return softmax(log_joint, axis=-1)
