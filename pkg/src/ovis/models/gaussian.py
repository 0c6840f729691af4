"""Linear-Gaussian testbed with analytic scores and exact marginals.

Generative model and inference network (D-dimensional):

    z ~ N(mu, I)        x | z ~ N(z, I)        q(z | x) = N(A x + b, (2/3) I)

The joint is Gaussian, so the exact marginal is ``log N(x; mu, 2 I)`` and the
optimal inference parameters are ``A* = I/2`` and ``b* = mu_hat / 2`` with
``mu_hat`` the sample mean of the dataset. The q covariance is a fixed
constant, never trainable: the model is intentionally slightly mis-specified
(the true posterior variance is 1/2).

Parameters: ``theta = (mu,)``, ``phi = (A, b)``. Because every per-sample
score and pathwise derivative for ``A`` is an outer product of the matching
``b``-space vector with ``x``, gradients are assembled from D-dimensional
cores and expanded to the (A, b) layout at the end.
"""

from __future__ import annotations

import numpy as np

from ..params import ParameterVector
from ..rng import Stream
from .base import Model, ModelCapabilities

__all__ = ["GaussianToyModel", "gaussian_make", "gaussian_score", "gaussian_pathwise"]

Q_VAR = 2.0 / 3.0
Q_PREC = 1.0 / Q_VAR  # 3/2


class GaussianToyModel(Model):

    capabilities = ModelCapabilities(has_score=True, has_pathwise=True)

    def __init__(self, d: int, mu: np.ndarray, a: np.ndarray, b: np.ndarray):
        self.d = int(d)
        self.theta = ParameterVector.zeros([("mu", (d,))])
        self.theta.segment("mu")[:] = mu
        self.phi = ParameterVector.zeros([("A", (d, d)), ("b", (d,))])
        self.phi.segment("A")[:] = a
        self.phi.segment("b")[:] = b

    # -- distributions -------------------------------------------------------

    def q_mean(self, x: np.ndarray) -> np.ndarray:
        a = self.phi.segment("A")
        b = self.phi.segment("b")
        return x @ a.T + b

    def sample_latents(self, x, k: int, n: int, rng: Stream) -> np.ndarray:
        eps = self.sample_eps(k, n, rng)
        return self.latents_from_eps(x, eps)

    def sample_eps(self, k: int, n: int, rng: Stream) -> np.ndarray:
        return rng.generator().standard_normal((n, k, self.d))

    def latents_from_eps(self, x, eps: np.ndarray) -> np.ndarray:
        """Deterministic sampling path z = A x + b + sqrt(2/3) eps."""
        m = self.q_mean(np.asarray(x, dtype=np.float64))
        return m[..., None, :] + np.sqrt(Q_VAR) * eps

    def log_weight(self, x, z: np.ndarray) -> np.ndarray:
        """log p(x, z) - log q(z | x) for z of shape (..., K, D)."""
        x = np.asarray(x, dtype=np.float64)
        mu = self.theta.segment("mu")
        m = self.q_mean(x)[..., None, :]
        d = self.d
        log_pz = -0.5 * np.sum((z - mu) ** 2, axis=-1) - 0.5 * d * np.log(2 * np.pi)
        log_px = -0.5 * np.sum((x[..., None, :] - z) ** 2, axis=-1) - 0.5 * d * np.log(2 * np.pi)
        log_q = -0.5 * Q_PREC * np.sum((z - m) ** 2, axis=-1) - 0.5 * d * np.log(2 * np.pi * Q_VAR)
        return log_pz + log_px - log_q

    def exact_log_marginal(self, x) -> np.ndarray:
        """Closed form log p(x) = log N(x; mu, 2 I)."""
        x = np.asarray(x, dtype=np.float64)
        mu = self.theta.segment("mu")
        return -0.25 * np.sum((x - mu) ** 2, axis=-1) - 0.5 * self.d * np.log(4 * np.pi)

    # -- gradients -----------------------------------------------------------

    def _assemble_phi(self, core: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Map b-space vectors (n, D) to the flat (A, b) layout (n, |phi|)."""
        ga = core[..., :, None] * x[..., None, :]
        return np.concatenate([ga.reshape(*core.shape[:-1], self.d * self.d), core], axis=-1)

    def score_phi_core(self, x, z: np.ndarray) -> np.ndarray:
        """b-segment of the score: (3/2) (z - A x - b); the A-segment is its
        outer product with x."""
        m = self.q_mean(np.asarray(x, dtype=np.float64))
        return Q_PREC * (z - m[..., None, :])

    def phi_grad_from_prefactors(self, x, z, coeff: np.ndarray) -> np.ndarray:
        """sum_k coeff[n, k] h[n, k] over score vectors, flat phi layout."""
        x = np.asarray(x, dtype=np.float64)
        core = np.einsum("...k,...kd->...d", coeff, self.score_phi_core(x, z))
        return self._assemble_phi(core, x)

    def grad_z_log_weight(self, x, z: np.ndarray) -> np.ndarray:
        """d log w / dz = (mu - z) + (x - z) + (3/2)(z - A x - b)."""
        x = np.asarray(x, dtype=np.float64)
        mu = self.theta.segment("mu")
        m = self.q_mean(x)[..., None, :]
        return (mu - z) + (x[..., None, :] - z) + Q_PREC * (z - m)

    def phi_grad_from_pathwise_prefactors(self, x, z, coeff: np.ndarray) -> np.ndarray:
        """sum_k coeff[n, k] (d log w_k / dz_k) dz_k/dphi, flat phi layout."""
        x = np.asarray(x, dtype=np.float64)
        core = np.einsum("...k,...kd->...d", coeff, self.grad_z_log_weight(x, z))
        return self._assemble_phi(core, x)

    def theta_grad_from_prefactors(self, x, z, coeff: np.ndarray) -> np.ndarray:
        """sum_k coeff[n, k] d log p(x, z_k) / dmu = sum_k coeff (z_k - mu)."""
        mu = self.theta.segment("mu")
        return np.einsum("...k,...kd->...d", coeff, z - mu)

    def score_phi(self, x, z) -> np.ndarray:
        """Full flat score vector for a single (x, z) pair."""
        x = np.asarray(x, dtype=np.float64)
        core = self.score_phi_core(x, np.asarray(z, dtype=np.float64)[None, :])[0]
        return self._assemble_phi(core[None, :], x)[0]


def gaussian_make(d: int, n: int, noise_scale: float, seed: int
                  ) -> tuple[GaussianToyModel, np.ndarray]:
    """Draw the true model, a frozen dataset, and a perturbed model instance.

    mu* ~ N(0, I); the dataset holds n points from the true model; the
    returned model's parameters are the optimum (A* = I/2, b* = mu_hat/2,
    mu = mu_hat, with mu_hat the dataset sample mean) plus Gaussian noise of
    scale ``noise_scale``.
    """
    if d < 1 or n < 1:
        raise ValueError(f"need d >= 1 and n >= 1, got d={d}, n={n}")
    if noise_scale < 0:
        raise ValueError("noise_scale must be >= 0")
    stream = Stream(seed, (0x6A,))
    gen_truth = stream.child(0).generator()
    mu_star = gen_truth.standard_normal(d)
    z = mu_star + gen_truth.standard_normal((n, d))
    dataset = z + gen_truth.standard_normal((n, d))
    mu_hat = dataset.mean(axis=0)
    gen_noise = stream.child(1).generator()
    a = np.eye(d) / 2 + noise_scale * gen_noise.standard_normal((d, d))
    b = mu_hat / 2 + noise_scale * gen_noise.standard_normal(d)
    mu = mu_hat + noise_scale * gen_noise.standard_normal(d)
    model = GaussianToyModel(d, mu, a, b)
    model.mu_hat = mu_hat
    model.a_star = np.eye(d) / 2
    model.b_star = mu_hat / 2
    return model, dataset


def gaussian_score(model: GaussianToyModel, x, z) -> np.ndarray:
    """Analytic d log q(z|x) / d(A, b) for one sample, flat phi layout."""
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if x.shape != (model.d,) or z.shape != (model.d,):
        raise ValueError(f"expected shape ({model.d},) for x and z")
    return model.score_phi(x, z)


def gaussian_pathwise(model: GaussianToyModel, x, epsilon):
    """Sampling path z = A x + b + sqrt(2/3) eps and its Jacobian action.

    Returns ``(z, pullback)`` where ``pullback(u)`` maps a downstream
    z-gradient ``u`` to the flat (A, b) layout via (dz/dphi)^T u.
    """
    x = np.asarray(x, dtype=np.float64)
    epsilon = np.asarray(epsilon, dtype=np.float64)
    if x.shape != (model.d,) or epsilon.shape != (model.d,):
        raise ValueError(f"expected shape ({model.d},) for x and epsilon")
    z = model.latents_from_eps(x, epsilon[None, :])[0]

    def pullback(u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        return model._assemble_phi(u[None, :], x)[0]

    return z, pullback
