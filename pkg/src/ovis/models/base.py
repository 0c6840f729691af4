"""Model contract consumed by the gradient estimators.

A model bundles a generative distribution ``p_theta(x, z)`` and an inference
network ``q_phi(z | x)``, exposes analytic scores, and advertises what it can
do through :class:`ModelCapabilities`. Estimators check capabilities up
front and raise :class:`CapabilityError` on a mismatch.

Batch convention: latent draws carry shape ``(n, K, ...)`` where ``n``
indexes Monte Carlo replicates and ``K`` importance samples. Per-replicate
gradients are assembled from scalar prefactors: an estimator computes
coefficients ``coeff[n, k]`` and the model contracts them against its score
vectors, ``g[n] = sum_k coeff[n, k] * h[n, k]``, without materializing the
per-sample score matrix when a cheaper factorization exists.

Models are immutable snapshots during gradient estimation; parameter updates
happen between estimation rounds in a single owner.
"""

from __future__ import annotations

from dataclasses import dataclass

__all__ = ["CapabilityError", "ModelCapabilities", "Model"]


class CapabilityError(TypeError):
    """An estimator was asked to run on a model lacking a capability."""


@dataclass(frozen=True)
class ModelCapabilities:
    has_score: bool = False
    has_pathwise: bool = False
    enumerable_latent: int | None = None  # cardinality C when enumerable
    has_generative_sampling: bool = False


def require(condition: bool, message: str) -> None:
    if not condition:
        raise CapabilityError(message)


class Model:
    """Duck-typed base; concrete models override what they support.

    Required everywhere:
        capabilities : ModelCapabilities
        phi, theta   : ParameterVector
        sample_latents(x, k, n, rng)        -> z with shape (n, k, ...)
        log_weight(x, z)                    -> (n, k)
        phi_grad_from_prefactors(x, z, c)   -> (n, |phi|)
        theta_grad_from_prefactors(x, z, c) -> (n, |theta|)

    Score models additionally expose ``score_phi(x, z) -> h`` for single
    samples (finite-difference validation); enumerable models expose
    ``latent_tables(x)``; pathwise models expose the epsilon path; generative
    samplers expose ``sample_joint`` and ``score_phi_pairs``.
    """

    capabilities = ModelCapabilities()
