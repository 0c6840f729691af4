"""Monte Carlo characterization of gradient estimators.

``gradient_stats`` runs N independent estimator replicates and reduces them
to per-parameter mean, variance and SNR plus two scalars used for plotting:
the parameter-wise average SNR of a named segment and the directional SNR.

Replicates are evaluated in fixed-size chunks, each drawing from its own
random stream, and chunk summaries are merged in a pairwise tree with
Chan-style moment combination -- so results are bit-reproducible for a given
seed no matter how many worker threads execute the chunks.

Directional SNR: the mean-gradient direction ``u`` is estimated from the
first half of the replicates; the DSNR is the SNR of the scalar projections
``g . u`` over the second half. Splitting avoids the selection bias of
projecting replicates onto their own mean.

Also here: the exact bound gradient by full latent enumeration (the oracle
every unbiasedness test compares against), posterior-quality metrics for the
mixture testbed, and log-log slope fits for the scaling studies.
"""

from __future__ import annotations

import csv
import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, softmax
from scipy.stats import linregress

from .estimators import EstimatorSpec, estimate_phi_batch, estimate_theta_batch
from .models.base import require
from .models.gmm import GmmModel, true_posterior
from .rng import Stream
from .weights import prefactor_d

__all__ = [
    "CSV_COLUMNS",
    "GradientStats",
    "SlopeFit",
    "exact_iwae_gradient",
    "gradient_stats",
    "loglog_slope",
    "posterior_l2",
    "stats_row",
    "write_stats_csv",
]

CHUNK = 4096


class ReplicateError(RuntimeError):
    """A Monte Carlo replicate produced a non-finite gradient."""

    def __init__(self, message: str, seed: int, stream_path: tuple[int, ...]):
        super().__init__(message)
        self.seed = seed
        self.stream_path = stream_path


@dataclass
class _Moments:
    count: int
    mean: np.ndarray
    m2: np.ndarray

    @classmethod
    def of(cls, batch: np.ndarray) -> "_Moments":
        n = batch.shape[0]
        mean = batch.mean(axis=0)
        m2 = ((batch - mean) ** 2).sum(axis=0)
        return cls(n, mean, m2)

    def merge(self, other: "_Moments") -> "_Moments":
        n = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * (other.count / n)
        m2 = self.m2 + other.m2 + delta ** 2 * (self.count * other.count / n)
        return _Moments(n, mean, m2)


def _tree_merge(parts: list[_Moments]) -> _Moments:
    while len(parts) > 1:
        nxt = []
        for i in range(0, len(parts) - 1, 2):
            nxt.append(parts[i].merge(parts[i + 1]))
        if len(parts) % 2:
            nxt.append(parts[-1])
        parts = nxt
    return parts[0]


@dataclass
class GradientStats:
    n_replicates: int
    mean: np.ndarray
    variance: np.ndarray
    snr: np.ndarray
    dsnr: float
    avg_snr: float
    avg_variance: float
    avg_abs_mean: float


def _snr_of(mean: np.ndarray, variance: np.ndarray) -> np.ndarray:
    """|mean| / sqrt(var); 0/0 -> 0, finite/0 -> +inf sentinel."""
    mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
    variance = np.atleast_1d(np.asarray(variance, dtype=np.float64))
    out = np.zeros_like(mean)
    zero_var = variance <= 0.0
    np.divide(np.abs(mean), np.sqrt(variance), out=out, where=~zero_var)
    out[zero_var & (mean != 0.0)] = np.inf
    return out


def gradient_stats(model, x, spec: EstimatorSpec, n_mc: int, rng: Stream,
                   segment_slice: slice | None = None, component: str = "phi",
                   threads: int = 1) -> GradientStats:
    """Mean/variance/SNR/DSNR of ``n_mc`` estimator replicates.

    ``segment_slice`` restricts the reported statistics to a parameter
    segment (full vector when None); ``component`` selects the phi estimator
    named by ``spec`` or the shared theta gradient at its (K, alpha).
    """
    if n_mc < 2:
        raise ValueError("need at least 2 replicates for a variance")
    runner = estimate_phi_batch if component == "phi" else estimate_theta_batch
    sizes = [CHUNK] * (n_mc // CHUNK) + ([n_mc % CHUNK] if n_mc % CHUNK else [])

    def run_chunk(i: int) -> np.ndarray:
        child = rng.child(i)
        batch = runner(model, x, spec, child, sizes[i])
        if not np.isfinite(batch).all():
            raise ReplicateError(
                f"non-finite gradient in replicate chunk {i} (seed {rng.seed})",
                rng.seed, child.path)
        if segment_slice is not None:
            batch = batch[:, segment_slice]
        return batch

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            batches = list(pool.map(run_chunk, range(len(sizes))))
    else:
        batches = [run_chunk(i) for i in range(len(sizes))]

    # First/second half split for the DSNR direction (chunk-aligned cut).
    half = len(batches) // 2 if len(batches) > 1 else 1
    if len(batches) == 1:
        first = batches[0][: sizes[0] // 2]
        second = batches[0][sizes[0] // 2:]
        parts_a, parts_b = [_Moments.of(first)], [_Moments.of(second)]
    else:
        parts_a = [_Moments.of(b) for b in batches[:half]]
        parts_b = [_Moments.of(b) for b in batches[half:]]
    direction = _tree_merge(parts_a).mean
    norm = np.linalg.norm(direction)
    u = direction / norm if norm > 0 else direction
    if len(batches) == 1:
        proj = batches[0][sizes[0] // 2:] @ u
    else:
        proj = np.concatenate([b @ u for b in batches[half:]])
    proj_moments = _Moments.of(proj[:, None])
    dsnr_var = proj_moments.m2[0] / max(proj_moments.count - 1, 1)
    dsnr = float(_snr_of(proj_moments.mean[0], dsnr_var)[0]) if norm > 0 else 0.0

    total = _tree_merge(parts_a + parts_b)
    variance = total.m2 / (total.count - 1)
    snr = _snr_of(total.mean, variance)
    return GradientStats(
        n_replicates=total.count,
        mean=total.mean,
        variance=variance,
        snr=snr,
        dsnr=dsnr,
        avg_snr=float(np.mean(snr)),
        avg_variance=float(np.mean(variance)),
        avg_abs_mean=float(np.mean(np.abs(total.mean))),
    )


# -- exact oracles ---------------------------------------------------------------


def exact_iwae_gradient(model: GmmModel, x, k: int, alpha: float = 0.0,
                        max_tuples: int = 10 ** 6) -> tuple[np.ndarray, float]:
    """Exact (grad_phi L_K^alpha, L_K^alpha) by enumerating all C^K tuples."""
    c = model.capabilities.enumerable_latent
    require(c is not None, "exact bound gradient needs an enumerable latent")
    if c ** k > max_tuples:
        raise ValueError(f"C^K = {c ** k} exceeds the enumeration guard {max_tuples}")
    log_q, log_p, score_table = model.latent_tables(x)
    tuples = np.array(list(itertools.product(range(c), repeat=k)), dtype=np.int64)
    log_prob = log_q[tuples].sum(axis=1)                # (T,)
    prob = np.exp(log_prob)
    lw = (log_p - log_q)[tuples]                        # (T, K)
    d = prefactor_d(lw, alpha)
    cls_w = np.zeros(c)
    np.add.at(cls_w, tuples.reshape(-1), (prob[:, None] * d).reshape(-1))
    grad = cls_w @ score_table
    if alpha == 1.0:
        bound = float(prob @ lw.mean(axis=1))
    else:
        bound = float(prob @ (logsumexp((1 - alpha) * lw, axis=1) - np.log(k))) / (1 - alpha)
    return grad, bound


def exact_theta_gradient(model: GmmModel, x, k: int, alpha: float = 0.0,
                         max_tuples: int = 10 ** 6) -> np.ndarray:
    """Exact generative gradient of L_K^alpha by enumeration."""
    c = model.capabilities.enumerable_latent
    require(c is not None, "exact bound gradient needs an enumerable latent")
    if c ** k > max_tuples:
        raise ValueError(f"C^K = {c ** k} exceeds the enumeration guard {max_tuples}")
    log_q, log_p, _ = model.latent_tables(x)
    probs_theta = softmax(model.theta.segment("logits"))
    tuples = np.array(list(itertools.product(range(c), repeat=k)), dtype=np.int64)
    prob = np.exp(log_q[tuples].sum(axis=1))
    lw = (log_p - log_q)[tuples]
    from .weights import normalized_weights
    v = normalized_weights(lw, alpha)
    cls_w = np.zeros(c)
    np.add.at(cls_w, tuples.reshape(-1), (prob[:, None] * v).reshape(-1))
    return cls_w - probs_theta * (prob @ v.sum(axis=1))


def posterior_l2(model: GmmModel, theta_star: np.ndarray, test_xs: np.ndarray
                 ) -> tuple[float, float]:
    """(average L2 from the true posterior, L2 between mixture weights)."""
    require(model.capabilities.enumerable_latent is not None,
            "posterior metrics need an enumerable latent")
    test_xs = np.asarray(test_xs, dtype=np.float64)
    q = model.q_probs(test_xs)
    post = true_posterior(theta_star, test_xs)
    avg_l2 = float(np.mean(np.linalg.norm(q - post, axis=-1)))
    param_l2 = float(np.linalg.norm(
        softmax(model.theta.segment("logits")) - softmax(np.asarray(theta_star))))
    return avg_l2, param_l2


@dataclass
class SlopeFit:
    slope: float
    intercept: float
    r2: float
    points: list[tuple[float, float]]


def loglog_slope(ks, ys) -> SlopeFit:
    """OLS fit of log10(y) against log10(k)."""
    ks = np.asarray(ks, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if ks.size < 3:
        raise ValueError("need at least 3 points for a slope fit")
    if np.any(np.diff(ks) <= 0):
        raise ValueError("k values must be strictly increasing")
    if np.any(ys <= 0) or not np.isfinite(ys).all():
        raise ValueError("y values must be positive and finite")
    lx, ly = np.log10(ks), np.log10(ys)
    fit = linregress(lx, ly)
    return SlopeFit(float(fit.slope), float(fit.intercept), float(fit.rvalue ** 2),
                    list(zip(lx.tolist(), ly.tolist())))


# -- CSV emission ------------------------------------------------------------------


CSV_COLUMNS = ("estimator", "K", "alpha", "gamma", "S", "segment", "avg_snr",
               "dsnr", "avg_variance", "avg_abs_mean", "n_mc", "seed", "config_hash")


def stats_row(spec: EstimatorSpec, segment: str, stats: GradientStats, seed: int,
              config_hash: str = "") -> dict:
    return {
        "estimator": spec.label(),
        "K": spec.k,
        "alpha": spec.alpha,
        "gamma": "" if spec.gamma is None else spec.gamma,
        "S": "" if spec.s is None else spec.s,
        "segment": segment,
        "avg_snr": stats.avg_snr,
        "dsnr": stats.dsnr,
        "avg_variance": stats.avg_variance,
        "avg_abs_mean": stats.avg_abs_mean,
        "n_mc": stats.n_replicates,
        "seed": seed,
        "config_hash": config_hash,
    }


def write_stats_csv(path, rows: list[dict]) -> None:
    """RFC-4180 CSV with a mandatory header; infinities serialize as 'inf'."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _csv_cell(row.get(k, "")) for k in CSV_COLUMNS})


def _csv_cell(value) -> str:
    if isinstance(value, float):
        if np.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    return str(value)
