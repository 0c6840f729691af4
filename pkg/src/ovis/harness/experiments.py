"""Experiment drivers: asymptotic SNR study, Gaussian fitting, GMM training.

Runs are fully deterministic: every random draw hangs off a stream derived
from (seed, fixed role ids), outputs embed the config hash, and rerunning a
config/seed pair writes byte-identical files regardless of thread count.
"""

from __future__ import annotations

import csv
import hashlib
import os
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from ..diagnostics import gradient_stats, posterior_l2, stats_row, write_stats_csv
from ..estimators import EstimatorSpec
from ..estimators.pathwise import pathwise_phi_batch
from ..estimators.score import _plain_coeff, ovis_mc_coeff, theta_gradient_coeff
from ..estimators.tvo import tvo_coeff
from ..models.adam import AdamState, adam_step
from ..models.gaussian import gaussian_make
from ..models.gmm import gmm_make
from ..rng import Stream
from ..weights import log_ess
from .config import AlphaSchedule, ExperimentConfig, parse_estimator_token

__all__ = ["anneal_alpha", "run_asymptotic", "run_fit_gaussian", "run_gmm_train",
           "RunRecord"]

# Stream role ids (never reuse across roles within one run).
_ROLE_DATA, _ROLE_EST, _ROLE_PROBE, _ROLE_TEST, _ROLE_INIT = 1, 2, 3, 4, 5


def anneal_alpha(step: int, schedule: AlphaSchedule) -> float:
    """Geometric alpha interpolation with a floor, then a hard end value."""
    if step < 0:
        raise ValueError("step must be >= 0")
    if schedule.alpha_start == 0.0:
        return schedule.alpha_end if step >= schedule.anneal_steps else 0.0
    if step >= schedule.anneal_steps:
        return schedule.alpha_end
    ratio = schedule.alpha_min / schedule.alpha_start
    return float(schedule.alpha_start * ratio ** (step / schedule.anneal_steps))


@dataclass
class RunRecord:
    config_text: str
    config_hash: str
    rows: list[dict] = field(default_factory=list)
    wall_clock: float = 0.0
    failed: bool = False
    failed_step: int | None = None
    param_hash: str = ""


def _param_hash(*vectors: np.ndarray) -> str:
    h = hashlib.sha256()
    for v in vectors:
        h.update(np.ascontiguousarray(v, dtype="<f8").tobytes())
    return h.hexdigest()[:16]


# -- asymptotic SNR/variance study ------------------------------------------------


DEFAULT_ASYMPTOTIC_ESTIMATORS = (
    "pathwise_iwae", "stl", "dreg", "vimco_arith",
    "ovis_gamma:gamma=0", "ovis_gamma:gamma=1", "ovis_mc:s=10",
)


def run_asymptotic(config: ExperimentConfig) -> list[dict]:
    """Gradient statistics of the inference parameters on the Gaussian toy.

    For every estimator x K x seed, writes one CSV row for the b segment of
    phi and one for theta, both averaged parameter-wise.
    """
    tokens = config.estimators or DEFAULT_ASYMPTOTIC_ESTIMATORS
    chash = config.hash()
    rows: list[dict] = []
    for seed in config.seeds:
        model, dataset = gaussian_make(config.d, config.n_data, config.noise_scale, seed)
        x = dataset[0]
        b_slice = model.phi.segment_slice("b")
        for ei, token in enumerate(tokens):
            for ki, k in enumerate(config.ks):
                spec = parse_estimator_token(token, k=k)
                rng = Stream(seed, (_ROLE_EST, ei, ki))
                stats = gradient_stats(model, x, spec, config.n_mc, rng,
                                       segment_slice=b_slice, threads=config.threads)
                rows.append(stats_row(spec, "b", stats, seed, chash))
                theta_stats = gradient_stats(model, x, spec, config.n_mc,
                                             rng.child(1), component="theta",
                                             threads=config.threads)
                rows.append(stats_row(spec, "theta", theta_stats, seed, chash))
    _write_outputs(config, "asymptotic.csv", rows)
    return rows


def _write_outputs(config: ExperimentConfig, name: str, rows: list[dict]) -> str:
    os.makedirs(config.out_dir, exist_ok=True)
    path = os.path.join(config.out_dir, name)
    write_stats_csv(path, rows)
    snap = os.path.join(config.out_dir, f"config-{config.hash()}.ini")
    with open(snap, "w", encoding="utf-8") as fh:
        fh.write(config.canonical_text())
    return path


# -- shared training-step machinery --------------------------------------------------


def _phi_coeff_for_training(spec: EstimatorSpec, log_w: np.ndarray,
                            log_w_aux: np.ndarray | None) -> np.ndarray:
    if spec.kind == "ovis_mc":
        coeff, _ = ovis_mc_coeff(log_w, log_w_aux, spec.alpha)
        return coeff
    if spec.kind == "tvo":
        return tvo_coeff(log_w, spec.tvo_partition)
    return _plain_coeff(log_w, spec)

_TRAINABLE_SCORE_KINDS = frozenset({
    "reinforce", "vimco_arith", "vimco_geom", "ovis_mc", "ovis_gamma",
    "rws_wake_phi", "rws_sleep_phi", "tvo",
})


# -- Gaussian fitting study ----------------------------------------------------------


DEFAULT_FIT_ESTIMATORS = (
    "ovis_gamma:gamma=0", "ovis_gamma:gamma=1", "vimco_arith",
    "rws_wake_phi", "tvo:p=5,beta1=0.001", "pathwise_iwae",
)


def run_fit_gaussian(config: ExperimentConfig) -> RunRecord:
    """Train the Gaussian toy model, tracking distance to the optimum.

    Initialization uses ``init_noise`` (a random displacement; the tiny
    perturbation of the asymptotic study would leave nothing to learn).
    """
    started = time.perf_counter()
    tokens = config.estimators or DEFAULT_FIT_ESTIMATORS
    record = RunRecord(config.canonical_text(), config.hash())
    k_default = config.ks[0] if config.ks else 10
    for seed in config.seeds:
        for ei, token in enumerate(tokens):
            spec = parse_estimator_token(token, k=k_default)
            _fit_gaussian_one(config, seed, ei, spec, record)
    record.wall_clock = time.perf_counter() - started
    _write_metric_rows(config, "fit_gaussian.csv", record)
    return record


def _fit_gaussian_one(config: ExperimentConfig, seed: int, ei: int,
                      spec: EstimatorSpec, record: RunRecord) -> None:
    model, dataset = gaussian_make(config.d, config.n_data, config.init_noise, seed)
    est_label = spec.label()
    phi_state = AdamState.for_params(model.phi.values, lr=config.lr)
    theta_state = AdamState.for_params(model.theta.values, lr=config.lr)
    data_rng = Stream(seed, (_ROLE_DATA, ei))
    est_rng = Stream(seed, (_ROLE_EST, ei))
    n = dataset.shape[0]

    def log_metrics(step: int) -> None:
        l2_a = float(np.linalg.norm(model.phi.segment("A") - model.a_star))
        l2_b = float(np.linalg.norm(model.phi.segment("b") - model.b_star))
        record.rows.append({
            "experiment": "fit-gaussian", "estimator": est_label, "seed": seed,
            "step": step, "K": spec.k, "l2_a": l2_a, "l2_b": l2_b,
            "config_hash": record.config_hash,
        })

    log_metrics(0)
    for step in range(config.steps):
        idx = data_rng.child(step).generator().integers(0, n, size=config.batch_size)
        xb = dataset[idx]
        rng = est_rng.child(step)
        if spec.kind in ("pathwise_iwae", "stl", "dreg"):
            phi_grads = pathwise_phi_batch(model, xb, spec, rng, config.batch_size)
            z = None
        else:
            z = model.sample_latents(xb, spec.k, config.batch_size, rng.child(0))
            log_w = model.log_weight(xb, z)
            log_w_aux = None
            if spec.kind == "ovis_mc":
                z_aux = model.sample_latents(xb, spec.s, config.batch_size, rng.child(1))
                log_w_aux = model.log_weight(xb, z_aux)
            coeff = _phi_coeff_for_training(spec, log_w, log_w_aux)
            phi_grads = model.phi_grad_from_prefactors(xb, z, coeff)
        phi_grad = phi_grads.mean(axis=0)
        if z is None:
            z = model.sample_latents(xb, spec.k, config.batch_size, rng.child(2))
        log_w = model.log_weight(xb, z)
        theta_coeff = theta_gradient_coeff(log_w, spec.alpha)
        theta_grad = model.theta_grad_from_prefactors(xb, z, theta_coeff).mean(axis=0)
        model.phi.values[:], phi_state = adam_step(model.phi.values, phi_grad, phi_state)
        model.theta.values[:], theta_state = adam_step(model.theta.values, theta_grad,
                                                       theta_state)
        if (step + 1) % config.probe_interval == 0 or step + 1 == config.steps:
            log_metrics(step + 1)
    record.param_hash = _param_hash(model.phi.values, model.theta.values)


# -- GMM training study ----------------------------------------------------------------


def run_gmm_train(config: ExperimentConfig) -> RunRecord:
    """Train the mixture's generative logits and inference MLP jointly.

    Observations are drawn fresh from the true model each step; theta always
    follows the shared generative gradient; phi follows the configured
    estimator. Divergence (non-finite loss or gradient) marks the run failed
    at its step index instead of raising.
    """
    started = time.perf_counter()
    if not config.estimators:
        raise ValueError("gmm-train needs explicit estimator tokens (with k=...)")
    record = RunRecord(config.canonical_text(), config.hash())
    for seed in config.seeds:
        for ei, token in enumerate(config.estimators):
            spec = parse_estimator_token(token, k=None)
            _gmm_train_one(config, seed, ei, spec, record)
    record.wall_clock = time.perf_counter() - started
    _write_metric_rows(config, "gmm_train.csv", record)
    return record


def _gmm_train_one(config: ExperimentConfig, seed: int, ei: int,
                   spec: EstimatorSpec, record: RunRecord) -> None:
    model = gmm_make(config.c, seed)
    theta_star = model.theta_star
    # Training starts from an uninformative prior; the true logits stay the
    # data-generating distribution.
    model.theta.segment("logits")[:] = 0.0
    est_label = spec.label()
    test_xs = model.sample_dataset(config.n_test, Stream(seed, (_ROLE_TEST,)))
    phi_state = AdamState.for_params(model.phi.values, lr=config.lr)
    theta_state = AdamState.for_params(model.theta.values, lr=config.lr)
    data_rng = Stream(seed, (_ROLE_DATA, ei))
    est_rng = Stream(seed, (_ROLE_EST, ei))
    schedule = config.alpha_schedule

    def log_metrics(step: int, l_k: float, mean_ess: float, alpha: float) -> None:
        post_l2, param_l2 = posterior_l2(model, theta_star, test_xs)
        record.rows.append({
            "experiment": "gmm-train", "estimator": est_label, "seed": seed,
            "step": step, "K": spec.k, "alpha": alpha, "posterior_l2": post_l2,
            "param_l2": param_l2, "l_k": l_k, "ess": mean_ess,
            "config_hash": record.config_hash,
        })

    log_metrics(0, float("nan"), float("nan"), spec.alpha)
    for step in range(config.steps):
        alpha = spec.alpha if schedule is None else anneal_alpha(step, schedule)
        step_spec = spec if alpha == spec.alpha else _respec_alpha(spec, alpha)
        xb = model.sample_dataset(config.batch_size, data_rng.child(step))
        rng = est_rng.child(step)
        try:
            l_k, mean_ess, phi_state, theta_state = _gmm_step(
                model, xb, step_spec, rng, phi_state, theta_state)
        except FloatingPointError:
            record.failed = True
            record.failed_step = step
            log_metrics(step, float("nan"), float("nan"), alpha)
            return
        if not np.isfinite(l_k):
            record.failed = True
            record.failed_step = step
            log_metrics(step, l_k, mean_ess, alpha)
            return
        if (step + 1) % config.probe_interval == 0 or step + 1 == config.steps:
            log_metrics(step + 1, l_k, mean_ess, alpha)
    record.param_hash = _param_hash(model.phi.values, model.theta.values)


def _respec_alpha(spec: EstimatorSpec, alpha: float) -> EstimatorSpec:
    return EstimatorSpec(kind=spec.kind, k=spec.k, alpha=alpha, gamma=spec.gamma,
                         s=spec.s, clip_eps=spec.clip_eps,
                         tvo_partition=spec.tvo_partition)


def _gmm_step(model, xb, spec: EstimatorSpec, rng: Stream,
              phi_state: AdamState, theta_state: AdamState
              ) -> tuple[float, float, AdamState, AdamState]:
    if spec.kind not in _TRAINABLE_SCORE_KINDS:
        raise ValueError(f"{spec.kind} is not supported for GMM training")
    z = model.sample_latents_batch(xb, spec.k, rng.child(0))
    log_w = model.log_weight_batch(xb, z)
    if spec.kind == "rws_sleep_phi":
        xd, zd = model.sample_joint(xb.size * spec.k, rng.child(3))
        phi_grad = model.score_phi_pairs(xd, zd).mean(axis=0)
    else:
        log_w_aux = None
        if spec.kind == "ovis_mc":
            z_aux = model.sample_latents_batch(xb, spec.s, rng.child(1))
            log_w_aux = model.log_weight_batch(xb, z_aux)
        coeff = _phi_coeff_for_training(spec, log_w, log_w_aux)
        phi_grad = model.phi_grad_mean_from_prefactors(xb, z, coeff)
    theta_coeff = theta_gradient_coeff(log_w, spec.alpha)
    theta_grad = model.theta_grad_mean_from_prefactors(xb, z, theta_coeff)
    model.phi.values[:], phi_state = adam_step(model.phi.values, phi_grad, phi_state)
    model.theta.values[:], theta_state = adam_step(model.theta.values, theta_grad,
                                                   theta_state)
    l_k = float(np.mean(logsumexp(log_w, axis=-1) - np.log(spec.k)))
    mean_ess = float(np.mean(np.exp(log_ess(log_w, spec.alpha))))
    return l_k, mean_ess, phi_state, theta_state


_METRIC_COLUMNS = ("experiment", "estimator", "seed", "step", "K", "alpha",
                   "posterior_l2", "param_l2", "l_k", "ess", "l2_a", "l2_b",
                   "config_hash")


def _write_metric_rows(config: ExperimentConfig, name: str, record: RunRecord) -> str:
    os.makedirs(config.out_dir, exist_ok=True)
    path = os.path.join(config.out_dir, name)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=_METRIC_COLUMNS)
        writer.writeheader()
        for row in record.rows:
            writer.writerow({k: row.get(k, "") for k in _METRIC_COLUMNS})
    snap = os.path.join(config.out_dir, f"config-{config.hash()}.ini")
    with open(snap, "w", encoding="utf-8") as fh:
        fh.write(config.canonical_text())
    return path
