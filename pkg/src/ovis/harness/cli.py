"""Command-line entry point.

Subcommands:
  asymptotic    gradient SNR/variance vs particle count on the Gaussian toy
  fit-gaussian  train the Gaussian toy model, tracking distance to optimum
  gmm-train     train the mixture model, tracking posterior quality
  selftest      run the enumeration-oracle unbiasedness suite (exit 1 on fail)

A declarative config file (``--config``) provides the base settings; flags
override individual fields. Exit codes: 0 success, 1 failed selftest or
diverged run, 2 usage errors (including a missing config file).
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from ..diagnostics import exact_iwae_gradient, gradient_stats
from ..estimators import EstimatorSpec, estimate_phi_batch
from ..models.gmm import gmm_make
from ..rng import Stream
from ..weights import build_weight_set, ess, leave_one_out
from .config import ExperimentConfig, parse_estimator_token, read_config_file
from .experiments import run_asymptotic, run_fit_gaussian, run_gmm_train

__all__ = ["cli_main", "main"]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ovis",
        description="Score-function gradient estimators for importance-weighted "
                    "bounds: diagnostics and training experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--seed", type=int, action="append",
                       help="random seed (repeatable)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--threads", type=int, help="worker threads")
        p.add_argument("--estimator", action="append",
                       help="estimator token, e.g. ovis-gamma or ovis_mc:s=10 "
                            "(repeatable)")
        p.add_argument("--k", help="comma-separated particle counts")
        p.add_argument("--n-mc", type=int, help="Monte Carlo replicates")
        p.add_argument("--gamma", type=float, help="ovis_gamma interpolation")
        p.add_argument("--alpha", type=float, help="Renyi smoothing parameter")
        p.add_argument("--aux-samples", type=int, help="ovis_mc auxiliary samples")

    p_asym = sub.add_parser("asymptotic", help="SNR/variance scaling study")
    common(p_asym)

    p_fit = sub.add_parser("fit-gaussian", help="Gaussian model fitting study")
    common(p_fit)
    p_fit.add_argument("--steps", type=int)
    p_fit.add_argument("--lr", type=float)
    p_fit.add_argument("--batch-size", type=int)

    p_gmm = sub.add_parser("gmm-train", help="GMM training study")
    common(p_gmm)
    p_gmm.add_argument("--steps", type=int)
    p_gmm.add_argument("--lr", type=float)
    p_gmm.add_argument("--batch-size", type=int)

    p_self = sub.add_parser("selftest", help="oracle unbiasedness suite")
    p_self.add_argument("--seed", type=int, default=0)
    p_self.add_argument("--n-mc", type=int, default=20000)
    return parser


def _apply_estimator_flags(args, tokens: tuple[str, ...]) -> tuple[str, ...]:
    """Fold --gamma/--alpha/--aux-samples into a single --estimator token."""
    if not tokens:
        return tokens
    extras = []
    if args.gamma is not None:
        extras.append(f"gamma={args.gamma}")
    if args.alpha is not None:
        extras.append(f"alpha={args.alpha}")
    if args.aux_samples is not None:
        extras.append(f"s={args.aux_samples}")
    if not extras:
        return tokens
    if len(tokens) != 1:
        raise SystemExit("--gamma/--alpha/--aux-samples need exactly one --estimator")
    token = tokens[0]
    sep = "," if ":" in token else ":"
    return (token + sep + ",".join(extras),)


def _config_from_args(args) -> ExperimentConfig:
    if args.config is not None:
        if not os.path.exists(args.config):
            print(f"error: config file not found: {args.config}", file=sys.stderr)
            raise SystemExit(2)
        config = read_config_file(args.config)
    else:
        config = ExperimentConfig(experiment=args.command)
    overrides: dict = {"experiment": args.command}
    if args.seed:
        overrides["seeds"] = tuple(args.seed)
    if args.out:
        overrides["out_dir"] = args.out
    if args.threads:
        overrides["threads"] = args.threads
    if args.k:
        overrides["ks"] = tuple(int(v) for v in str(args.k).split(","))
    if args.n_mc:
        overrides["n_mc"] = args.n_mc
    tokens = tuple(args.estimator) if args.estimator else config.estimators
    tokens = _apply_estimator_flags(args, tokens)
    if tokens:
        overrides["estimators"] = tokens
    for name in ("steps", "lr", "batch_size"):
        if getattr(args, name, None) is not None:
            overrides[name] = getattr(args, name)
    return replace(config, **overrides)


_SELF_TEST_ROLE = 900


def run_selftest(seed: int, n_mc: int) -> int:
    """Check the estimator family against the enumerated exact gradient."""
    failures = 0

    # Weight-algebra spot checks.
    ws = build_weight_set([0.0, np.log(3.0)], alpha=0.0)
    checks = [
        ("ess([1,3]) == 1.6", abs(ess(ws) - 1.6) < 1e-12),
        ("z_tilde([1,3])", abs(np.exp(leave_one_out(ws).log_z_tilde[0]) - 1.5) < 1e-12),
    ]
    model = gmm_make(3, seed=seed)
    x = float(model.sample_dataset(1, Stream(seed, (_SELF_TEST_ROLE,)))[0])
    exact, _ = exact_iwae_gradient(model, x, k=2, alpha=0.0)
    for i, (kind, kwargs) in enumerate([
        ("reinforce", {}),
        ("vimco_arith", {}),
        ("vimco_geom", {}),
        ("ovis_mc", {"s": 5}),
        ("ovis_gamma", {"gamma": 0.0}),
        ("exact_ocv", {}),
    ]):
        spec = EstimatorSpec(kind=kind, k=2, **kwargs)
        batch = estimate_phi_batch(model, x, spec, Stream(seed, (_SELF_TEST_ROLE, i)), n_mc)
        se = batch.std(axis=0, ddof=1) / np.sqrt(n_mc)
        dev = np.max(np.abs(batch.mean(axis=0) - exact) / np.maximum(se, 1e-12))
        checks.append((f"{kind} MC mean matches exact gradient", dev < 5.0))
    for name, ok in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
        failures += 0 if ok else 1
    return 1 if failures else 0


def cli_main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "selftest":
            return run_selftest(args.seed, args.n_mc)
        config = _config_from_args(args)
        if args.command == "asymptotic":
            run_asymptotic(config)
        elif args.command == "fit-gaussian":
            run_fit_gaussian(config)
        elif args.command == "gmm-train":
            record = run_gmm_train(config)
            if record.failed:
                print(f"error: run diverged at step {record.failed_step}",
                      file=sys.stderr)
                return 1
        return 0
    except SystemExit as exc:
        return int(exc.code or 0)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_main(sys.argv[1:]))
