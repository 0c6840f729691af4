"""Experiment configuration: flat key-value files, parsing, hashing.

The on-disk format is deliberately flat (one ``key = value`` per line,
``#`` comments) so a config canonicalizes to a unique byte string whose
SHA-256 prefix is embedded in every output file the run writes.

Estimator tokens
----------------
Estimators are named by compact tokens ``kind[:key=value[,key=value...]]``,
e.g. ``ovis_gamma:gamma=0``, ``ovis_mc:s=10``, ``tvo:p=5,beta1=0.01``,
``reinforce:alpha=1``, ``ovis_gamma:gamma=1,k=20``. Hyphens in kinds are
accepted and normalized to underscores. ``k`` may be omitted when the
experiment sweeps a ``ks`` list.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields

from ..estimators import EstimatorSpec, make_tvo_partition

__all__ = [
    "AlphaSchedule",
    "ExperimentConfig",
    "config_hash",
    "parse_config_text",
    "parse_estimator_token",
    "read_config_file",
]

EXPERIMENTS = ("asymptotic", "fit-gaussian", "gmm-train")


@dataclass(frozen=True)
class AlphaSchedule:
    """Geometric interpolation from alpha_start down to a floor, then a hard
    jump to alpha_end once anneal_steps have elapsed."""

    alpha_start: float
    alpha_end: float = 0.0
    anneal_steps: int = 1
    alpha_min: float = 1e-3

    def __post_init__(self):
        if not 0.0 <= self.alpha_start <= 1.0 or not 0.0 <= self.alpha_end <= 1.0:
            raise ValueError("alpha schedule endpoints must lie in [0, 1]")
        if self.anneal_steps < 1:
            raise ValueError("anneal_steps must be >= 1")
        if not 0.0 < self.alpha_min <= self.alpha_start or self.alpha_start == 0.0:
            raise ValueError("need 0 < alpha_min <= alpha_start")


@dataclass
class ExperimentConfig:
    experiment: str = "asymptotic"
    out_dir: str = "runs"
    seeds: tuple[int, ...] = (0,)
    threads: int = 1
    estimators: tuple[str, ...] = ()
    ks: tuple[int, ...] = (3, 10, 30, 100, 300)
    n_mc: int = 1000
    # model settings
    d: int = 20
    n_data: int = 1024
    noise_scale: float = 1e-3
    c: int = 20
    # training settings
    steps: int = 0
    lr: float = 1e-3
    batch_size: int = 100
    init_noise: float = 0.5
    n_test: int = 100
    probe_interval: int = 500
    probe_n_mc: int = 128
    # alpha annealing (gmm-train); all three must be set together
    alpha_start: float = 0.0
    alpha_end: float = 0.0
    anneal_steps: int = 0

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        if not self.seeds:
            raise ValueError("need at least one seed")
        if self.estimators:
            for token in self.estimators:
                parse_estimator_token(token, k=self.ks[0] if self.ks else 2)

    @property
    def alpha_schedule(self) -> AlphaSchedule | None:
        if self.anneal_steps <= 0:
            return None
        return AlphaSchedule(self.alpha_start, self.alpha_end, self.anneal_steps)

    def canonical_text(self) -> str:
        lines = []
        for f in sorted(fields(self), key=lambda f: f.name):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                sep = ";" if f.name in _TUPLE_STR else ","
                value = sep.join(str(v) for v in value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    def hash(self) -> str:
        return config_hash(self.canonical_text())


def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


_TUPLE_INT = {"seeds", "ks"}
_TUPLE_STR = {"estimators"}
_INT = {"threads", "n_mc", "d", "n_data", "c", "steps", "batch_size",
        "n_test", "probe_interval", "probe_n_mc", "anneal_steps"}
_FLOAT = {"noise_scale", "lr", "init_noise", "alpha_start", "alpha_end"}


def parse_config_text(text: str) -> ExperimentConfig:
    values: dict = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {ln}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key in _TUPLE_INT:
            values[key] = tuple(int(v) for v in value.split(",") if v.strip())
        elif key in _TUPLE_STR:
            # estimator tokens contain commas, so lists of them are
            # whitespace- or semicolon-separated
            values[key] = tuple(v for v in value.replace(";", " ").split() if v)
        elif key in _INT:
            values[key] = int(value)
        elif key in _FLOAT:
            values[key] = float(value)
        elif key in ("experiment", "out_dir"):
            values[key] = value
        else:
            raise ValueError(f"config line {ln}: unknown key {key!r}")
    return ExperimentConfig(**values)


def read_config_file(path: str) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def parse_estimator_token(token: str, k: int | None = None,
                          alpha: float | None = None) -> EstimatorSpec:
    """Build an :class:`EstimatorSpec` from a compact token.

    ``k``/``alpha`` arguments are defaults; values inside the token win.
    TVO partitions are specified as stratum count ``p`` plus ``beta1`` (the
    knots are derived log-uniformly), not as an explicit knot list.
    """
    token = token.strip().replace("-", "_")
    kind, _, rest = token.partition(":")
    opts: dict[str, str] = {}
    if rest:
        for item in rest.split(","):
            key, _, value = item.partition("=")
            if not value:
                raise ValueError(f"bad estimator option {item!r} in {token!r}")
            opts[key.strip()] = value.strip()
    kwargs: dict = {}
    if "k" in opts:
        kwargs["k"] = int(opts.pop("k"))
    elif k is not None:
        kwargs["k"] = k
    else:
        raise ValueError(f"estimator token {token!r} needs k= (no sweep provides it)")
    kwargs["alpha"] = float(opts.pop("alpha", alpha if alpha is not None else 0.0))
    if "gamma" in opts:
        kwargs["gamma"] = float(opts.pop("gamma"))
    if "s" in opts:
        kwargs["s"] = int(opts.pop("s"))
    if "clip_eps" in opts:
        kwargs["clip_eps"] = float(opts.pop("clip_eps"))
    if kind == "tvo":
        p = int(opts.pop("p", 1))
        beta1 = float(opts.pop("beta1", 0.01))
        kwargs["tvo_partition"] = make_tvo_partition(p, beta1)
    if opts:
        raise ValueError(f"unknown estimator options {sorted(opts)} in {token!r}")
    return EstimatorSpec(kind=kind, **kwargs)
