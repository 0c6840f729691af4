"""Estimator selection and results.

:class:`EstimatorSpec` names which gradient estimator to run plus its
hyperparameters; construction validates that kind-specific fields are set
exactly when the kind needs them, so an invalid combination can never reach
an estimator. :class:`GradientEstimate` is the common result container.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ..weights import ALPHA_LIMIT_GAP

__all__ = [
    "KINDS",
    "DEFAULT_CLIP_EPS",
    "ControlVariateTerms",
    "EstimatorSpec",
    "GradientEstimate",
    "UnsupportedAlphaError",
]

KINDS = (
    "reinforce",
    "vimco_arith",
    "vimco_geom",
    "ovis_mc",
    "ovis_gamma",
    "exact_ocv",
    "rws_wake_phi",
    "rws_sleep_phi",
    "tvo",
    "pathwise_iwae",
    "stl",
    "dreg",
)

# Kinds whose control variate is built from leave-one-out sums; need K >= 2.
LEAVE_ONE_OUT_KINDS = frozenset({"vimco_arith", "vimco_geom", "ovis_gamma"})

# Kinds that accept a Renyi smoothing alpha in [0, 1]; the rest are defined
# for the plain importance-weighted bound only.
ALPHA_KINDS = frozenset({"reinforce", "ovis_mc", "ovis_gamma"})
ALPHA_BELOW_ONE_KINDS = frozenset({"exact_ocv"})

DEFAULT_CLIP_EPS = 1.19e-7


class UnsupportedAlphaError(ValueError):
    """Requested alpha is not implemented for this estimator kind."""


@dataclass(frozen=True)
class EstimatorSpec:
    kind: str
    k: int
    alpha: float = 0.0
    gamma: float | None = None          # ovis_gamma only
    s: int | None = None                # ovis_mc auxiliary samples only
    clip_eps: float = DEFAULT_CLIP_EPS
    tvo_partition: tuple[float, ...] | None = None  # tvo only

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown estimator kind {self.kind!r}; choose from {KINDS}")
        if self.k < 1:
            raise ValueError(f"K must be >= 1, got {self.k}")
        if self.kind in LEAVE_ONE_OUT_KINDS and self.k < 2:
            raise ValueError(f"{self.kind} needs K >= 2 (leave-one-out control)")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if 1.0 - ALPHA_LIMIT_GAP < self.alpha < 1.0:
            raise ValueError(
                f"alpha={self.alpha} is inside (1 - {ALPHA_LIMIT_GAP}, 1); use "
                "alpha = 1 exactly (analytic limit) or a smaller value")
        if self.alpha != 0.0 and self.kind not in ALPHA_KINDS | ALPHA_BELOW_ONE_KINDS:
            raise UnsupportedAlphaError(
                f"{self.kind} is only defined for alpha = 0, got {self.alpha}")
        if self.alpha == 1.0 and self.kind in ALPHA_BELOW_ONE_KINDS:
            raise UnsupportedAlphaError(
                f"{self.kind} does not implement the alpha -> 1 limit")
        if (self.gamma is not None) != (self.kind == "ovis_gamma"):
            raise ValueError("gamma must be set exactly for kind 'ovis_gamma'")
        if self.gamma is not None and not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if (self.s is not None) != (self.kind == "ovis_mc"):
            raise ValueError("s (auxiliary samples) must be set exactly for kind 'ovis_mc'")
        if self.s is not None and self.s < 1:
            raise ValueError(f"s must be >= 1, got {self.s}")
        if self.clip_eps < 0:
            raise ValueError(f"clip_eps must be >= 0, got {self.clip_eps}")
        if (self.tvo_partition is not None) != (self.kind == "tvo"):
            raise ValueError("tvo_partition must be set exactly for kind 'tvo'")
        if self.tvo_partition is not None:
            part = tuple(float(b) for b in self.tvo_partition)
            if len(part) < 2 or part[0] != 0.0 or part[-1] != 1.0:
                raise ValueError("tvo partition must start at 0 and end at 1")
            if any(b1 >= b2 for b1, b2 in zip(part, part[1:])):
                raise ValueError("tvo partition must be strictly increasing")
            object.__setattr__(self, "tvo_partition", part)

    def label(self) -> str:
        """Short name for CSV rows and filenames."""
        bits = [self.kind]
        if self.kind == "ovis_gamma":
            bits.append(f"g{self.gamma:g}")
        if self.kind == "ovis_mc":
            bits.append(f"s{self.s}")
        if self.alpha != 0.0:
            bits.append(f"a{self.alpha:g}")
        return "-".join(bits)


@dataclass
class ControlVariateTerms:
    """Decomposition d_k = f_k + f_minus_k used by the exact optimal control."""

    f_k: np.ndarray
    f_minus_k: np.ndarray


@dataclass
class GradientEstimate:
    """One estimator draw: phi gradient, optional theta gradient, diagnostics."""

    phi_grad: np.ndarray
    theta_grad: np.ndarray | None = None
    aux: dict[str, Any] = field(default_factory=dict)
