"""Exact, asymptotic and Monte-Carlo tools for Bessel-like reflecting walks.

A walk on ``{0, 1, 2, ...}`` reflects at 0 and steps up from ``x >= 1`` with
probability ``p_x = (1/2)(1 - delta/(2x) + R_x/2)``.
"""

from __future__ import annotations

from .walk import (
    PerturbationKind,
    Regime,
    WalkSpec,
    ScaleTable,
    build_scale_table,
    estimate_K0,
    kappa_and_regime,
    transition_prob,
)
from .exact import first_passage, occupancy, ResourceLimitError
from .asymptotics import FormulaId
from .special import regularized_upper_gamma, bessel_exit_moments
from .config import ConfigError, RunConfig, load_config, parse_config
from .harness import run, resource_estimate

__version__ = "0.1.0"

__all__ = [
    "PerturbationKind",
    "Regime",
    "WalkSpec",
    "ScaleTable",
    "build_scale_table",
    "estimate_K0",
    "kappa_and_regime",
    "transition_prob",
    "first_passage",
    "occupancy",
    "ResourceLimitError",
    "FormulaId",
    "regularized_upper_gamma",
    "bessel_exit_moments",
    "ConfigError",
    "RunConfig",
    "load_config",
    "parse_config",
    "run",
    "resource_estimate",
]
