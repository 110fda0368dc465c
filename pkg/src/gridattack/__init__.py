"""Worst-case line-overload attacks on power-system state estimation.

The pipeline: parse a case, simulate noisy measurements, estimate the state
(AC weighted least squares with a chi-square bad-data test), dispatch with a
DC optimal power flow, and search for the undetectable load-redistribution
attack that maximizes the flow on a target line through a single-level MILP.
"""

from __future__ import annotations

from .bilevel import AttackProblemSpec, AttackSolution, build_attack_milp, solve_attack, verify_kkt
from .errors import CaseFormatError, ConvergenceError, NetworkValidationError, ObservabilityError
from .harness import ScenarioConfig, run_consequence, run_sweep
from .network import Network, load_case, parse_case, scale_ratings

__version__ = "0.1.0"

__all__ = [
    "AttackProblemSpec",
    "AttackSolution",
    "CaseFormatError",
    "ConvergenceError",
    "Network",
    "NetworkValidationError",
    "ObservabilityError",
    "ScenarioConfig",
    "build_attack_milp",
    "load_case",
    "parse_case",
    "run_consequence",
    "run_sweep",
    "scale_ratings",
    "solve_attack",
    "verify_kkt",
]
