"""Linear and mixed-binary linear programming.

Two backends share one contract: ``"native"`` (dense two-phase simplex and
best-first branch-and-bound, written here) and ``"highs"`` (HiGHS, through
scipy for LPs and highspy for MILPs). Results are :class:`SolveOutcome`
objects; infeasibility and unboundedness are statuses, not exceptions.
"""

from __future__ import annotations

import numpy as np

from .branch_bound import solve_milp_native
from .highs import solve_lp_highs, solve_milp_highs
from .model import (
    FEAS_TOL,
    INFEASIBLE,
    INT_TOL,
    ITERATION_LIMIT,
    NODE_LIMIT,
    OPTIMAL,
    UNBOUNDED,
    LinearProgram,
    MilpModel,
    SolveOutcome,
    dual_objective,
)
from .mps import export_mps, read_mps
from .simplex import solve_lp_native

BACKENDS = ("native", "highs")


def solve_lp(lp: LinearProgram, backend: str = "native") -> SolveOutcome:
    if backend == "native":
        return solve_lp_native(lp)
    if backend == "highs":
        return solve_lp_highs(lp)
    raise ValueError(f"unknown backend {backend!r}; choose from {BACKENDS}")


def solve_milp(
    model: MilpModel,
    node_limit: int = 100_000,
    gap_tol: float = 1e-9,
    backend: str = "native",
    time_limit: float | None = None,
    verbose: bool = False,
    start: np.ndarray | None = None,
    options: dict | None = None,
) -> SolveOutcome:
    """``time_limit``, ``start`` and ``options`` apply to the HiGHS backend only."""
    if backend == "native":
        return solve_milp_native(model, node_limit=node_limit, gap_tol=gap_tol, verbose=verbose)
    if backend == "highs":
        return solve_milp_highs(
            model, node_limit=node_limit, gap_tol=gap_tol, time_limit=time_limit,
            start=start, options=options,
        )
    raise ValueError(f"unknown backend {backend!r}; choose from {BACKENDS}")


__all__ = [
    "BACKENDS", "FEAS_TOL", "INFEASIBLE", "INT_TOL", "ITERATION_LIMIT", "NODE_LIMIT",
    "OPTIMAL", "UNBOUNDED", "LinearProgram", "MilpModel", "SolveOutcome",
    "dual_objective", "export_mps", "read_mps", "solve_lp", "solve_milp",
]
