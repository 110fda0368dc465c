"""Linear and mixed-binary program containers shared by all solver backends."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NODE_LIMIT = "node_limit"
ITERATION_LIMIT = "iteration_limit"

FEAS_TOL = 1e-7
INT_TOL = 1e-6


@dataclass(eq=False)
class LinearProgram:
    """``min/max c^T x`` s.t. ``A x (<=,=,>=) b`` and ``lb <= x <= ub``.

    ``senses`` holds one of ``"<"``, ``"="``, ``">"`` per row. Bounds may be
    infinite; every other coefficient must be finite.
    """

    c: np.ndarray
    A: np.ndarray
    senses: np.ndarray
    b: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    maximize: bool = False
    var_names: list[str] | None = None
    row_names: list[str] | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        A = np.asarray(self.A, dtype=float)
        if n == 0:
            A = A.reshape(np.asarray(self.b).size, 0)
        self.A = A.reshape(-1, n) if n else A
        m = self.A.shape[0]
        self.senses = np.asarray(self.senses, dtype="<U1").reshape(m)
        self.b = np.asarray(self.b, dtype=float).reshape(m)
        self.lb = np.broadcast_to(np.asarray(self.lb, dtype=float), (n,)).copy()
        self.ub = np.broadcast_to(np.asarray(self.ub, dtype=float), (n,)).copy()
        if not set(self.senses.tolist()) <= {"<", "=", ">"}:
            raise ValueError("row senses must be '<', '=' or '>'")
        for name, arr in (("c", self.c), ("A", self.A), ("b", self.b)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
        if np.any(np.isnan(self.lb)) or np.any(np.isnan(self.ub)):
            raise ValueError("bounds contain NaN")
        if np.any(self.lb == np.inf) or np.any(self.ub == -np.inf):
            raise ValueError("bounds point the wrong way")
        if self.var_names is not None and len(self.var_names) != n:
            raise ValueError("var_names length mismatch")
        if self.row_names is not None and len(self.row_names) != m:
            raise ValueError("row_names length mismatch")

    @property
    def n_vars(self) -> int:
        return self.c.size

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]

    def objective(self, x: np.ndarray) -> float:
        return float(self.c @ x)

    def primal_residual(self, x: np.ndarray) -> float:
        """Largest violation of any row or bound at ``x``."""
        ax = self.A @ x
        viol = [0.0]
        if self.n_rows:
            viol.append(np.max(np.where(self.senses == "<", ax - self.b, 0.0), initial=0.0))
            viol.append(np.max(np.where(self.senses == ">", self.b - ax, 0.0), initial=0.0))
            viol.append(np.max(np.where(self.senses == "=", np.abs(ax - self.b), 0.0), initial=0.0))
        if self.n_vars:
            viol.append(np.max(self.lb - x, initial=0.0))
            viol.append(np.max(x - self.ub, initial=0.0))
        return float(max(viol))

    def copy(self, **changes) -> "LinearProgram":
        fields = dict(
            c=self.c.copy(), A=self.A.copy(), senses=self.senses.copy(), b=self.b.copy(),
            lb=self.lb.copy(), ub=self.ub.copy(), maximize=self.maximize,
            var_names=self.var_names, row_names=self.row_names,
        )
        fields.update(changes)
        return LinearProgram(**fields)


@dataclass(eq=False)
class MilpModel:
    lp: LinearProgram
    binaries: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def __post_init__(self):
        self.binaries = np.unique(np.asarray(self.binaries, dtype=int))
        if self.binaries.size and (self.binaries.min() < 0 or self.binaries.max() >= self.lp.n_vars):
            raise ValueError("binary index out of range")
        lb = self.lp.lb[self.binaries]
        ub = self.lp.ub[self.binaries]
        self.lp.lb[self.binaries] = np.maximum(lb, 0.0)
        self.lp.ub[self.binaries] = np.minimum(ub, 1.0)

    def integrality_residual(self, x: np.ndarray) -> float:
        if not self.binaries.size:
            return 0.0
        xb = x[self.binaries]
        return float(np.max(np.abs(xb - np.round(xb))))


@dataclass(eq=False)
class SolveOutcome:
    status: str
    x: np.ndarray | None = None
    objective: float = float("nan")
    duals: np.ndarray | None = None
    reduced_costs: np.ndarray | None = None
    nodes: int = 0
    iterations: int = 0
    bound: float = float("nan")
    backend: str = ""

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


def dual_objective(lp: LinearProgram, duals: np.ndarray, reduced_costs: np.ndarray) -> float:
    """Lagrangian dual value ``b^T y + sum(bound * reduced cost)``.

    ``duals`` are shadow prices ``d objective / d b`` in the problem's own sense
    and ``reduced_costs = c - A^T y``. A reduced cost sitting on an infinite
    bound is reported as ``nan`` (dual infeasible) unless it is within a
    cost-relative round-off tolerance.
    """
    value = float(lp.b @ duals)
    sign = -1.0 if lp.maximize else 1.0
    tol = 1e-9 * max(1.0, float(np.max(np.abs(lp.c), initial=0.0)))
    for j, d in enumerate(reduced_costs):
        if d == 0.0:
            continue
        at_lower = sign * d > 0
        bound = lp.lb[j] if at_lower else lp.ub[j]
        if not np.isfinite(bound):
            if abs(d) > tol:
                return float("nan")
            continue
        value += bound * d
    return value
