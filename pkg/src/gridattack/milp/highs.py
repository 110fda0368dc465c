"""HiGHS backend (LPs through ``scipy.optimize``, MILPs through ``highspy``);
same contract as the native solvers."""

from __future__ import annotations

import numpy as np
import highspy
from scipy.optimize import linprog
from scipy.sparse import csc_matrix

from .model import (
    INFEASIBLE,
    ITERATION_LIMIT,
    NODE_LIMIT,
    OPTIMAL,
    UNBOUNDED,
    LinearProgram,
    MilpModel,
    SolveOutcome,
)


def solve_lp_highs(lp: LinearProgram) -> SolveOutcome:
    sense = -1.0 if lp.maximize else 1.0
    le, ge, eq = (lp.senses == "<"), (lp.senses == ">"), (lp.senses == "=")
    A_ub = np.vstack([lp.A[le], -lp.A[ge]])
    b_ub = np.concatenate([lp.b[le], -lp.b[ge]])
    res = linprog(
        sense * lp.c,
        A_ub=A_ub if A_ub.size else None,
        b_ub=b_ub if A_ub.size else None,
        A_eq=lp.A[eq] if eq.any() else None,
        b_eq=lp.b[eq] if eq.any() else None,
        bounds=np.column_stack([lp.lb, lp.ub]),
        method="highs",
    )
    if res.status == 2:
        return SolveOutcome(INFEASIBLE, backend="highs")
    if res.status == 3:
        return SolveOutcome(UNBOUNDED, backend="highs")
    if res.status != 0:
        return SolveOutcome(ITERATION_LIMIT, backend="highs")
    duals = np.zeros(lp.n_rows)
    n_le = int(le.sum())
    if A_ub.size:
        marg = res.ineqlin.marginals
        duals[le] = marg[:n_le]
        duals[ge] = -marg[n_le:]
    if eq.any():
        duals[eq] = res.eqlin.marginals
    duals *= sense
    reduced = lp.c - lp.A.T @ duals if lp.n_rows else lp.c.copy()
    return SolveOutcome(
        OPTIMAL,
        x=res.x,
        objective=float(lp.c @ res.x),
        duals=duals,
        reduced_costs=reduced,
        iterations=int(getattr(res, "nit", 0)),
        backend="highs",
    )


def _highs_lp(model: MilpModel) -> highspy.HighsLp:
    lp = model.lp
    inf = highspy.kHighsInf
    A = csc_matrix(lp.A)
    out = highspy.HighsLp()
    out.num_col_ = lp.n_vars
    out.num_row_ = lp.n_rows
    out.col_cost_ = -lp.c if lp.maximize else lp.c
    out.col_lower_ = np.where(np.isfinite(lp.lb), lp.lb, -inf)
    out.col_upper_ = np.where(np.isfinite(lp.ub), lp.ub, inf)
    out.row_lower_ = np.where(lp.senses != "<", lp.b, -inf)
    out.row_upper_ = np.where(lp.senses != ">", lp.b, inf)
    out.a_matrix_.format_ = highspy.MatrixFormat.kColwise
    out.a_matrix_.start_ = A.indptr
    out.a_matrix_.index_ = A.indices
    out.a_matrix_.value_ = A.data
    kinds = [highspy.HighsVarType.kContinuous] * lp.n_vars
    for j in model.binaries:
        kinds[j] = highspy.HighsVarType.kInteger
    out.integrality_ = kinds
    return out


def solve_milp_highs(
    model: MilpModel,
    node_limit: int = 100_000,
    gap_tol: float = 1e-9,
    time_limit: float | None = None,
    start: np.ndarray | None = None,
    options: dict | None = None,
) -> SolveOutcome:
    """Branch-and-cut in HiGHS. ``start`` is offered as the first incumbent
    (ignored by HiGHS if infeasible); ``options`` pass straight through.

    With a node limit and no time limit the run is deterministic."""
    lp = model.lp
    sense = -1.0 if lp.maximize else 1.0
    h = highspy.Highs()
    h.setOptionValue("output_flag", False)
    h.setOptionValue("threads", 1)
    h.setOptionValue("mip_max_nodes", int(node_limit))
    h.setOptionValue("mip_rel_gap", float(gap_tol))
    if time_limit is not None:
        h.setOptionValue("time_limit", float(time_limit))
    for key, value in (options or {}).items():
        h.setOptionValue(key, value)
    h.passModel(_highs_lp(model))
    if start is not None:
        sol = highspy.HighsSolution()
        sol.col_value = np.asarray(start, dtype=float).tolist()
        sol.value_valid = True
        h.setSolution(sol)
    h.run()
    status = h.getModelStatus()
    info = h.getInfo()
    nodes = int(info.mip_node_count)
    bound = sense * float(info.mip_dual_bound)
    if status == highspy.HighsModelStatus.kInfeasible:
        return SolveOutcome(INFEASIBLE, nodes=nodes, backend="highs")
    if status in (highspy.HighsModelStatus.kUnbounded, highspy.HighsModelStatus.kUnboundedOrInfeasible):
        return SolveOutcome(UNBOUNDED, nodes=nodes, backend="highs")
    if info.primal_solution_status != 2:  # no feasible point
        return SolveOutcome(NODE_LIMIT, nodes=nodes, bound=bound, backend="highs")
    x = np.asarray(h.getSolution().col_value, dtype=float)
    x[model.binaries] = np.round(x[model.binaries])
    done = status == highspy.HighsModelStatus.kOptimal
    return SolveOutcome(
        OPTIMAL if done else NODE_LIMIT, x=x, objective=float(lp.c @ x),
        nodes=nodes, bound=bound, backend="highs",
    )
