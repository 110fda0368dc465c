"""Best-first branch-and-bound over binary variables with depth-first plunging."""

from __future__ import annotations

import heapq
import logging

import numpy as np

from .model import (
    INFEASIBLE,
    INT_TOL,
    NODE_LIMIT,
    OPTIMAL,
    UNBOUNDED,
    MilpModel,
    SolveOutcome,
)
from .simplex import solve_lp_native

log = logging.getLogger(__name__)


def solve_milp_native(
    model: MilpModel,
    node_limit: int = 100_000,
    gap_tol: float = 1e-9,
    verbose: bool = False,
) -> SolveOutcome:
    """Branch on the most fractional binary (ties: lowest index).

    After each branching the child on the rounding side of the fractional value
    is processed immediately (plunge); the sibling goes to a heap ordered by the
    parent bound. The tree is searched in the minimization sense internally.
    """
    lp = model.lp
    sense = -1.0 if lp.maximize else 1.0
    bins = model.binaries
    incumbent_x = None
    incumbent = np.inf  # minimization-sense objective
    heap: list[tuple[float, int, np.ndarray, np.ndarray]] = []
    seq = 0
    nodes = 0
    plunge = (-np.inf, lp.lb.copy(), lp.ub.copy())
    status = None

    def tolerance(value: float) -> float:
        return gap_tol * max(1.0, abs(value))

    while True:
        if plunge is not None:
            parent_bound, lb, ub = plunge
            plunge = None
        else:
            if not heap:
                break
            parent_bound, _, lb, ub = heapq.heappop(heap)
            if parent_bound >= incumbent - tolerance(incumbent):
                heap.clear()
                break
        if parent_bound >= incumbent - tolerance(incumbent):
            continue
        if nodes >= node_limit:
            status = NODE_LIMIT
            seq += 1
            heapq.heappush(heap, (parent_bound, seq, lb, ub))
            break
        nodes += 1
        res = solve_lp_native(lp.copy(lb=lb, ub=ub))
        if res.status == UNBOUNDED and nodes == 1:
            return SolveOutcome(UNBOUNDED, nodes=nodes, backend="native")
        if res.status != OPTIMAL:
            continue
        value = sense * res.objective
        if value >= incumbent - tolerance(incumbent):
            continue
        xb = res.x[bins]
        frac = np.abs(xb - np.round(xb))
        if bins.size == 0 or frac.max() <= INT_TOL:
            x = res.x.copy()
            x[bins] = np.round(x[bins])
            incumbent, incumbent_x = value, x
            if verbose:
                log.info("node %d: incumbent %.10g", nodes, sense * value)
            continue
        k = int(np.argmax(frac))  # first maximum -> lowest index on ties
        j = bins[k]
        lb_down, ub_down = lb, ub.copy()
        ub_down[j] = 0.0
        lb_up, ub_up = lb.copy(), ub
        lb_up[j] = 1.0
        if verbose:
            log.info("node %d: bound %.10g branch x%d=%.4f", nodes, sense * value, j, res.x[j])
        up_first = xb[k] - np.floor(xb[k]) >= 0.5
        dive, other = ((lb_up, ub_up), (lb_down, ub_down)) if up_first else ((lb_down, ub_down), (lb_up, ub_up))
        seq += 1
        heapq.heappush(heap, (value, seq, other[0], other[1]))
        plunge = (value, dive[0], dive[1])

    open_bound = min((h[0] for h in heap), default=np.inf)
    if incumbent_x is None:
        if status == NODE_LIMIT:
            return SolveOutcome(NODE_LIMIT, nodes=nodes, bound=sense * open_bound, backend="native")
        return SolveOutcome(INFEASIBLE, nodes=nodes, backend="native")
    bound = min(open_bound, incumbent)
    return SolveOutcome(
        status or OPTIMAL,
        x=incumbent_x,
        objective=float(lp.c @ incumbent_x),
        nodes=nodes,
        bound=sense * bound,
        backend="native",
    )
