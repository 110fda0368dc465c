"""Dense two-phase tableau simplex.

The LP is rewritten over nonnegative variables (shifting finite lower bounds,
reflecting variables that only have an upper bound, splitting free variables,
turning finite upper bounds into rows), rows are scaled to a nonnegative
right-hand side, and slack/surplus/artificial columns are appended. Entering
columns follow Dantzig's rule until 1000 consecutive degenerate pivots, after
which Bland's rule takes over for the rest of the solve. The final basis is
re-solved from the original columns so that reported primal and dual values do
not carry tableau round-off.
"""

from __future__ import annotations

import numpy as np

from .model import (
    INFEASIBLE,
    ITERATION_LIMIT,
    OPTIMAL,
    UNBOUNDED,
    LinearProgram,
    SolveOutcome,
)

PIVOT_TOL = 1e-9
COST_TOL = 1e-9
FEAS_TOL = 1e-7
DEGENERATE_SWITCH = 1000


class _Standardized:
    """``min cs^T y`` s.t. ``As y = bs`` (``bs >= 0``), ``y >= 0``; ``x = offset + T @ y``."""

    def __init__(self, lp: LinearProgram):
        n = lp.n_vars
        sense = -1.0 if lp.maximize else 1.0
        cols: list[tuple[int, float]] = []  # (original var, coefficient)
        offset = np.zeros(n)
        bound_rows: list[tuple[int, float]] = []  # (y column, upper)
        for j in range(n):
            lo, hi = lp.lb[j], lp.ub[j]
            if np.isfinite(lo):
                offset[j] = lo
                cols.append((j, 1.0))
                if np.isfinite(hi):
                    bound_rows.append((len(cols) - 1, hi - lo))
            elif np.isfinite(hi):
                offset[j] = hi
                cols.append((j, -1.0))
            else:
                cols.append((j, 1.0))
                cols.append((j, -1.0))
        ny = len(cols)
        T = np.zeros((n, ny))
        for k, (j, coef) in enumerate(cols):
            T[j, k] = coef
        self.T = T
        self.offset = offset
        self.obj_const = float(sense * lp.c @ offset)

        m0 = lp.n_rows
        A_rows = lp.A @ T if m0 else np.zeros((0, ny))
        b_rows = lp.b - lp.A @ offset if m0 else np.zeros(0)
        senses = list(lp.senses)
        nb = len(bound_rows)
        A_bnd = np.zeros((nb, ny))
        b_bnd = np.zeros(nb)
        for r, (k, u) in enumerate(bound_rows):
            A_bnd[r, k] = 1.0
            b_bnd[r] = u
        A = np.vstack([A_rows, A_bnd])
        b = np.concatenate([b_rows, b_bnd])
        senses += ["<"] * nb
        flip = np.where(b < 0, -1.0, 1.0)
        A = A * flip[:, None]
        b = b * flip
        swap = {"<": ">", ">": "<", "=": "="}
        senses = [swap[s] if f < 0 else s for s, f in zip(senses, flip)]
        self.row_flip = flip
        self.n_orig_rows = m0

        m = len(b)
        n_slack = sum(s != "=" for s in senses)
        n_art = sum(s != "<" for s in senses)
        width = ny + n_slack + n_art
        As = np.zeros((m, width))
        As[:, :ny] = A
        basis = np.empty(m, dtype=int)
        s_col, a_col = ny, ny + n_slack
        for i, s in enumerate(senses):
            if s == "<":
                As[i, s_col] = 1.0
                basis[i] = s_col
                s_col += 1
            elif s == ">":
                As[i, s_col] = -1.0
                s_col += 1
            if s != "<":
                As[i, a_col] = 1.0
                basis[i] = a_col
                a_col += 1
        self.A = As
        self.b = b
        self.c = np.zeros(width)
        self.c[:ny] = sense * (lp.c @ T)
        self.basis = basis
        self.n_struct = ny
        self.first_art = ny + n_slack
        self.width = width


def _pivot(M: np.ndarray, r: int, q: int) -> None:
    M[r] /= M[r, q]
    col = M[:, q].copy()
    col[r] = 0.0
    M -= np.outer(col, M[r])


def _iterate(M, basis, allowed, max_iter, stats) -> str:
    """Run simplex pivots on tableau ``M`` (last row = reduced costs, last column = rhs)."""
    m = M.shape[0] - 1
    degenerate_run = 0
    bland = False
    while True:
        if stats["iterations"] >= max_iter:
            return ITERATION_LIMIT
        d = M[-1, :-1]
        candidates = np.flatnonzero((d < -COST_TOL) & allowed)
        if candidates.size == 0:
            return OPTIMAL
        q = int(candidates[0]) if bland else int(candidates[np.argmin(d[candidates])])
        col = M[:m, q]
        rows = np.flatnonzero(col > PIVOT_TOL)
        if rows.size == 0:
            return UNBOUNDED
        ratios = M[rows, -1] / col[rows]
        best = ratios.min()
        ties = rows[ratios <= best + 1e-12 * max(1.0, abs(best))]
        r = int(ties[np.argmin(basis[ties])])
        _pivot(M, r, q)
        basis[r] = q
        stats["iterations"] += 1
        if best <= 1e-12:
            degenerate_run += 1
            if degenerate_run >= DEGENERATE_SWITCH:
                bland = True
        else:
            degenerate_run = 0


def solve_lp_native(lp: LinearProgram, max_iter: int | None = None) -> SolveOutcome:
    std = _Standardized(lp)
    m, width = std.A.shape
    if max_iter is None:
        max_iter = 20000 + 50 * (m + width)
    stats = {"iterations": 0}
    basis = std.basis.copy()
    M = np.zeros((m + 1, width + 1))
    M[:m, :width] = std.A
    M[:m, -1] = std.b

    # phase 1: minimize the sum of artificials
    is_art = np.zeros(width, dtype=bool)
    is_art[std.first_art:] = True
    if is_art.any():
        cost1 = is_art.astype(float)
        M[-1, :width] = cost1
        M[-1, -1] = 0.0
        for i in range(m):
            if is_art[basis[i]]:
                M[-1] -= M[i]
        status = _iterate(M, basis, np.ones(width, dtype=bool), max_iter, stats)
        if status == ITERATION_LIMIT:
            return SolveOutcome(ITERATION_LIMIT, iterations=stats["iterations"], backend="native")
        infeas = -M[-1, -1]
        scale = max(1.0, float(np.abs(std.b).max(initial=0.0)))
        if infeas > FEAS_TOL * scale:
            return SolveOutcome(INFEASIBLE, iterations=stats["iterations"], backend="native")
        # drive remaining artificials out of the basis where possible
        for i in range(m):
            if is_art[basis[i]]:
                row = M[i, :width].copy()
                row[is_art] = 0.0
                nz = np.flatnonzero(np.abs(row) > 1e-9)
                if nz.size:
                    q = int(nz[np.argmax(np.abs(row[nz]))])
                    _pivot(M, i, q)
                    basis[i] = q

    # phase 2
    allowed = ~is_art
    M[-1, :width] = std.c
    M[-1, -1] = 0.0
    for i in range(m):
        if std.c[basis[i]] != 0.0:
            M[-1] -= std.c[basis[i]] * M[i]
    status = _iterate(M, basis, allowed, max_iter, stats)
    if status != OPTIMAL:
        return SolveOutcome(status, iterations=stats["iterations"], backend="native")

    # recover values from the final basis using original columns
    B = std.A[:, basis]
    try:
        yB = np.linalg.solve(B, std.b)
        pi = np.linalg.solve(B.T, std.c[basis])
    except np.linalg.LinAlgError:
        yB = M[:m, -1].copy()
        pi = np.linalg.lstsq(B.T, std.c[basis], rcond=None)[0]
    y = np.zeros(width)
    y[basis] = np.maximum(yB, 0.0)
    x = std.offset + std.T @ y[: std.n_struct]

    # shadow prices w.r.t. the original rows, in the LP's own objective sense
    sense = -1.0 if lp.maximize else 1.0
    duals = sense * std.row_flip[: std.n_orig_rows] * pi[: std.n_orig_rows]
    reduced = lp.c - lp.A.T @ duals if lp.n_rows else lp.c.copy()
    return SolveOutcome(
        OPTIMAL,
        x=x,
        objective=float(lp.c @ x),
        duals=duals,
        reduced_costs=reduced,
        iterations=stats["iterations"],
        backend="native",
    )
