from __future__ import annotations

import itertools

import highspy
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridattack.milp import (
    INFEASIBLE,
    NODE_LIMIT,
    OPTIMAL,
    UNBOUNDED,
    LinearProgram,
    MilpModel,
    dual_objective,
    export_mps,
    read_mps,
    solve_lp,
    solve_milp,
)

BACKENDS = ("native", "highs")


def gap(lp, out):
    return abs(out.objective - dual_objective(lp, out.duals, out.reduced_costs))


def vertex_oracle(c, A, b, maximize):
    """Best objective over all vertices of {x : A x <= b} in two dimensions."""
    best = None
    for i, j in itertools.combinations(range(len(b)), 2):
        M = np.array([A[i], A[j]], dtype=float)
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        x = np.linalg.solve(M, [b[i], b[j]])
        if np.all(np.asarray(A) @ x <= np.asarray(b) + 1e-9):
            val = float(np.dot(c, x))
            if best is None or (val > best if maximize else val < best):
                best = val
    return best


def brute_force(model: MilpModel):
    """Enumerate every binary assignment and solve the remaining LP."""
    lp, bins = model.lp, model.binaries
    best = None
    for bits in itertools.product((0.0, 1.0), repeat=bins.size):
        lb, ub = lp.lb.copy(), lp.ub.copy()
        lb[bins] = ub[bins] = bits
        out = solve_lp(lp.copy(lb=lb, ub=ub), backend="highs")
        if out.status == OPTIMAL:
            if best is None or (out.objective > best if lp.maximize else out.objective < best):
                best = out.objective
    return best


def knapsack(values, weights, capacity):
    n = len(values)
    lp = LinearProgram(values, [weights], ["<"], [capacity], np.zeros(n), np.ones(n), maximize=True)
    return MilpModel(lp, np.arange(n))


KNAPSACK = knapsack([10, 13, 7, 8, 11, 4, 9, 6], [5, 7, 3, 4, 6, 2, 5, 3], 17)


# -- LP --------------------------------------------------------------------


@pytest.mark.parametrize("backend", BACKENDS)
def test_single_variable(backend):
    lp = LinearProgram([1.0], [[1.0]], ["<"], [3.0], [-np.inf], [np.inf], maximize=True)
    out = solve_lp(lp, backend)
    assert out.status == OPTIMAL
    assert out.x[0] == pytest.approx(3.0)
    assert out.duals[0] == pytest.approx(1.0)
    assert gap(lp, out) < 1e-7


@pytest.mark.parametrize("backend", BACKENDS)
def test_two_variable_vertex(backend):
    c, A, b = [3.0, 2.0], [[1, 1], [1, 3], [2, 1]], [4, 6, 6]
    lp = LinearProgram(c, A, ["<"] * 3, b, [0, 0], [np.inf, np.inf], maximize=True)
    out = solve_lp(lp, backend)
    A_full, b_full = A + [[-1, 0], [0, -1]], b + [0, 0]
    assert out.objective == pytest.approx(vertex_oracle(c, A_full, b_full, True))
    assert gap(lp, out) < 1e-7


@pytest.mark.parametrize("backend", BACKENDS)
def test_contradictory_constraints(backend):
    lp = LinearProgram([1.0], [[1.0], [1.0]], [">", "<"], [2.0, 1.0], [-np.inf], [np.inf])
    assert solve_lp(lp, backend).status == INFEASIBLE


@pytest.mark.parametrize("backend", BACKENDS)
def test_unbounded(backend):
    lp = LinearProgram([1.0, 1.0], [[1.0, -1.0]], ["<"], [1.0], [0, 0], [np.inf, np.inf], maximize=True)
    assert solve_lp(lp, backend).status == UNBOUNDED


def test_rejects_non_finite_coefficients():
    with pytest.raises(ValueError):
        LinearProgram([np.nan], [[1.0]], ["<"], [1.0], [0], [1])
    with pytest.raises(ValueError):
        LinearProgram([1.0], [[1.0]], ["!"], [1.0], [0], [1])


@st.composite
def small_lps(draw):
    m = draw(st.integers(1, 5))
    coef = st.integers(-5, 5).map(float)
    A = [[draw(coef), draw(coef)] for _ in range(m)]
    b = [draw(st.integers(0, 10).map(float)) for _ in range(m)]
    c = [draw(coef), draw(coef)]
    return c, A, b, draw(st.booleans())


@settings(max_examples=80, deadline=None)
@given(small_lps())
def test_lp_matches_vertex_enumeration(case):
    c, A, b = case[0], case[1], case[2]
    maximize = case[3]
    # box keeps every instance bounded; b >= 0 keeps the origin feasible
    lp = LinearProgram(c, A, ["<"] * len(b), b, [0, 0], [4, 4], maximize=maximize)
    out = solve_lp(lp, "native")
    assert out.status == OPTIMAL
    A_full = A + [[-1, 0], [0, -1], [1, 0], [0, 1]]
    b_full = b + [0, 0, 4, 4]
    assert out.objective == pytest.approx(vertex_oracle(c, A_full, b_full, maximize), abs=1e-9)
    assert gap(lp, out) < 1e-7
    assert lp.primal_residual(out.x) < 1e-7


# -- MILP ------------------------------------------------------------------


@pytest.mark.parametrize("backend", BACKENDS)
def test_knapsack_matches_enumeration(backend):
    out = solve_milp(KNAPSACK, backend=backend)
    assert out.status == OPTIMAL
    assert out.objective == pytest.approx(brute_force(KNAPSACK))
    assert KNAPSACK.integrality_residual(out.x) < 1e-6


def test_fixed_binaries_reduce_to_lp():
    lp = KNAPSACK.lp.copy()
    fixed = np.array([1, 0, 1, 0, 1, 0, 0, 1], dtype=float)
    lp.lb[:] = lp.ub[:] = fixed
    lp_out = solve_lp(lp.copy())
    milp_out = solve_milp(MilpModel(lp, np.arange(8)))
    assert milp_out.objective == pytest.approx(lp_out.objective)
    np.testing.assert_allclose(milp_out.x, fixed)


@pytest.mark.parametrize("backend", BACKENDS)
def test_integrality_infeasible(backend):
    lp = LinearProgram([1.0, 1.0], [[1.0, 1.0]], ["="], [0.5], [0, 0], [1, 1])
    assert solve_milp(MilpModel(lp, [0, 1]), backend=backend).status == INFEASIBLE


def test_node_limit_keeps_incumbent():
    values = np.arange(12, 0, -1) * 3.0 + 1
    model = knapsack(values, np.arange(1, 13) * 2.0 + 1, 40.0)
    out = solve_milp(model, node_limit=2)
    assert out.status in (NODE_LIMIT, OPTIMAL)
    if out.x is not None:
        assert model.integrality_residual(out.x) < 1e-6
        assert model.lp.primal_residual(out.x) < 1e-7


def test_deterministic():
    a, b = solve_milp(KNAPSACK), solve_milp(KNAPSACK)
    np.testing.assert_array_equal(a.x, b.x)
    assert a.nodes == b.nodes


@st.composite
def small_milps(draw):
    n_bin = draw(st.integers(1, 8))
    n_cont = draw(st.integers(0, 3))
    n = n_bin + n_cont
    m = draw(st.integers(1, 4))
    coef = st.integers(-6, 6).map(float)
    A = [[draw(coef) for _ in range(n)] for _ in range(m)]
    b = [draw(st.integers(0, 12).map(float)) for _ in range(m)]
    senses = [draw(st.sampled_from(["<", ">"])) for _ in range(m)]
    c = [draw(coef) for _ in range(n)]
    ub = [1.0] * n_bin + [draw(st.integers(1, 5).map(float)) for _ in range(n_cont)]
    lp = LinearProgram(c, A, senses, b, np.zeros(n), ub, maximize=draw(st.booleans()))
    return MilpModel(lp, np.arange(n_bin))


@settings(max_examples=60, deadline=None)
@given(small_milps())
def test_milp_matches_brute_force(model):
    expected = brute_force(model)
    for backend in BACKENDS:
        out = solve_milp(model, backend=backend)
        if expected is None:
            assert out.status == INFEASIBLE
            continue
        assert out.status == OPTIMAL
        assert out.objective == pytest.approx(expected, abs=1e-7)
        assert model.integrality_residual(out.x) < 1e-6
        assert model.lp.primal_residual(out.x) < 1e-7


def test_twelve_binaries_brute_force():
    rng = np.random.default_rng(3)
    values, weights = rng.integers(5, 30, 12).astype(float), rng.integers(3, 15, 12).astype(float)
    model = knapsack(values, weights, float(weights.sum() / 2))
    assert solve_milp(model).objective == pytest.approx(brute_force(model))


# -- MPS -------------------------------------------------------------------


def test_knapsack_mps_has_integer_markers():
    text = export_mps(KNAPSACK, name="KNAP")
    assert "'INTORG'" in text and "'INTEND'" in text
    assert text.splitlines()[0].startswith("NAME")
    assert text.rstrip().endswith("ENDATA")


def test_empty_model_skeleton():
    text = export_mps(LinearProgram(np.zeros(0), np.zeros((0, 0)), [], [], [], []))
    lines = [l.strip() for l in text.splitlines()]
    for section in ("ROWS", "COLUMNS", "RHS", "ENDATA"):
        assert section in lines


def test_mps_round_trip():
    lp = LinearProgram([2.0, -1.0, 0.5], [[1, 2, 0], [0, 1, -1], [1, 0, 1]], ["<", "=", ">"],
                       [4.0, 1.0, 0.25], [0, -np.inf, -1], [np.inf, 3, 2], maximize=True)
    model = MilpModel(lp, [0])
    back = read_mps(export_mps(model))
    assert back.lp.maximize
    np.testing.assert_array_equal(back.binaries, [0])
    np.testing.assert_allclose(back.lp.A, lp.A)
    np.testing.assert_allclose(back.lp.lb, lp.lb)
    np.testing.assert_allclose(back.lp.ub, lp.ub)
    assert solve_milp(back).objective == pytest.approx(solve_milp(model).objective)


def test_external_solver_reads_mps(tmp_path):
    path = tmp_path / "knap.mps"
    path.write_text(export_mps(KNAPSACK))
    h = highspy.Highs()
    h.setOptionValue("output_flag", False)
    h.readModel(str(path))
    h.run()
    assert h.getInfo().objective_function_value == pytest.approx(solve_milp(KNAPSACK).objective, abs=1e-6)
