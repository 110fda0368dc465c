from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridattack.dispatch import (
    ac_power_flow,
    dcopf,
    dcopf_relaxed,
    default_penalty,
    dispatch_kkt,
    linear_costs,
)
from gridattack.measurement import MeasurementModel, complete_plan
from gridattack.milp import INFEASIBLE
from gridattack.network import build_dc_matrices, build_ybus, load_case, make_network, scale_ratings


def kkt_worst(net, res, relaxed=True, costs=None):
    return max(dispatch_kkt(net, res, costs=costs, relaxed=relaxed).values())


def stub_line(rating):
    """Generator at bus 1 only; 0.5 pu load behind one line."""
    return make_network([(0, 0), (0.5, 0)], [(1, 2, 0.0, 0.5, 0.0, rating)], [(1, 0, 2, 10)])


# -- plain DC OPF ----------------------------------------------------------


def test_cheapest_first(triangle):
    wide = triangle.replace(branches=tuple(type(b)(b.from_bus, b.to_bus, b.r, b.x, b.b, 10.0)
                                           for b in triangle.branches))
    res = dcopf(wide, costs=wide.gen_cost)
    np.testing.assert_allclose(res.P_G, [1.0, 0.0], atol=1e-9)
    assert res.cost == pytest.approx(10.0)


def test_binding_line_splits_dispatch(triangle):
    # flow on 1-3 is (1 + P1) / 3 for unit reactances, so the 0.4 limit caps P1 at 0.2
    res = dcopf(triangle, costs=triangle.gen_cost)
    np.testing.assert_allclose(res.P_G, [0.2, 0.8], atol=1e-9)
    assert res.flows[1] == pytest.approx(0.4)
    assert res.cost == pytest.approx(0.2 * 10 + 0.8 * 20)
    assert kkt_worst(triangle, res, relaxed=False, costs=triangle.gen_cost) < 1e-7


def test_zero_load(triangle):
    empty = make_network([(0, 0), (0, 0), (0, 0)], [(b.from_bus, b.to_bus, b.r, b.x, b.b, b.rating)
                                                    for b in triangle.branches],
                         [(1, 0, 5, 10), (2, 0, 5, 20)])
    res = dcopf(empty)
    np.testing.assert_allclose(res.P_G, 0.0, atol=1e-12)
    assert res.cost == pytest.approx(0.0, abs=1e-12)


def test_infeasible_plain_dispatch():
    res = dcopf(stub_line(0.1))
    assert res.status == INFEASIBLE
    assert not res.optimal


# -- relaxed DC OPF --------------------------------------------------------


def test_relaxed_matches_plain_when_feasible(triangle, rts24):
    for net in (triangle, rts24):
        plain, relaxed = dcopf(net), dcopf_relaxed(net)
        np.testing.assert_allclose(relaxed.P_G, plain.P_G, atol=1e-8)
        np.testing.assert_allclose(relaxed.R, 0.0, atol=1e-10)
        assert relaxed.cost == pytest.approx(plain.cost, rel=1e-10)


def test_relaxation_on_binding_line_only():
    net = make_network(
        [(0, 0), (0.5, 0), (0.1, 0)],
        [(1, 2, 0.0, 0.5, 0.0, 0.1), (1, 3, 0.0, 0.5, 0.0, 5.0)],
        [(1, 0, 2, 10)],
    )
    res = dcopf_relaxed(net)
    np.testing.assert_allclose(res.R, [0.4, 0.0], atol=1e-9)
    assert kkt_worst(net, res) < 1e-7


def test_penalty_slope_guards_against_abuse(triangle):
    costs = triangle.gen_cost
    # relaxing by (1 + P1)/3 - 0.4 buys up to 10 $/pu-h of savings per pu moved: cheap slope abuses it
    cheap = dcopf_relaxed(triangle, penalty=1.0, costs=costs)
    assert cheap.R[1] > 0.2
    np.testing.assert_allclose(cheap.P_G, [1.0, 0.0], atol=1e-9)
    pinned = dcopf_relaxed(triangle, penalty=default_penalty(triangle, costs), costs=costs)
    np.testing.assert_allclose(pinned.R, 0.0, atol=1e-10)
    np.testing.assert_allclose(pinned.P_G, [0.2, 0.8], atol=1e-9)


def test_default_penalty_is_hundred_times_largest_cost(rts24):
    assert default_penalty(rts24) == pytest.approx(100 * linear_costs(rts24).max())


@pytest.mark.parametrize("factor", [1.0, 0.5])
@pytest.mark.parametrize("backend", ["native", "highs"])
def test_rts24_duality_and_kkt(rts24, factor, backend):
    net = scale_ratings(rts24, factor)
    res = dcopf_relaxed(net, backend=backend)
    assert res.optimal
    assert res.cost == pytest.approx(res.dual_cost, rel=1e-9, abs=1e-7)
    assert kkt_worst(net, res) < 1e-7


def test_backends_agree(rts24):
    net = scale_ratings(rts24, 0.5)
    a, b = dcopf_relaxed(net, backend="native"), dcopf_relaxed(net, backend="highs")
    assert a.cost == pytest.approx(b.cost, rel=1e-9)
    np.testing.assert_allclose(a.P_G, b.P_G, atol=1e-7)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.0, 3.0), min_size=24, max_size=24), st.floats(0.3, 1.0))
def test_relaxed_dispatch_kkt_and_duality(loads, factor):
    net = scale_ratings(load_case("rts24"), factor)
    P_L = np.asarray(loads) * net.P_L.max() / 3.0
    if P_L.sum() > net.P_G_max.sum() or P_L.sum() < net.P_G_min.sum():
        return
    res = dcopf_relaxed(net, P_L, backend="highs")
    assert res.optimal
    assert res.cost == pytest.approx(res.dual_cost, rel=1e-7, abs=1e-7)
    assert kkt_worst(net, res) < 1e-7


# -- AC power flow ---------------------------------------------------------


def test_flat_lossless_zero_load():
    net = make_network([(0, 0), (0, 0), (0, 0)], [(1, 2, 0, 0.2, 0, 1), (2, 3, 0, 0.3, 0, 1)], [(1, 0, 1, 1)])
    res = ac_power_flow(net, np.zeros(1))
    assert res.converged
    np.testing.assert_allclose(res.state.theta, 0.0, atol=1e-12)
    np.testing.assert_allclose(res.state.V, 1.0, atol=1e-12)
    np.testing.assert_allclose(res.P_from, 0.0, atol=1e-12)
    np.testing.assert_allclose(res.Q_from, 0.0, atol=1e-12)


def test_two_bus_closed_form(two_bus):
    # with a = V2 cos(d), b = V2 sin(d): b = P x = 0.1 and a - (a^2 + b^2) = Q x = 0.025
    a = (1 + math.sqrt(1 - 4 * (0.01 + 0.025))) / 2
    V2, theta2 = math.hypot(a, 0.1), -math.atan2(0.1, a)
    res = ac_power_flow(two_bus, np.array([0.2]))
    assert res.converged
    assert res.state.V[1] == pytest.approx(V2, abs=1e-10)
    assert res.state.theta[1] == pytest.approx(theta2, abs=1e-10)
    assert res.P_from[0] == pytest.approx(0.2, abs=1e-10)


def test_small_load_active_flows_match_dc(rts24):
    net = rts24.replace(
        branches=tuple(type(br)(br.from_bus, br.to_bus, 0.0, br.x, 0.0, br.rating) for br in rts24.branches),
        buses=tuple(type(b)(b.id, b.kind, 0.1 * b.P_L, 0.1 * b.Q_L) for b in rts24.buses),
        generators=tuple(type(g)(g.bus, 0.0, g.P_max, g.Q_min, g.Q_max, g.cost) for g in rts24.generators),
    )
    dc = dcopf(net)
    ac = ac_power_flow(net, dc.P_G)
    assert ac.converged
    assert np.max(np.abs(ac.P_from - dc.flows)) < 0.02 * np.max(np.abs(dc.flows))


def test_converged_balance_and_monotone_tail(rts24):
    res = ac_power_flow(rts24, dcopf(rts24).P_G)
    assert res.converged
    tail = res.history[-3:]
    assert all(b < a for a, b in zip(tail, tail[1:]))
    # nodal balance at the PQ buses from the measurement model
    Y = build_ybus(rts24).Y
    V = res.state.complex
    S = V * np.conj(Y @ V)
    pq = [k for k in range(24) if k + 1 not in rts24.generator_buses]
    np.testing.assert_allclose(S.real[pq], -rts24.P_L[pq], atol=1e-8)
    np.testing.assert_allclose(S.imag[pq], -rts24.Q_L[pq], atol=1e-8)


def test_ac_branch_flows_agree_with_measurement_model(rts24):
    res = ac_power_flow(rts24, dcopf(rts24).P_G)
    z = MeasurementModel(rts24, complete_plan(rts24)).h(res.state)
    np.testing.assert_allclose(z[:38], res.P_from, atol=1e-12)
    np.testing.assert_allclose(z[38:76], res.P_to, atol=1e-12)
    np.testing.assert_allclose(res.branch_S, np.maximum(np.hypot(res.P_from, res.Q_from),
                                                        np.hypot(res.P_to, res.Q_to)))


def test_divergence_flagged(rts24):
    heavy = rts24.replace(buses=tuple(type(b)(b.id, b.kind, 8 * b.P_L, 8 * b.Q_L, b.voltage_setpoint,
                                              b.gs, b.bs) for b in rts24.buses))
    res = ac_power_flow(heavy, 8 * dcopf(rts24).P_G)
    assert not res.converged
    assert res.mismatch > 1e-8


def test_dc_flows_equal_h2_theta(rts24):
    res = dcopf(rts24)
    np.testing.assert_allclose(res.flows, build_dc_matrices(rts24).H2 @ res.theta)
    assert abs(res.theta[rts24.slack]) < 1e-12
