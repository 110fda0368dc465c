from __future__ import annotations

import numpy as np
import pytest

from gridattack.dispatch import ac_power_flow, dcopf
from gridattack.measurement import MeasurementSet, complete_plan, h_eval
from gridattack.network import load_case, make_network, scale_ratings


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def rts24():
    return load_case("rts24")


@pytest.fixture(scope="session")
def rts24_congested(rts24):
    return scale_ratings(rts24, 0.5)


@pytest.fixture(scope="session")
def rts24_state(rts24):
    """AC operating point at the plain DC dispatch."""
    flow = ac_power_flow(rts24, dcopf(rts24).P_G)
    assert flow.converged
    return flow.state


@pytest.fixture(scope="session")
def rts24_plan(rts24):
    return complete_plan(rts24, 1e-4)


@pytest.fixture(scope="session")
def rts24_clean(rts24, rts24_plan, rts24_state):
    return MeasurementSet(rts24_plan, h_eval(rts24, rts24_plan, rts24_state))


@pytest.fixture
def two_bus():
    """Generator at bus 1, 0.2 + j0.05 load at bus 2, lossless line x = 0.5."""
    return make_network([(0, 0), (0.2, 0.05)], [(1, 2, 0.0, 0.5, 0.0, 1.0)], [(1, 0, 2, 10)])


@pytest.fixture
def triangle():
    """Cheap generator at 1, dear one at 2, unit load at 3; line 1-3 limited to 0.4."""
    return make_network(
        [(0, 0), (0, 0), (1.0, 0)],
        [(1, 2, 0.0, 1.0, 0.0, 10.0), (1, 3, 0.0, 1.0, 0.0, 0.4), (2, 3, 0.0, 1.0, 0.0, 10.0)],
        [(1, 0, 5, 10), (2, 0, 5, 20)],
    )


def random_state(rng: np.random.Generator, n: int, slack: int, spread: float = 0.1):
    from gridattack.measurement import SystemState

    theta = rng.uniform(-spread, spread, n)
    theta[slack] = 0.0
    return SystemState(rng.uniform(0.95, 1.05, n), theta)


def attack_triangle():
    """Generators at buses 1 (cost 10) and 2 (cost 30), loads 0.4 at bus 2 and
    0.8 at bus 3, unit reactances, line 2-3 limited to 0.25 and line 1-3 to 0.7."""
    return make_network(
        [(0, 0), (0.4, 0), (0.8, 0)],
        [(1, 2, 0, 1, 0, 10.0), (1, 3, 0, 1, 0, 0.7), (2, 3, 0, 1, 0, 0.25)],
        [(1, 0, 2, 10), (2, 0, 2, 30)],
    )


def grid_search_attack(net, target: int, L_S: float, step: float = 1e-3, gamma: float = 0.0):
    """Exhaustive search over the two load-bus shifts of a 3-bus network whose
    bus 1 carries no load. Bus 1's shift follows from its zero load change;
    each distinct cyber load is dispatched once with the relaxed DC OPF.

    Returns ``(best objective, target flow at the best point)`` where the
    objective is the physical target flow (signed in its pre-attack direction)
    minus ``gamma`` times the l1 norm over load buses."""
    from gridattack.dispatch import dcopf_relaxed, default_penalty, linear_costs
    from gridattack.network import build_dc_matrices

    assert net.n_bus == 3 and not net.load_mask[0]
    dc = build_dc_matrices(net)
    H1, H2 = dc.H1, dc.H2
    costs = linear_costs(net)
    penalty = default_penalty(net, costs)
    l = target - 1
    base = dcopf_relaxed(net, penalty=penalty, costs=costs).flows[l]
    sign = 1.0 if base >= 0 else -1.0

    g = np.round(np.arange(-1.0, 1.0 + step / 2, step), 9)
    c2, c3 = (a.ravel() for a in np.meshgrid(g, g, indexing="ij"))
    c1 = -(H1[0, 1] * c2 + H1[0, 2] * c3) / H1[0, 0]
    C = np.stack([c1, c2, c3], axis=1)
    shift = C @ H1.T
    ok = np.all(np.abs(shift) <= L_S * net.P_L + 1e-12, axis=1) & (np.abs(c1) <= 1.0)
    C, shift = C[ok], shift[ok]
    key = np.round(shift, 9)
    uniq, inverse = np.unique(key, axis=0, return_inverse=True)
    theta = np.array([dcopf_relaxed(net, net.P_L - s, penalty=penalty, costs=costs).theta for s in uniq])
    flow = sign * ((theta[inverse.ravel()] - C) @ H2[l])
    obj = flow - gamma * np.abs(C[:, 1:]).sum(axis=1)
    k = int(np.argmax(obj))
    return float(obj[k]), float(sign * flow[k])
