"""DC optimal power flow (plain and line-relaxed) and Newton-Raphson AC power flow.

Generator costs are linear. The published RTS data has quadratic curves; only
the first-order coefficient is kept, so that the same dispatch problem can be
embedded in a mixed-integer program through its KKT conditions. Generators
with identical costs make the LP degenerate, so :func:`linear_costs` adds a
small index-proportional tie-break (``1e-2 $/MWh`` per generator by default)
which makes the optimal dispatch unique without changing its economics.

Dual variables follow the Lagrangian
``f + lam+ (H2 th - R - Pmax) + lam- (-H2 th - R - Pmax) + a+ (PG - PGmax)
+ a- (PGmin - PG) - beta R + ups (Cg PG - H1 th - PL)``
so every inequality multiplier is nonnegative and ``ups`` is minus the
locational price.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .measurement import SystemState, bus_power_derivatives
from .milp import OPTIMAL, LinearProgram, solve_lp
from .network import Network, branch_admittances, build_dc_matrices, build_ybus

TIE_BREAK = 1e-2  # $/MWh per generator index
PENALTY_FACTOR = 100.0


def linear_costs(net: Network, tie_break: float = TIE_BREAK) -> np.ndarray:
    """Per-generator cost in $ per pu-hour, with the deterministic tie-break."""
    return net.gen_cost + tie_break * net.base_mva * np.arange(1, net.n_gen + 1)


def default_penalty(net: Network, costs: np.ndarray | None = None) -> float:
    """Line-relaxation penalty slope: 100 x the largest generator cost."""
    costs = linear_costs(net) if costs is None else costs
    return PENALTY_FACTOR * max(float(np.max(costs, initial=0.0)), 1.0)


def cost_scale(costs: np.ndarray) -> float:
    return max(float(np.max(np.abs(costs), initial=0.0)), 1e-12)


@dataclass(eq=False)
class DispatchResult:
    status: str
    P_G: np.ndarray | None = None
    theta: np.ndarray | None = None
    R: np.ndarray | None = None
    upsilon: np.ndarray | None = None
    lambda_plus: np.ndarray | None = None
    lambda_minus: np.ndarray | None = None
    alpha_plus: np.ndarray | None = None
    alpha_minus: np.ndarray | None = None
    beta: np.ndarray | None = None
    cost: float = float("nan")
    dual_cost: float = float("nan")
    flows: np.ndarray | None = None
    P_L: np.ndarray | None = None
    penalty: float = 0.0

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL

    def to_dict(self) -> dict:
        out = {}
        for key, value in asdict(self).items():
            out[key] = value.tolist() if isinstance(value, np.ndarray) else value
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _dcopf(net, P_L, relaxed, penalty, costs, backend) -> DispatchResult:
    nb, ng, nl = net.n_bus, net.n_gen, net.n_branch
    P_L = net.P_L if P_L is None else np.asarray(P_L, dtype=float)
    costs = linear_costs(net) if costs is None else np.asarray(costs, dtype=float)
    dc = build_dc_matrices(net)
    nr = nl if relaxed else 0
    if relaxed and penalty is None:
        penalty = default_penalty(net, costs)
    n = nb + ng + nr
    th, pg, rr = slice(0, nb), slice(nb, nb + ng), slice(nb + ng, n)

    c = np.zeros(n)
    c[pg] = costs
    if relaxed:
        c[rr] = penalty
    A = np.zeros((nb + 2 * nl, n))
    A[:nb, th] = -dc.H1
    A[:nb, pg] = net.gen_incidence
    A[nb:nb + nl, th] = dc.H2
    A[nb + nl:, th] = -dc.H2
    if relaxed:
        A[nb:nb + nl, rr] = -np.eye(nl)
        A[nb + nl:, rr] = -np.eye(nl)
    b = np.concatenate([P_L, net.rating, net.rating])
    senses = ["="] * nb + ["<"] * (2 * nl)
    lb = np.concatenate([np.full(nb, -np.inf), net.P_G_min, np.zeros(nr)])
    ub = np.concatenate([np.full(nb, np.inf), net.P_G_max, np.full(nr, np.inf)])
    lb[net.slack] = ub[net.slack] = 0.0
    lp = LinearProgram(c, A, senses, b, lb, ub)
    res = solve_lp(lp, backend=backend)
    if not res.optimal:
        return DispatchResult(res.status, P_L=P_L, penalty=penalty or 0.0)

    from .milp import dual_objective

    y = res.duals
    d = res.reduced_costs
    theta = res.x[th]
    R = res.x[rr] if relaxed else np.zeros(nl)
    return DispatchResult(
        OPTIMAL,
        P_G=res.x[pg],
        theta=theta,
        R=R,
        upsilon=-y[:nb],
        lambda_plus=np.maximum(-y[nb:nb + nl], 0.0),
        lambda_minus=np.maximum(-y[nb + nl:], 0.0),
        alpha_plus=np.maximum(-d[pg], 0.0),
        alpha_minus=np.maximum(d[pg], 0.0),
        beta=np.maximum(d[rr], 0.0) if relaxed else np.zeros(nl),
        cost=res.objective,
        dual_cost=dual_objective(lp, y, d),
        flows=dc.H2 @ theta,
        P_L=P_L,
        penalty=penalty or 0.0,
    )


def dcopf(net: Network, P_L=None, costs=None, backend: str = "native") -> DispatchResult:
    """Least-cost dispatch under hard line limits; an infeasible LP gives status ``infeasible``."""
    return _dcopf(net, P_L, relaxed=False, penalty=None, costs=costs, backend=backend)


def dcopf_relaxed(
    net: Network, P_L=None, penalty: float | None = None, costs=None, backend: str = "native"
) -> DispatchResult:
    """Dispatch with per-line limit relaxation ``R >= 0`` charged at ``penalty`` per pu.

    Always feasible when total generation limits bracket the total load.
    """
    return _dcopf(net, P_L, relaxed=True, penalty=penalty, costs=costs, backend=backend)


def lower_level_kkt(
    net: Network,
    P_L_cyber: np.ndarray,
    theta, P_G, R, upsilon, lambda_plus, lambda_minus, alpha_plus, alpha_minus, beta,
    costs: np.ndarray,
    penalty: float | None,
) -> dict[str, float]:
    """Max-abs KKT residuals of the dispatch LP, with duals expressed in units of
    the largest cost coefficient so tolerances are scale free.

    ``penalty=None`` means the plain (unrelaxed) problem: ``R`` and ``beta``
    must then be zero and the relaxation stationarity row is skipped.
    """
    dc = build_dc_matrices(net)
    s = cost_scale(costs)
    ups, lp_, lm = upsilon / s, lambda_plus / s, lambda_minus / s
    ap, am, bt = alpha_plus / s, alpha_minus / s, beta / s
    flows = dc.H2 @ theta
    keep = np.arange(net.n_bus) != net.slack

    stat_pg = costs / s + ap - am + net.gen_incidence.T @ ups
    stat_th = (dc.H2.T @ (lp_ - lm) - dc.H1 @ ups)[keep]
    parts = [np.abs(stat_pg), np.abs(stat_th)]
    if penalty is not None:
        parts.append(np.abs(penalty / s - lp_ - lm - bt))
    stationarity = max(float(np.max(p, initial=0.0)) for p in parts)

    up_slack = net.rating + R - flows
    lo_slack = net.rating + R + flows
    complementarity = max(
        float(np.max(np.abs(lp_ * up_slack), initial=0.0)),
        float(np.max(np.abs(lm * lo_slack), initial=0.0)),
        float(np.max(np.abs(ap * (net.P_G_max - P_G)), initial=0.0)),
        float(np.max(np.abs(am * (P_G - net.P_G_min)), initial=0.0)),
        float(np.max(np.abs(bt * R), initial=0.0)),
    )
    balance = net.gen_incidence @ P_G - dc.H1 @ theta - P_L_cyber
    primal = max(
        float(np.max(np.abs(balance), initial=0.0)),
        float(np.max(-up_slack, initial=0.0)),
        float(np.max(-lo_slack, initial=0.0)),
        float(np.max(net.P_G_min - P_G, initial=0.0)),
        float(np.max(P_G - net.P_G_max, initial=0.0)),
        float(np.max(-R, initial=0.0)),
        abs(float(theta[net.slack])),
    )
    if penalty is None:
        primal = max(primal, float(np.max(np.abs(R), initial=0.0)))
    dual = max(0.0, *(float(np.max(-v, initial=0.0)) for v in (lp_, lm, ap, am, bt)))
    return {
        "stationarity": stationarity,
        "complementarity": complementarity,
        "primal": primal,
        "dual": dual,
    }


def dispatch_kkt(net: Network, result: DispatchResult, costs=None, relaxed: bool = True) -> dict:
    costs = linear_costs(net) if costs is None else costs
    return lower_level_kkt(
        net, result.P_L, result.theta, result.P_G, result.R, result.upsilon,
        result.lambda_plus, result.lambda_minus, result.alpha_plus, result.alpha_minus,
        result.beta, costs, result.penalty if relaxed else None,
    )


# ---------------------------------------------------------------------------
# AC power flow
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class AcFlowResult:
    state: SystemState
    P_from: np.ndarray
    Q_from: np.ndarray
    P_to: np.ndarray
    Q_to: np.ndarray
    converged: bool
    iterations: int
    mismatch: float
    history: list[float]
    S_bus: np.ndarray

    @property
    def S_from(self) -> np.ndarray:
        return np.hypot(self.P_from, self.Q_from)

    @property
    def S_to(self) -> np.ndarray:
        return np.hypot(self.P_to, self.Q_to)

    @property
    def branch_S(self) -> np.ndarray:
        """Larger apparent flow of the two branch ends."""
        return np.maximum(self.S_from, self.S_to)

    def to_dict(self) -> dict:
        return {
            "V": self.state.V.tolist(),
            "theta": self.state.theta.tolist(),
            "P_from": self.P_from.tolist(),
            "Q_from": self.Q_from.tolist(),
            "P_to": self.P_to.tolist(),
            "Q_to": self.Q_to.tolist(),
            "S_from": self.S_from.tolist(),
            "S_to": self.S_to.tolist(),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "mismatch": float(self.mismatch),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def ac_power_flow(
    net: Network,
    P_G: np.ndarray,
    P_L: np.ndarray | None = None,
    Q_L: np.ndarray | None = None,
    tol: float = 1e-10,
    max_iter: int = 30,
) -> AcFlowResult:
    """Polar Newton-Raphson power flow.

    Buses hosting a generator are PV at their voltage setpoint, all others PQ;
    the slack bus holds its setpoint and zero angle and absorbs the losses.
    Reactive limits are not enforced.
    """
    P_L = net.P_L if P_L is None else np.asarray(P_L, dtype=float)
    Q_L = net.Q_L if Q_L is None else np.asarray(Q_L, dtype=float)
    Ybus = build_ybus(net).Y
    nb = net.n_bus
    P_spec = net.gen_incidence @ np.asarray(P_G, dtype=float) - P_L
    Q_spec = -Q_L
    gen_bus = np.zeros(nb, dtype=bool)
    gen_bus[net.gen_idx] = True
    vset = np.array([b.voltage_setpoint for b in net.buses])
    pv = np.flatnonzero(gen_bus & (np.arange(nb) != net.slack))
    pq = np.flatnonzero(~gen_bus & (np.arange(nb) != net.slack))
    pvpq = np.r_[pv, pq]

    Vm = np.where(gen_bus, vset, 1.0)
    Vm[net.slack] = vset[net.slack]
    Va = np.zeros(nb)

    def mismatch(Vm, Va):
        V = Vm * np.exp(1j * Va)
        S = V * np.conj(Ybus @ V)
        return V, S, np.r_[S.real[pvpq] - P_spec[pvpq], S.imag[pq] - Q_spec[pq]]

    V, S, F = mismatch(Vm, Va)
    history = [float(np.max(np.abs(F), initial=0.0))]
    it = 0
    while history[-1] > tol and it < max_iter:
        dVa, dVm = bus_power_derivatives(Ybus, V)
        J = np.block([
            [dVa.real[np.ix_(pvpq, pvpq)], dVm.real[np.ix_(pvpq, pq)]],
            [dVa.imag[np.ix_(pq, pvpq)], dVm.imag[np.ix_(pq, pq)]],
        ])
        try:
            dx = -np.linalg.solve(J, F)
        except np.linalg.LinAlgError:
            break
        Va[pvpq] += dx[: len(pvpq)]
        Vm[pq] += dx[len(pvpq):]
        V, S, F = mismatch(Vm, Va)
        history.append(float(np.max(np.abs(F), initial=0.0)))
        it += 1
        if not np.isfinite(history[-1]):
            break
    converged = bool(history[-1] <= tol)
    Yf, Yt = branch_admittances(net)
    Sf = V[net.from_idx] * np.conj(Yf @ V)
    St = V[net.to_idx] * np.conj(Yt @ V)
    return AcFlowResult(
        state=SystemState(np.abs(V), np.angle(V) - np.angle(V[net.slack])),
        P_from=Sf.real,
        Q_from=Sf.imag,
        P_to=St.real,
        Q_to=St.imag,
        converged=converged,
        iterations=it,
        mismatch=history[-1],
        history=history,
        S_bus=S,
    )
