"""Weighted-least-squares state estimation and chi-square bad-data detection."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.stats import chi2

from .errors import ObservabilityError
from .measurement import (
    FLOW_KINDS,
    P_INJ,
    Q_INJ,
    MeasurementModel,
    MeasurementPlan,
    MeasurementSet,
    SystemState,
    dc_measurement_matrix,
)
from .network import Bus, Network

MAX_ITER = 20
STEP_TOL = 1e-8
RANK_TOL = 1e-9
MAX_HALVINGS = 30


@dataclass(eq=False)
class EstimationResult:
    """WLS estimate. For a local estimate ``buses`` lists the 0-based network
    buses the state vectors refer to; otherwise it is ``None``."""

    state: SystemState
    J: float
    iterations: int
    converged: bool
    grad_norm: float
    slack: int
    buses: np.ndarray | None = None
    weight_scale: float = 1.0

    @property
    def scaled_grad_norm(self) -> float:
        """Gradient norm divided by the largest weight, i.e. in variance units.

        The raw gradient carries the weights (1e4 at sigma2 = 1e-4) and its
        round-off floor sits well above 1e-8; this scaled value does not.
        """
        return self.grad_norm / self.weight_scale

    @property
    def x_hat(self) -> SystemState:
        return self.state

    def to_dict(self) -> dict:
        return {
            "V": self.state.V.tolist(),
            "theta": self.state.theta.tolist(),
            "J": float(self.J),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "grad_norm": float(self.grad_norm),
            "scaled_grad_norm": float(self.scaled_grad_norm),
            "slack": int(self.slack),
            "buses": None if self.buses is None else self.buses.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _weights(plan: MeasurementPlan) -> np.ndarray:
    sigma2 = np.asarray(plan.sigma2, dtype=float)
    if np.any(sigma2 <= 0):
        raise ValueError("state estimation needs strictly positive variances")
    return 1.0 / sigma2


def _gauss_newton(
    model: MeasurementModel,
    z: np.ndarray,
    slack: int,
    x0: SystemState | None,
    max_iter: int,
    tol: float,
) -> EstimationResult:
    n = model.net.n_bus
    w = _weights(model.plan)
    if len(z) == 0:
        raise ObservabilityError("no measurements")
    keep = np.r_[np.delete(np.arange(n), slack), n + np.arange(n)]
    x0 = SystemState.flat(n) if x0 is None else x0
    theta = np.asarray(x0.theta, dtype=float) - x0.theta[slack]
    V = np.asarray(x0.V, dtype=float).copy()
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        state = SystemState(V, theta)
        r = z - model.h(state)
        H = model.jacobian(state)[:, keep]
        HW = H.T * w
        try:
            factor = cho_factor(HW @ H)
        except LinAlgError as exc:
            raise ObservabilityError("gain matrix is not positive definite") from exc
        dx = cho_solve(factor, HW @ r)
        if not np.all(np.isfinite(dx)):
            raise ObservabilityError("gain matrix is numerically singular")
        step = np.zeros(2 * n)
        step[keep] = dx
        # halve the step while it increases the objective (never near the optimum)
        J_now = float(np.sum(w * r * r))
        scale = 1.0
        for _ in range(MAX_HALVINGS):
            trial = SystemState(V + scale * step[n:], theta + scale * step[:n])
            if np.all(trial.V > 0) and np.sum(w * (z - model.h(trial)) ** 2) <= J_now * (1 + 1e-12):
                break
            scale *= 0.5
        else:
            scale = 1.0
        theta = theta + scale * step[:n]
        V = V + scale * step[n:]
        if scale * np.max(np.abs(dx)) < tol:
            converged = True
            break
    # h is 2*pi periodic in every angle; report the representative nearest the reference
    theta = np.angle(np.exp(1j * theta))
    state = SystemState(V, theta)
    r = z - model.h(state)
    H = model.jacobian(state)[:, keep]
    return EstimationResult(
        state=state,
        J=float(np.sum(w * r * r)),
        iterations=it,
        converged=converged,
        grad_norm=float(np.linalg.norm(H.T @ (w * r))),
        slack=slack,
        weight_scale=float(np.max(w)),
    )


def ac_wls_se(
    net: Network,
    meas: MeasurementSet,
    x0: SystemState | None = None,
    max_iter: int = MAX_ITER,
    tol: float = STEP_TOL,
    slack: int | None = None,
) -> EstimationResult:
    """Gauss-Newton WLS over all magnitudes and the non-reference angles.

    Stops when the largest state update is below ``tol``; a run that hits
    ``max_iter`` comes back with ``converged=False``. ``slack`` is a 0-based bus
    index and defaults to the network slack.
    """
    model = MeasurementModel(net, meas.plan)
    slack = net.slack if slack is None else int(slack)
    return _gauss_newton(model, np.asarray(meas.z, dtype=float), slack, x0, max_iter, tol)


@dataclass(eq=False)
class DcEstimate:
    theta: np.ndarray
    J: float


def dc_se(net: Network, meas: MeasurementSet) -> DcEstimate:
    """Linear WLS on the active-power entries (others are ignored), slack angle 0."""
    active = meas.plan.active_mask
    sub = meas.restrict(active)
    H = dc_measurement_matrix(net, sub.plan)
    w = _weights(sub.plan)
    keep = np.delete(np.arange(net.n_bus), net.slack)
    Hk = H[:, keep]
    G = (Hk.T * w) @ Hk
    try:
        factor = cho_factor(G)
    except LinAlgError as exc:
        raise ObservabilityError("active-power plan is not observable") from exc
    theta = np.zeros(net.n_bus)
    theta[keep] = cho_solve(factor, (Hk.T * w) @ sub.z)
    r = sub.z - H @ theta
    return DcEstimate(theta, float(np.sum(w * r * r)))


@dataclass(frozen=True)
class DetectorConfig:
    alpha: float = 0.01
    dof: int = 1

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie strictly between 0 and 1")
        if self.dof < 1:
            raise ValueError("detector needs at least one degree of freedom")

    @classmethod
    def for_plan(cls, net: Network, plan: MeasurementPlan, alpha: float = 0.01) -> "DetectorConfig":
        """Degrees of freedom ``m - (2 n_b - 1)``."""
        return cls(alpha=alpha, dof=len(plan) - (2 * net.n_bus - 1))

    @property
    def threshold(self) -> float:
        return float(chi2.ppf(1.0 - self.alpha, self.dof))


def chi2_test(J: float, cfg: DetectorConfig) -> bool:
    """True when the objective passes (no bad data flagged)."""
    return bool(J <= cfg.threshold)


def observability_check(net: Network, plan: MeasurementPlan) -> bool:
    """Full column rank of the flat-start Jacobian over the non-slack states."""
    if len(plan) == 0:
        return False
    n = net.n_bus
    H = MeasurementModel(net, plan).jacobian(SystemState.flat(n))
    H = np.delete(H, net.slack, axis=1)
    if H.shape[0] < H.shape[1]:
        return False
    s = np.linalg.svd(H, compute_uv=False)
    return bool(s[-1] > RANK_TOL * max(1.0, s[0]))


# ---------------------------------------------------------------------------
# local estimation on a subgraph
# ---------------------------------------------------------------------------


def local_rows(net: Network, buses, branches, plan: MeasurementPlan) -> np.ndarray:
    """Indices of measurements that depend only on states of ``buses``.

    These are flows on ``branches`` (all inside the bus set), magnitudes at
    those buses, and injections at buses whose whole neighbourhood lies inside.
    """
    inside = np.zeros(net.n_bus, dtype=bool)
    inside[np.asarray(list(buses), dtype=int)] = True
    in_branch = np.zeros(net.n_branch, dtype=bool)
    in_branch[np.asarray(list(branches), dtype=int)] = True
    interior = np.array(
        [inside[k] and all(inside[j] for j in net.neighbors[k]) for k in range(net.n_bus)],
        dtype=bool,
    )
    rows = []
    for i, (kind, loc) in enumerate(zip(plan.kinds, plan.locations)):
        if kind in FLOW_KINDS:
            ok = in_branch[loc]
        elif kind in (P_INJ, Q_INJ):
            ok = interior[loc]
        else:
            ok = inside[loc]
        if ok:
            rows.append(i)
    return np.asarray(rows, dtype=int)


def induced_network(net: Network, buses: np.ndarray, branches: np.ndarray, slack: int):
    """Induced sub-network renumbered 1..len(buses), without generators."""
    pos = {int(b): i for i, b in enumerate(buses)}
    sub_buses = tuple(
        Bus(i + 1, net.buses[b].kind, net.buses[b].P_L, net.buses[b].Q_L,
            net.buses[b].voltage_setpoint, net.buses[b].gs, net.buses[b].bs)
        for i, b in enumerate(buses)
    )
    sub_branches = []
    for l in branches:
        br = net.branches[l]
        sub_branches.append(
            type(br)(pos[br.from_bus - 1] + 1, pos[br.to_bus - 1] + 1, br.r, br.x, br.b, br.rating)
        )
    sub = Network(sub_buses, tuple(sub_branches), (), net.base_mva, pos[slack] + 1)
    return sub, pos


def _dc_start(net: Network, plan: MeasurementPlan, z: np.ndarray, slack: int) -> SystemState:
    """Unit magnitudes and the least-squares DC angles from the active rows.

    Local regions often lack the redundancy that keeps flat-start iterations
    well behaved, so the local estimator starts here instead.
    """
    active = plan.active_mask
    H = np.delete(dc_measurement_matrix(net, plan.subset(np.flatnonzero(active))), slack, axis=1)
    theta = np.zeros(net.n_bus)
    if H.shape[0] and H.shape[1]:
        w = np.sqrt(1.0 / plan.sigma2[active])
        sol, *_ = np.linalg.lstsq(H * w[:, None], z[active] * w, rcond=None)
        theta[np.arange(net.n_bus) != slack] = sol
    return SystemState(np.ones(net.n_bus), theta)


def local_se(
    net: Network,
    subgraph,
    meas: MeasurementSet,
    slack: int | None = None,
    x0: SystemState | None = None,
    max_iter: int = MAX_ITER,
    tol: float = STEP_TOL,
) -> EstimationResult:
    """WLS estimate of the states inside ``subgraph`` from the measurements that
    see only those states.

    ``subgraph`` needs ``buses`` and ``branches`` (0-based). The reference angle
    sits at ``slack`` (0-based), by default the lowest-index load bus inside.
    The returned state vectors are ordered like ``sorted(subgraph.buses)``.
    Without ``x0`` the iteration starts from a DC angle estimate.
    """
    buses = np.array(sorted(int(b) for b in subgraph.buses), dtype=int)
    branches = np.array(sorted(int(l) for l in subgraph.branches), dtype=int)
    if slack is None:
        loads = [b for b in buses if net.load_mask[b]]
        slack = int(loads[0]) if loads else int(buses[0])
    if slack not in set(buses.tolist()):
        raise ValueError("local reference bus must lie inside the subgraph")
    rows = local_rows(net, buses, branches, meas.plan)
    sub, pos = induced_network(net, buses, branches, slack)
    plan = meas.plan.subset(rows)
    locations = np.array(
        [
            np.searchsorted(branches, loc) if kind in FLOW_KINDS else pos[int(loc)]
            for kind, loc in zip(plan.kinds, plan.locations)
        ],
        dtype=int,
    )
    local_plan = MeasurementPlan(plan.kinds, locations, plan.sigma2)
    if not observability_check(sub, local_plan):
        raise ObservabilityError("subgraph is not observable from its own measurements")
    model = MeasurementModel(sub, local_plan)
    z = meas.z[rows]
    if x0 is None:
        x0 = _dc_start(sub, local_plan, z, pos[slack])
    result = _gauss_newton(model, z, pos[slack], x0, max_iter, tol)
    result.buses = buses
    result.slack = slack
    return result


__all__ = [
    "EstimationResult",
    "DcEstimate",
    "DetectorConfig",
    "ac_wls_se",
    "dc_se",
    "chi2_test",
    "observability_check",
    "local_rows",
    "local_se",
]
