"""Attack subgraphs and unobservable false-data-injection measurement synthesis.

Bus and branch arguments are 0-based indices; JSON output uses 1-based ids.

An attack vector holds angle shifts for every bus. Only the load-bus entries
are the attacker's free choices (its support and sparsity norms count load
buses only). Entries at non-load buses, when present, are the dependent shifts
that keep those buses' injections unchanged; the AC construction recomputes
them from the load-bus entries and ignores the supplied values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ConvergenceError
from .estimation import EstimationResult, ac_wls_se, dc_se, induced_network, local_rows, local_se
from .measurement import (
    FLOW_KINDS,
    P_INJ,
    Q_INJ,
    MeasurementModel,
    MeasurementPlan,
    MeasurementSet,
    SystemState,
    bus_power_derivatives,
    dc_measurement_matrix,
)
from .network import Network, build_dc_matrices, build_ybus

SUPPORT_TOL = 1e-6
NR_TOL = 1e-10
NR_MAX_ITER = 30


@dataclass(frozen=True, eq=False)
class AttackVector:
    c: np.ndarray
    load_mask: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "c", np.asarray(self.c, dtype=float).copy())
        object.__setattr__(self, "load_mask", np.asarray(self.load_mask, dtype=bool))
        if self.c.shape != self.load_mask.shape:
            raise ValueError("attack vector and load mask differ in length")

    @classmethod
    def zeros(cls, net: Network) -> "AttackVector":
        return cls(np.zeros(net.n_bus), net.load_mask)

    @classmethod
    def from_entries(cls, net: Network, entries: dict[int, float]) -> "AttackVector":
        """Build from ``{bus_index: angle}``; entries must sit on load buses."""
        c = np.zeros(net.n_bus)
        for k, value in entries.items():
            if not net.load_mask[k]:
                raise ValueError(f"bus index {k} is not a load bus")
            c[k] = value
        return cls(c, net.load_mask)

    @property
    def support(self) -> tuple[int, ...]:
        """Load buses with a nonzero shift."""
        return tuple(int(k) for k in np.flatnonzero(self.load_mask & (np.abs(self.c) > SUPPORT_TOL)))

    @property
    def load_part(self) -> np.ndarray:
        return np.where(self.load_mask, self.c, 0.0)

    @property
    def l0(self) -> int:
        return len(self.support)

    @property
    def l1(self) -> float:
        return float(np.sum(np.abs(self.c[self.load_mask])))

    def to_dict(self) -> dict:
        return {
            "c": self.c.tolist(),
            "support": [k + 1 for k in self.support],
            "l0": self.l0,
            "l1": self.l1,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


@dataclass(frozen=True, eq=False)
class SubGraph:
    """Buses and the branches between them, with the buses that touch the outside."""

    net: Network
    buses: tuple[int, ...]
    centers: tuple[int, ...] = ()

    @cached_property
    def bus_mask(self) -> np.ndarray:
        mask = np.zeros(self.net.n_bus, dtype=bool)
        mask[list(self.buses)] = True
        return mask

    @cached_property
    def branches(self) -> tuple[int, ...]:
        inside = self.bus_mask
        both = inside[self.net.from_idx] & inside[self.net.to_idx]
        return tuple(int(l) for l in np.flatnonzero(both))

    @cached_property
    def boundary(self) -> tuple[int, ...]:
        inside = self.bus_mask
        return tuple(k for k in self.buses if any(not inside[j] for j in self.net.neighbors[k]))

    @cached_property
    def interior(self) -> tuple[int, ...]:
        edge = set(self.boundary)
        return tuple(k for k in self.buses if k not in edge)

    @property
    def is_whole_network(self) -> bool:
        return len(self.buses) == self.net.n_bus

    def measurement_rows(self, plan: MeasurementPlan) -> np.ndarray:
        """I_S: flows on inside branches plus bus measurements at inside buses."""
        in_branch = np.zeros(self.net.n_branch, dtype=bool)
        in_branch[list(self.branches)] = True
        rows = [
            i
            for i, (kind, loc) in enumerate(zip(plan.kinds, plan.locations))
            if (in_branch[loc] if kind in FLOW_KINDS else self.bus_mask[loc])
        ]
        return np.asarray(rows, dtype=int)

    def components(self) -> list["SubGraph"]:
        """Connected pieces (over inside branches), ordered by lowest bus."""
        inside = self.bus_mask
        seen: set[int] = set()
        pieces = []
        for k in self.buses:
            if k in seen:
                continue
            stack, piece = [k], {k}
            while stack:
                b = stack.pop()
                for j in self.net.neighbors[b]:
                    if inside[j] and j not in piece:
                        piece.add(j)
                        stack.append(j)
            seen |= piece
            centers = tuple(b for b in self.centers if b in piece)
            pieces.append(SubGraph(self.net, tuple(sorted(piece)), centers))
        return pieces

    def local_rows(self, plan: MeasurementPlan) -> np.ndarray:
        """Rows of I_S that depend on inside states only."""
        return local_rows(self.net, self.buses, self.branches, plan)

    def to_dict(self) -> dict:
        return {
            "buses": [k + 1 for k in self.buses],
            "branches": [l + 1 for l in self.branches],
            "boundary": [k + 1 for k in self.boundary],
            "interior": [k + 1 for k in self.interior],
            "centers": [k + 1 for k in self.centers],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _expand(net: Network, k: int) -> set[int]:
    members = {k} | set(net.neighbors[k])
    while True:
        grow = set()
        for b in members:
            outside = net.neighbors[b] - members
            if outside and not net.load_mask[b]:
                grow |= outside
        if not grow:
            return members
        members |= grow


def single_target_subgraph(net: Network, k: int) -> SubGraph:
    """Closed neighbourhood of load bus ``k``, grown past every non-load bus on
    its edge until only load buses face the outside (or nothing is left)."""
    if not net.load_mask[k]:
        raise ValueError(f"bus index {k} is not a load bus")
    return SubGraph(net, tuple(sorted(_expand(net, k))), (int(k),))


def attack_subgraph(net: Network, c: AttackVector) -> SubGraph:
    support = c.support
    if not support:
        raise ValueError("attack vector has empty support")
    members: set[int] = set()
    for k in support:
        members |= _expand(net, k)
    return SubGraph(net, tuple(sorted(members)), support)


# ---------------------------------------------------------------------------
# DC attack
# ---------------------------------------------------------------------------


def dc_attack(
    net: Network, meas: MeasurementSet, c: AttackVector, subgraph: SubGraph | None = None
) -> MeasurementSet:
    """Shift active-power entries of I_S by ``H c``; everything else is kept."""
    if not c.support:
        return meas.with_values(meas.z.copy())
    subgraph = attack_subgraph(net, c) if subgraph is None else subgraph
    H = dc_measurement_matrix(net, meas.plan)
    rows = subgraph.measurement_rows(meas.plan)
    rows = rows[meas.plan.active_mask[rows]] if rows.size else rows
    z = meas.z.copy()
    z[rows] += H[rows] @ c.c
    return meas.with_values(z)


# ---------------------------------------------------------------------------
# AC attack
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class AcAttack:
    """Attacked measurements and the state change they are consistent with.

    ``c_tilde_theta`` / ``c_tilde_V`` are zero outside the subgraph; inside they
    are the attacked minus the locally estimated state, so for noiseless input
    ``meas`` equals ``h(x + c_tilde)`` on every row. A subgraph made of several
    disconnected pieces gets one local estimate per piece.
    """

    meas: MeasurementSet
    subgraph: SubGraph
    c_tilde_theta: np.ndarray
    c_tilde_V: np.ndarray
    local_estimates: list[EstimationResult]
    nr_iterations: int
    nr_mismatch: float


def _solve_non_load(Ybus: np.ndarray, Va: np.ndarray, Vm: np.ndarray, unknown: np.ndarray,
                    S_target: np.ndarray) -> tuple[np.ndarray, np.ndarray, int, float]:
    """Newton-Raphson on angles and magnitudes of ``unknown`` buses so their
    complex injections equal ``S_target``; all other buses are held."""
    Va, Vm = Va.copy(), Vm.copy()
    k = unknown.size

    def residual():
        V = Vm * np.exp(1j * Va)
        S = V * np.conj(Ybus @ V)
        F = np.r_[S.real[unknown] - S_target.real, S.imag[unknown] - S_target.imag]
        return V, F

    V, F = residual()
    mismatch = float(np.max(np.abs(F), initial=0.0))
    it = 0
    while mismatch > NR_TOL and it < NR_MAX_ITER:
        dVa, dVm = bus_power_derivatives(Ybus, V)
        J = np.block([
            [dVa.real[np.ix_(unknown, unknown)], dVm.real[np.ix_(unknown, unknown)]],
            [dVa.imag[np.ix_(unknown, unknown)], dVm.imag[np.ix_(unknown, unknown)]],
        ])
        dx = -np.linalg.solve(J, F)
        Va[unknown] += dx[:k]
        Vm[unknown] += dx[k:]
        V, F = residual()
        mismatch = float(np.max(np.abs(F), initial=0.0))
        it += 1
        if not np.isfinite(mismatch):
            break
    if not mismatch <= NR_TOL:
        raise ConvergenceError(
            "non-load bus states did not converge", stage="attack", mismatch=mismatch
        )
    return Va, Vm, it, mismatch


def synthesize_ac_attack(
    net: Network,
    meas: MeasurementSet,
    c: AttackVector,
    subgraph: SubGraph | None = None,
) -> AcAttack:
    """Build attacked measurements from the data inside the subgraph only.

    Per connected piece of the subgraph: local WLS (reference at its
    lowest-index load bus), add the load-bus shifts to the estimated angles,
    re-solve the non-load buses with their estimated injections held fixed,
    then overwrite that piece's share of I_S. Rows that see only inside states
    get ``h(x_attacked)``; injections at edge buses get the change in their
    inside branch flows added to the reading, since outside flows are unchanged.
    """
    subgraph = attack_subgraph(net, c) if subgraph is None else subgraph
    z = meas.z.copy()
    dtheta = np.zeros(net.n_bus)
    dV = np.zeros(net.n_bus)
    estimates = []
    iters, mismatch = 0, 0.0
    for piece in subgraph.components():
        est, x_att, it, mis = _attack_piece(net, meas, c, piece, z)
        buses = list(piece.buses)
        dtheta[buses] = x_att.theta - est.state.theta
        dV[buses] = x_att.V - est.state.V
        estimates.append(est)
        iters, mismatch = max(iters, it), max(mismatch, mis)
    return AcAttack(meas.with_values(z), subgraph, dtheta, dV, estimates, iters, mismatch)


def _attack_piece(net: Network, meas: MeasurementSet, c: AttackVector, piece: SubGraph,
                  z: np.ndarray):
    """Attack one connected piece, writing into ``z`` in place."""
    buses = np.asarray(piece.buses, dtype=int)
    branches = np.asarray(piece.branches, dtype=int)
    est = local_se(net, piece, meas)
    if not est.converged:
        raise ConvergenceError("local state estimation did not converge", stage="local_se")
    x_hat = est.state
    pos = {int(b): i for i, b in enumerate(buses)}
    sub, _ = induced_network(net, buses, branches, est.slack)
    Ybus = build_ybus(sub).Y

    theta = x_hat.theta.copy()
    load_local = net.load_mask[buses]
    theta[load_local] += c.c[buses][load_local]
    unknown = np.flatnonzero(~load_local)
    V_hat = x_hat.complex
    S_hat = V_hat * np.conj(Ybus @ V_hat)
    Va, Vm, iters, mismatch = theta, x_hat.V.copy(), 0, 0.0
    if unknown.size:
        Va, Vm, iters, mismatch = _solve_non_load(Ybus, theta, Vm, unknown, S_hat[unknown])
    x_att = SystemState(Vm, Va)

    rows_local = piece.local_rows(meas.plan)
    local_plan = meas.plan.subset(rows_local)
    local_locs = np.array(
        [np.searchsorted(branches, loc) if kind in FLOW_KINDS else pos[int(loc)]
         for kind, loc in zip(local_plan.kinds, local_plan.locations)],
        dtype=int,
    )
    model = MeasurementModel(sub, MeasurementPlan(local_plan.kinds, local_locs, local_plan.sigma2))
    z[rows_local] = model.h(x_att)

    V_att = x_att.complex
    dS = V_att * np.conj(Ybus @ V_att) - S_hat
    for i in np.setdiff1d(piece.measurement_rows(meas.plan), rows_local):
        kind, loc = meas.plan.kinds[i], int(meas.plan.locations[i])
        if kind == P_INJ:
            z[i] += dS[pos[loc]].real
        elif kind == Q_INJ:
            z[i] += dS[pos[loc]].imag
    return est, x_att, iters, mismatch


def ac_attack(
    net: Network, meas: MeasurementSet, c: AttackVector, subgraph: SubGraph | None = None
) -> MeasurementSet:
    """Attacked measurement set; see :func:`synthesize_ac_attack`."""
    if not c.support:
        return meas.with_values(meas.z.copy())
    return synthesize_ac_attack(net, meas, c, subgraph).meas


# ---------------------------------------------------------------------------
# estimated load change
# ---------------------------------------------------------------------------


def estimated_load_shift(
    net: Network, meas_before: MeasurementSet, meas_after: MeasurementSet, model: str = "ac"
) -> np.ndarray:
    """Change of the estimated active injection at every bus (after minus before).

    The estimated load moves by the negative of this vector. ``model="dc"``
    uses the DC estimator on the active-power rows.
    """
    if model == "dc":
        H1 = build_dc_matrices(net).H1
        return H1 @ (dc_se(net, meas_after).theta - dc_se(net, meas_before).theta)
    if model != "ac":
        raise ValueError("model must be 'ac' or 'dc'")
    Ybus = build_ybus(net).Y

    def injections(meas):
        V = ac_wls_se(net, meas).state.complex
        return (V * np.conj(Ybus @ V)).real

    return injections(meas_after) - injections(meas_before)
