"""Measurement plans, the AC measurement function and noisy measurement sets.

Flow measurements use the branch pi-model with from-end flow positive when power
leaves the from bus. Injection measurements are net injections (generation minus
load) at a bus.

Noise is drawn from ``numpy.random.default_rng(seed)`` (PCG64) with one
``standard_normal(m)`` call scaled by ``sqrt(sigma2)``; fixtures store the
resulting values, not the stream.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .network import Network, branch_admittances, build_dc_matrices, build_ybus

P_FLOW_FROM = "P_flow_from"
P_FLOW_TO = "P_flow_to"
Q_FLOW_FROM = "Q_flow_from"
Q_FLOW_TO = "Q_flow_to"
P_INJ = "P_inj"
Q_INJ = "Q_inj"
V_MAG = "V_mag"

FLOW_KINDS = (P_FLOW_FROM, P_FLOW_TO, Q_FLOW_FROM, Q_FLOW_TO)
BUS_KINDS = (P_INJ, Q_INJ, V_MAG)
ACTIVE_KINDS = (P_FLOW_FROM, P_FLOW_TO, P_INJ)
KINDS = FLOW_KINDS + BUS_KINDS


@dataclass(frozen=True, eq=False)
class SystemState:
    V: np.ndarray
    theta: np.ndarray

    @classmethod
    def flat(cls, n: int) -> "SystemState":
        return cls(np.ones(n), np.zeros(n))

    @property
    def complex(self) -> np.ndarray:
        return self.V * np.exp(1j * self.theta)

    def shifted(self, dtheta) -> "SystemState":
        return SystemState(self.V.copy(), self.theta + dtheta)


@dataclass(frozen=True, eq=False)
class MeasurementPlan:
    """Ordered measurement entries; ``locations`` are 0-based branch or bus indices."""

    kinds: tuple[str, ...]
    locations: np.ndarray
    sigma2: np.ndarray

    def __post_init__(self):
        if len(self.kinds) != len(self.locations) or len(self.kinds) != len(self.sigma2):
            raise ValueError("plan arrays differ in length")
        bad = set(self.kinds) - set(KINDS)
        if bad:
            raise ValueError(f"unknown measurement kinds {sorted(bad)}")
        if np.any(np.asarray(self.sigma2) < 0):
            raise ValueError("variances must be non-negative")

    def __len__(self) -> int:
        return len(self.kinds)

    @cached_property
    def kind_array(self) -> np.ndarray:
        return np.array(self.kinds, dtype=object)

    def mask(self, *kinds: str) -> np.ndarray:
        return np.isin(self.kind_array, kinds) if len(self) else np.zeros(0, bool)

    @property
    def active_mask(self) -> np.ndarray:
        return self.mask(*ACTIVE_KINDS)

    def subset(self, idx) -> "MeasurementPlan":
        idx = np.asarray(idx, dtype=int)
        return MeasurementPlan(
            tuple(self.kinds[i] for i in idx), self.locations[idx], self.sigma2[idx]
        )

    def validate(self, net: Network) -> None:
        for kind, loc in zip(self.kinds, self.locations):
            limit = net.n_branch if kind in FLOW_KINDS else net.n_bus
            if not 0 <= loc < limit:
                raise ValueError(f"{kind} location {loc} out of range")


@dataclass(frozen=True, eq=False)
class MeasurementSet:
    plan: MeasurementPlan
    z: np.ndarray = field(repr=False)

    def __post_init__(self):
        if len(self.z) != len(self.plan):
            raise ValueError("measurement vector length does not match plan")

    def with_values(self, z: np.ndarray) -> "MeasurementSet":
        return MeasurementSet(self.plan, np.asarray(z, dtype=float))

    def restrict(self, mask_or_idx) -> "MeasurementSet":
        idx = np.asarray(mask_or_idx)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        return MeasurementSet(self.plan.subset(idx), self.z[idx])


def complete_plan(net: Network, sigma2: float = 1e-4) -> MeasurementPlan:
    """P and Q flows at both ends of every branch plus P and Q injections at load buses."""
    br = np.arange(net.n_branch)
    loads = np.flatnonzero(net.load_mask)
    kinds: list[str] = []
    locs: list[np.ndarray] = []
    for kind in FLOW_KINDS:
        kinds += [kind] * net.n_branch
        locs.append(br)
    for kind in (P_INJ, Q_INJ):
        kinds += [kind] * len(loads)
        locs.append(loads)
    locations = np.concatenate(locs).astype(int)
    return MeasurementPlan(tuple(kinds), locations, np.full(len(kinds), float(sigma2)))


# ---------------------------------------------------------------------------
# measurement function and Jacobian
# ---------------------------------------------------------------------------


def bus_power_derivatives(Ybus: np.ndarray, V: np.ndarray):
    """Derivatives of complex bus injections ``V * conj(Ybus V)`` with respect to
    voltage angles and magnitudes (dense ``n x n`` each)."""
    Ibus = Ybus @ V
    Vnorm = V / np.abs(V)
    dS_dVm = np.diag(V) @ np.conj(Ybus * Vnorm[None, :]) + np.diag(np.conj(Ibus) * Vnorm)
    dS_dVa = 1j * np.diag(V) @ np.conj(np.diag(Ibus) - Ybus * V[None, :])
    return dS_dVa, dS_dVm


class MeasurementModel:
    """Evaluates ``h(x)`` and its Jacobian for one network and plan.

    Jacobian columns are ordered ``[dtheta_0..dtheta_{n-1}, dV_0..dV_{n-1}]``.
    """

    def __init__(self, net: Network, plan: MeasurementPlan):
        plan.validate(net)
        self.net = net
        self.plan = plan
        self.Ybus = build_ybus(net).Y
        self.Yf, self.Yt = branch_admittances(net)
        self.f = np.asarray(net.from_idx)
        self.t = np.asarray(net.to_idx)
        n_br, n_b = net.n_branch, net.n_bus
        self.Cf = np.zeros((n_br, n_b))
        self.Ct = np.zeros((n_br, n_b))
        self.Cf[np.arange(n_br), self.f] = 1.0
        self.Ct[np.arange(n_br), self.t] = 1.0
        self._rows = {k: np.flatnonzero(plan.mask(k)) for k in KINDS}
        self._locs = {k: plan.locations[self._rows[k]] for k in KINDS}

    def powers(self, x: SystemState):
        V = x.complex
        Ibus = self.Ybus @ V
        Sbus = V * np.conj(Ibus)
        Sf = V[self.f] * np.conj(self.Yf @ V)
        St = V[self.t] * np.conj(self.Yt @ V)
        return Sbus, Sf, St

    def h(self, x: SystemState) -> np.ndarray:
        Sbus, Sf, St = self.powers(x)
        values = {
            P_FLOW_FROM: Sf.real, P_FLOW_TO: St.real,
            Q_FLOW_FROM: Sf.imag, Q_FLOW_TO: St.imag,
            P_INJ: Sbus.real, Q_INJ: Sbus.imag, V_MAG: x.V,
        }
        out = np.empty(len(self.plan))
        for kind, rows in self._rows.items():
            if rows.size:
                out[rows] = values[kind][self._locs[kind]]
        return out

    def jacobian(self, x: SystemState) -> np.ndarray:
        n = self.net.n_bus
        V = x.complex
        Vnorm = V / np.abs(V)
        dS_dVa, dS_dVm = bus_power_derivatives(self.Ybus, V)

        If = self.Yf @ V
        It = self.Yt @ V
        Vf, Vt = V[self.f], V[self.t]
        dSf_dVa = 1j * (np.conj(If)[:, None] * self.Cf * V[None, :]
                        - Vf[:, None] * np.conj(self.Yf * V[None, :]))
        dSf_dVm = (Vf[:, None] * np.conj(self.Yf * Vnorm[None, :])
                   + np.conj(If)[:, None] * self.Cf * Vnorm[None, :])
        dSt_dVa = 1j * (np.conj(It)[:, None] * self.Ct * V[None, :]
                        - Vt[:, None] * np.conj(self.Yt * V[None, :]))
        dSt_dVm = (Vt[:, None] * np.conj(self.Yt * Vnorm[None, :])
                   + np.conj(It)[:, None] * self.Ct * Vnorm[None, :])

        blocks = {
            P_FLOW_FROM: (dSf_dVa.real, dSf_dVm.real),
            P_FLOW_TO: (dSt_dVa.real, dSt_dVm.real),
            Q_FLOW_FROM: (dSf_dVa.imag, dSf_dVm.imag),
            Q_FLOW_TO: (dSt_dVa.imag, dSt_dVm.imag),
            P_INJ: (dS_dVa.real, dS_dVm.real),
            Q_INJ: (dS_dVa.imag, dS_dVm.imag),
            V_MAG: (np.zeros((n, n)), np.eye(n)),
        }
        J = np.zeros((len(self.plan), 2 * n))
        for kind, rows in self._rows.items():
            if rows.size:
                dA, dM = blocks[kind]
                locs = self._locs[kind]
                J[rows, :n] = dA[locs]
                J[rows, n:] = dM[locs]
        return J


def h_eval(net: Network, plan: MeasurementPlan, x: SystemState) -> np.ndarray:
    return MeasurementModel(net, plan).h(x)


def dc_measurement_matrix(net: Network, plan: MeasurementPlan) -> np.ndarray:
    """Linearized Jacobian rows (w.r.t. angles) for active-power kinds; other rows are zero."""
    dc = build_dc_matrices(net)
    H = np.zeros((len(plan), net.n_bus))
    for i, (kind, loc) in enumerate(zip(plan.kinds, plan.locations)):
        if kind == P_FLOW_FROM:
            H[i] = dc.H2[loc]
        elif kind == P_FLOW_TO:
            H[i] = -dc.H2[loc]
        elif kind == P_INJ:
            H[i] = dc.H1[loc]
    return H


def generate(
    net: Network, plan: MeasurementPlan, x: SystemState, seed: int | None = 0
) -> MeasurementSet:
    """``z = h(x) + e`` with ``e ~ N(0, diag(sigma2))`` drawn deterministically from ``seed``."""
    z = h_eval(net, plan, x)
    rng = np.random.default_rng(seed)
    e = rng.standard_normal(len(plan)) * np.sqrt(plan.sigma2)
    return MeasurementSet(plan, z + e)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

CSV_COLUMNS = ("index", "kind", "location", "value", "sigma2")


def to_csv(meas: MeasurementSet) -> str:
    """One row per entry; ``location`` is the 1-based branch or bus id."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for i, (kind, loc, value, s2) in enumerate(
        zip(meas.plan.kinds, meas.plan.locations, meas.z, meas.plan.sigma2)
    ):
        w.writerow([i, kind, int(loc) + 1, repr(float(value)), repr(float(s2))])
    return buf.getvalue()


def from_csv(text: str) -> MeasurementSet:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
        raise ValueError(f"expected columns {CSV_COLUMNS}, got {reader.fieldnames}")
    kinds, locs, values, s2 = [], [], [], []
    for expected, row in enumerate(reader):
        if int(row["index"]) != expected:
            raise ValueError(f"row {expected} has index {row['index']}")
        kinds.append(row["kind"])
        locs.append(int(row["location"]) - 1)
        values.append(float(row["value"]))
        s2.append(float(row["sigma2"]))
    plan = MeasurementPlan(tuple(kinds), np.array(locs, dtype=int), np.array(s2))
    return MeasurementSet(plan, np.array(values))
