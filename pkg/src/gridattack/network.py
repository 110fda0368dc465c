"""Transmission network model, case-file I/O and linearized sensitivity matrices.

Case file layout (UTF-8 text, ``#`` starts a comment, blank lines ignored)::

    BASE_MVA 100
    BUS
    # id type Pd[MW] Qd[MVAr] Gs[MW] Bs[MVAr] Vset[pu]
    BRANCH
    # from to r[pu] x[pu] b[pu] rate[MVA]
    GEN
    # bus Pmin[MW] Pmax[MW] Qmin[MVAr] Qmax[MVAr] cost[$/MWh]

Bus ``type`` follows the usual convention (1 = PQ, 2 = PV, 3 = slack); only
the slack marker is used, generator buses are inferred from the GEN section.
Bus ids must be ``1..n_b`` in order. Everything is converted to per unit on
``BASE_MVA`` when parsed; generator cost becomes $ per per-unit-hour.
"""

from __future__ import annotations

import dataclasses
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import CaseFormatError, NetworkValidationError

LOAD = "load"
NON_LOAD = "non-load"


@dataclass(frozen=True)
class Bus:
    id: int
    kind: str
    P_L: float
    Q_L: float
    voltage_setpoint: float = 1.0
    gs: float = 0.0
    bs: float = 0.0


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b: float
    rating: float


@dataclass(frozen=True)
class Generator:
    bus: int
    P_min: float
    P_max: float
    Q_min: float
    Q_max: float
    cost: float


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Network:
    """Immutable per-unit network. Array views are cached and read-only."""

    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    base_mva: float = 100.0
    slack_bus: int = 1
    name: str = field(default="", compare=False)

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_branch(self) -> int:
        return len(self.branches)

    @property
    def n_gen(self) -> int:
        return len(self.generators)

    @property
    def slack(self) -> int:
        """0-based slack index."""
        return self.slack_bus - 1

    @cached_property
    def P_L(self) -> np.ndarray:
        return _frozen(np.array([b.P_L for b in self.buses], dtype=float))

    @cached_property
    def Q_L(self) -> np.ndarray:
        return _frozen(np.array([b.Q_L for b in self.buses], dtype=float))

    @cached_property
    def load_mask(self) -> np.ndarray:
        return _frozen(np.array([b.kind == LOAD for b in self.buses]))

    @cached_property
    def from_idx(self) -> np.ndarray:
        return _frozen(np.array([br.from_bus - 1 for br in self.branches], dtype=int))

    @cached_property
    def to_idx(self) -> np.ndarray:
        return _frozen(np.array([br.to_bus - 1 for br in self.branches], dtype=int))

    @cached_property
    def x(self) -> np.ndarray:
        return _frozen(np.array([br.x for br in self.branches], dtype=float))

    @cached_property
    def rating(self) -> np.ndarray:
        return _frozen(np.array([br.rating for br in self.branches], dtype=float))

    @cached_property
    def gen_idx(self) -> np.ndarray:
        return _frozen(np.array([g.bus - 1 for g in self.generators], dtype=int))

    @cached_property
    def P_G_min(self) -> np.ndarray:
        return _frozen(np.array([g.P_min for g in self.generators], dtype=float))

    @cached_property
    def P_G_max(self) -> np.ndarray:
        return _frozen(np.array([g.P_max for g in self.generators], dtype=float))

    @cached_property
    def gen_cost(self) -> np.ndarray:
        return _frozen(np.array([g.cost for g in self.generators], dtype=float))

    @cached_property
    def gen_incidence(self) -> np.ndarray:
        """``n_b x n_g`` matrix mapping generator output to bus injection."""
        Cg = np.zeros((self.n_bus, self.n_gen))
        Cg[self.gen_idx, np.arange(self.n_gen)] = 1.0
        return _frozen(Cg)

    @cached_property
    def incidence(self) -> np.ndarray:
        """Branch-bus incidence ``A`` with +1 at the from end, -1 at the to end."""
        A = np.zeros((self.n_branch, self.n_bus))
        rows = np.arange(self.n_branch)
        A[rows, self.from_idx] = 1.0
        A[rows, self.to_idx] = -1.0
        return _frozen(A)

    @cached_property
    def generator_buses(self) -> frozenset[int]:
        return frozenset(g.bus for g in self.generators)

    @cached_property
    def neighbors(self) -> tuple[frozenset[int], ...]:
        """0-based adjacency lists."""
        adj: list[set[int]] = [set() for _ in range(self.n_bus)]
        for f, t in zip(self.from_idx, self.to_idx):
            adj[f].add(int(t))
            adj[t].add(int(f))
        return tuple(frozenset(a) for a in adj)

    def replace(self, **changes) -> "Network":
        return dataclasses.replace(self, **changes)


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

_SECTIONS = {"BUS": 7, "BRANCH": 6, "GEN": 6}


def parse_case(text: str, name: str = "") -> Network:
    """Parse case-file text into a validated per-unit :class:`Network`."""
    base_mva = 100.0
    rows: dict[str, list[tuple[int, list[float]]]] = {k: [] for k in _SECTIONS}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        head = tokens[0].upper()
        if head == "BASE_MVA":
            if len(tokens) != 2:
                raise CaseFormatError("BASE_MVA takes one value", lineno)
            base_mva = _number(tokens[1], lineno)
            if base_mva <= 0:
                raise CaseFormatError("BASE_MVA must be positive", lineno)
            continue
        if head in _SECTIONS and len(tokens) == 1:
            section = head
            continue
        if section is None:
            raise CaseFormatError(f"data outside of a section: {line!r}", lineno)
        if len(tokens) != _SECTIONS[section]:
            raise CaseFormatError(
                f"{section} row needs {_SECTIONS[section]} columns, got {len(tokens)}", lineno
            )
        rows[section].append((lineno, [_number(tok, lineno) for tok in tokens]))

    if not rows["BUS"]:
        raise CaseFormatError("no BUS section")

    buses = []
    slack = []
    for i, (lineno, (bid, btype, pd, qd, gs, bs, vset)) in enumerate(rows["BUS"], start=1):
        if int(bid) != i or bid != int(bid):
            raise CaseFormatError(f"bus ids must be consecutive from 1, got {bid:g}", lineno)
        if pd < 0:
            raise CaseFormatError("negative active load", lineno)
        if vset <= 0:
            raise CaseFormatError("voltage setpoint must be positive", lineno)
        if int(btype) == 3:
            slack.append(i)
        P_L, Q_L = pd / base_mva, qd / base_mva
        kind = LOAD if (P_L > 0 or Q_L != 0) else NON_LOAD
        buses.append(Bus(i, kind, P_L, Q_L, vset, gs / base_mva, bs / base_mva))

    n_b = len(buses)

    def bus_ref(value: float, lineno: int) -> int:
        if value != int(value) or not 1 <= value <= n_b:
            raise CaseFormatError(f"unknown bus {value:g}", lineno)
        return int(value)

    branches = []
    for lineno, (f, t, r, x, b, rate) in rows["BRANCH"]:
        branches.append(
            Branch(bus_ref(f, lineno), bus_ref(t, lineno), r, x, b, rate / base_mva)
        )
    generators = []
    for lineno, (gb, pmin, pmax, qmin, qmax, cost) in rows["GEN"]:
        generators.append(
            Generator(
                bus_ref(gb, lineno),
                pmin / base_mva,
                pmax / base_mva,
                qmin / base_mva,
                qmax / base_mva,
                cost * base_mva,
            )
        )

    if len(slack) != 1:
        raise NetworkValidationError(f"exactly one slack bus required, found {len(slack)}")
    net = Network(tuple(buses), tuple(branches), tuple(generators), base_mva, slack[0], name)
    validate(net)
    return net


def _number(tok: str, lineno: int) -> float:
    try:
        value = float(tok)
    except ValueError:
        raise CaseFormatError(f"not a number: {tok!r}", lineno) from None
    if not np.isfinite(value):
        raise CaseFormatError(f"non-finite value: {tok!r}", lineno)
    return value


def validate(net: Network) -> None:
    """Raise :class:`NetworkValidationError` unless every invariant holds."""
    if net.n_bus == 0:
        raise NetworkValidationError("network has no buses")
    for k, br in enumerate(net.branches, start=1):
        if br.x == 0:
            raise NetworkValidationError(f"branch {k} has zero reactance")
        if br.rating <= 0:
            raise NetworkValidationError(f"branch {k} has non-positive rating")
        if br.from_bus == br.to_bus:
            raise NetworkValidationError(f"branch {k} is a self loop")
    for k, g in enumerate(net.generators, start=1):
        if g.P_min > g.P_max or g.Q_min > g.Q_max:
            raise NetworkValidationError(f"generator {k} has inverted limits")
    for bus in net.buses:
        if bus.P_L < 0:
            raise NetworkValidationError(f"bus {bus.id} has negative load")
        expected = LOAD if (bus.P_L > 0 or bus.Q_L != 0) else NON_LOAD
        if bus.kind != expected:
            raise NetworkValidationError(f"bus {bus.id} kind {bus.kind!r} inconsistent with load")
    if not 1 <= net.slack_bus <= net.n_bus:
        raise NetworkValidationError("slack bus out of range")
    if net.slack_bus not in net.generator_buses:
        raise NetworkValidationError("slack bus hosts no generator")
    seen = {0}
    queue = deque([0])
    while queue:
        k = queue.popleft()
        for j in net.neighbors[k]:
            if j not in seen:
                seen.add(j)
                queue.append(j)
    if len(seen) != net.n_bus:
        raise NetworkValidationError(
            f"network is not connected ({net.n_bus - len(seen)} unreachable buses)"
        )


def _unscaled(value: float, base: float, per_unit: bool = True) -> str:
    """Text for a physical quantity that parses back to exactly ``value``.

    Parsing divides by ``base`` (or multiplies, for costs); the plain product
    can land one ulp off, so the neighbouring floats are tried as well.
    """
    guess = value * base if per_unit else value / base
    candidate = guess
    for _ in range(8):
        back = candidate / base if per_unit else candidate * base
        if back == value:
            return repr(float(candidate))
        candidate = np.nextafter(candidate, np.inf if back < value else -np.inf)
    return repr(float(guess))


def format_case(net: Network) -> str:
    """Serialize back to the case format; ``parse_case(format_case(n)) == n``."""
    base = net.base_mva
    out = [f"BASE_MVA {base!r}", "", "BUS", "# id type Pd Qd Gs Bs Vset"]
    pv = net.generator_buses
    for bus in net.buses:
        btype = 3 if bus.id == net.slack_bus else (2 if bus.id in pv else 1)
        vals = [_unscaled(v, base) for v in (bus.P_L, bus.Q_L, bus.gs, bus.bs)]
        vals.append(repr(float(bus.voltage_setpoint)))
        out.append(f"{bus.id} {btype} " + " ".join(vals))
    out += ["", "BRANCH", "# from to r x b rate"]
    for br in net.branches:
        vals = [repr(float(v)) for v in (br.r, br.x, br.b)] + [_unscaled(br.rating, base)]
        out.append(f"{br.from_bus} {br.to_bus} " + " ".join(vals))
    out += ["", "GEN", "# bus Pmin Pmax Qmin Qmax cost"]
    for g in net.generators:
        vals = [_unscaled(v, base) for v in (g.P_min, g.P_max, g.Q_min, g.Q_max)]
        vals.append(_unscaled(g.cost, base, per_unit=False))
        out.append(f"{g.bus} " + " ".join(vals))
    return "\n".join(out) + "\n"


def load_case(path_or_name: str | Path) -> Network:
    """Load a case from a path, or a bundled case by name (e.g. ``"rts24"``)."""
    path = Path(path_or_name)
    if path.exists():
        return parse_case(path.read_text(encoding="utf-8"), name=path.stem)
    bundled = resources.files("gridattack") / "cases" / f"{path_or_name}.case"
    if not bundled.is_file():
        raise FileNotFoundError(f"no case file or bundled case named {path_or_name!r}")
    return parse_case(bundled.read_text(encoding="utf-8"), name=str(path_or_name))


# ---------------------------------------------------------------------------
# derived matrices
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AdmittanceMatrix:
    G: np.ndarray
    B: np.ndarray

    @property
    def Y(self) -> np.ndarray:
        return self.G + 1j * self.B


@dataclass(frozen=True)
class DcMatrices:
    H1: np.ndarray
    H2: np.ndarray


def branch_admittances(net: Network) -> tuple[np.ndarray, np.ndarray]:
    """Complex from-end and to-end branch admittance matrices ``Yf, Yt`` (n_br x n_b).

    Branches are pi-models with nominal taps: ``I_f = Yf @ V``, ``I_t = Yt @ V``.
    """
    r = np.array([br.r for br in net.branches])
    b = np.array([br.b for br in net.branches])
    ys = 1.0 / (r + 1j * net.x)
    ysh = 0.5j * b
    rows = np.arange(net.n_branch)
    Yf = np.zeros((net.n_branch, net.n_bus), dtype=complex)
    Yt = np.zeros((net.n_branch, net.n_bus), dtype=complex)
    Yf[rows, net.from_idx] = ys + ysh
    Yf[rows, net.to_idx] = -ys
    Yt[rows, net.from_idx] = -ys
    Yt[rows, net.to_idx] = ys + ysh
    return Yf, Yt


def build_ybus(net: Network) -> AdmittanceMatrix:
    Yf, Yt = branch_admittances(net)
    Ybus = np.zeros((net.n_bus, net.n_bus), dtype=complex)
    np.add.at(Ybus, net.from_idx, Yf)
    np.add.at(Ybus, net.to_idx, Yt)
    shunt = np.array([bus.gs + 1j * bus.bs for bus in net.buses])
    Ybus[np.diag_indices(net.n_bus)] += shunt
    return AdmittanceMatrix(_frozen(Ybus.real.copy()), _frozen(Ybus.imag.copy()))


def build_dc_matrices(net: Network) -> DcMatrices:
    """``H1 = A^T diag(1/x) A`` (injection vs angle), ``H2 = diag(1/x) A`` (flow vs angle)."""
    H2 = net.incidence / net.x[:, None]
    H1 = net.incidence.T @ H2
    return DcMatrices(_frozen(H1), _frozen(H2))


def scale_ratings(net: Network, factor: float) -> Network:
    if not factor > 0:
        raise ValueError(f"rating factor must be positive, got {factor}")
    branches = tuple(dataclasses.replace(br, rating=br.rating * factor) for br in net.branches)
    return net.replace(branches=branches)


def override_ratings(net: Network, ratings_mva: Mapping[int, float]) -> Network:
    """Replace ratings of the given 1-based branches (values in MVA)."""
    branches = list(net.branches)
    for k, mva in ratings_mva.items():
        k = int(k)
        if not 1 <= k <= net.n_branch:
            raise ValueError(f"branch {k} does not exist")
        if not mva > 0:
            raise ValueError(f"rating for branch {k} must be positive")
        branches[k - 1] = dataclasses.replace(branches[k - 1], rating=mva / net.base_mva)
    return net.replace(branches=tuple(branches))


def load_bus_set(net: Network) -> set[int]:
    """1-based ids of load buses."""
    return {bus.id for bus in net.buses if bus.kind == LOAD}


def make_network(
    buses: Iterable[tuple],
    branches: Iterable[tuple],
    generators: Iterable[tuple],
    slack_bus: int = 1,
    base_mva: float = 100.0,
) -> Network:
    """Build a network directly from per-unit tuples (handy for small test systems).

    ``buses``: ``(P_L, Q_L[, Vset])``; ``branches``: ``(from, to, r, x, b, rating)``;
    ``generators``: ``(bus, P_min, P_max, cost[, Q_min, Q_max])`` with cost per pu-hour.
    """
    bus_objs = []
    for i, row in enumerate(buses, start=1):
        P_L, Q_L = float(row[0]), float(row[1])
        vset = float(row[2]) if len(row) > 2 else 1.0
        kind = LOAD if (P_L > 0 or Q_L != 0) else NON_LOAD
        bus_objs.append(Bus(i, kind, P_L, Q_L, vset))
    br_objs = [Branch(int(f), int(t), float(r), float(x), float(b), float(rt))
               for f, t, r, x, b, rt in branches]
    gen_objs = []
    for row in generators:
        qmin, qmax = (row[4], row[5]) if len(row) > 4 else (-10.0, 10.0)
        gen_objs.append(Generator(int(row[0]), float(row[1]), float(row[2]), qmin, qmax, float(row[3])))
    net = Network(tuple(bus_objs), tuple(br_objs), tuple(gen_objs), base_mva, slack_bus)
    validate(net)
    return net
