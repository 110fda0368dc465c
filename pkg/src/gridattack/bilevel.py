"""Worst-case line-overload attack as a single-level mixed-binary program.

The attacker picks angle shifts ``c`` that move the operator's estimated
loads to ``P_L - H1 c``; the operator redispatches with the line-relaxed
DC OPF at those loads; the physical flow on the target is ``H2 (theta* - c)``.
The dispatch problem is replaced by its KKT conditions, and each
complementarity pair by a binary switch with two caps.

Dispatch-side duals are kept in units of the largest generator cost, so costs
lie in [0, 1] and the relaxation penalty is exactly 100. Since stationarity in
the relaxation variable reads ``100 = lam+ + lam- + beta``, capping those three
at 100 loses nothing. Primal slacks are capped by flow bounds that hold for
every admissible attack (see :func:`flow_bounds`). Generator-limit duals get a
heuristic cap that doubles whenever a solution touches it.

Attack-side variables live at every bus. Load-bus entries are the attacker's
choice; non-load entries follow from the zero load shift those buses must
keep (their load is zero), which is the DC picture of re-solving their states.
The sparsity slack ``s`` and the l1 budget cover load buses only.
"""

from __future__ import annotations

import json
import math
import time
from collections.abc import Sequence
from dataclasses import dataclass, field, replace

import numpy as np

from .attack import SUPPORT_TOL, AttackVector
from .dispatch import DispatchResult, cost_scale, dcopf_relaxed, default_penalty, linear_costs, lower_level_kkt
from .milp import OPTIMAL, LinearProgram, MilpModel, solve_lp, solve_milp
from .network import Network, build_dc_matrices

INFEASIBLE_ATTACK = "infeasible_attack"
FEASIBLE = "feasible"
SUCCESSFUL = "successful"

FEASIBLE_FRACTION = 0.01
ALPHA_CAP = 10.0  # initial generator-dual cap, in units of the largest cost
CAP_CONTACT = 0.99
MAX_CAP_ROUNDS = 6
KKT_TOL = 1e-6
# single-level programs prove faster without presolve, primal heuristics, and
# strong branching (pseudo-costs are trusted from the first observation)
HIGHS_OPTIONS = {"presolve": "off", "mip_heuristic_effort": 0.0, "mip_rel_gap": 1e-6,
                 "mip_pscost_minreliable": 0}
TIGHT_TOL = 1e-9  # integrality and row tolerance for the strict re-solve


@dataclass(frozen=True)
class AttackProblemSpec:
    """One attack instance. ``target`` is the 1-based branch id.

    ``N_1 = inf`` drops the l1 budget. ``gamma = None`` means 1% of the
    magnitude of the pre-attack target flow. ``big_m`` replaces every cap by
    one scalar (no doubling). ``c_bound`` boxes each angle shift in radians.
    """

    target: int
    L_S: float
    N_1: float = math.inf
    gamma: float | None = None
    big_m: float | None = None
    c_bound: float = 1.0

    def __post_init__(self):
        if self.L_S < 0:
            raise ValueError("L_S must be non-negative")
        if self.N_1 < 0:
            raise ValueError("N_1 must be non-negative")
        if self.gamma is not None and self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if self.big_m is not None and not self.big_m > 0:
            raise ValueError("big_m must be positive")
        if not self.c_bound > 0:
            raise ValueError("c_bound must be positive")


@dataclass(frozen=True)
class Baseline:
    """Pre-attack dispatch (relaxed DC OPF at the true loads)."""

    flows: np.ndarray
    cost: float
    dispatch: DispatchResult | None = None

    @classmethod
    def of(cls, net: Network, backend: str = "highs") -> "Baseline":
        res = dcopf_relaxed(net, backend=backend)
        if not res.optimal:
            raise RuntimeError(f"baseline dispatch failed: {res.status}")
        return cls(res.flows, res.cost, res)


@dataclass(frozen=True)
class Caps:
    lam: float  # line-limit duals (exact at the penalty)
    alpha: float  # generator-limit duals (heuristic)
    beta: float  # relaxation duals (exact: the penalty)
    slack_up: np.ndarray  # rating + R - flow, per branch
    slack_lo: np.ndarray  # rating + R + flow, per branch
    gen_slack: np.ndarray  # per generator
    relax: np.ndarray  # R, per branch
    never_up: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    never_lo: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    def doubled(self) -> "Caps":
        """Double the heuristic dual caps; primal caps are exact bounds."""
        return replace(self, lam=min(2 * self.lam, self.beta), alpha=2 * self.alpha)


def _greedy_max(weights: np.ndarray, lo: np.ndarray, hi: np.ndarray, total: float) -> float:
    """``max w.x`` over ``lo <= x <= hi, sum(x) = total`` by filling the
    largest weights first from the lower bounds."""
    x = lo.astype(float).copy()
    room = total - x.sum()
    for k in np.argsort(-weights, kind="stable"):
        step = min(hi[k] - lo[k], max(room, 0.0))
        x[k] += step
        room -= step
    return float(weights @ x)


def ptdf(net: Network) -> np.ndarray:
    """Branch flows per unit injection at each bus, withdrawn at the slack."""
    dc = build_dc_matrices(net)
    keep = np.arange(net.n_bus) != net.slack
    out = np.zeros((net.n_branch, net.n_bus))
    out[:, keep] = np.linalg.solve(dc.H1[np.ix_(keep, keep)].T, dc.H2[:, keep].T).T
    return out


def flow_bounds(net: Network, L_S: float) -> tuple[np.ndarray, np.ndarray]:
    """Smallest and largest DC flow per branch over every dispatch within
    generator limits and every cyber load ``P_L - shift`` with
    ``|shift| <= L_S * P_L`` and zero total shift.

    Both sums are fixed separately, so each bound splits into two greedy
    fills: one over generators, one over load shifts."""
    P = ptdf(net)
    gen_w = P @ net.gen_incidence
    total = float(net.P_L.sum())
    box = L_S * net.P_L
    hi = np.empty(net.n_branch)
    lo = np.empty(net.n_branch)
    for k in range(net.n_branch):
        fixed = -float(P[k] @ net.P_L)
        for sign, out in ((1.0, hi), (-1.0, lo)):
            g = _greedy_max(sign * gen_w[k], net.P_G_min, net.P_G_max, total)
            d = _greedy_max(sign * P[k], -box, box, 0.0)
            out[k] = sign * (g + d) + fixed
    return lo, hi


def default_caps(net: Network, penalty_norm: float, L_S: float = 0.0,
                 big_m: float | None = None, margin: float = 1e-6) -> Caps:
    """Initial caps from exact flow bounds.

    The relaxation ``R`` never needs to exceed how far a flow can overrun its
    rating, the line slacks follow from that, and a limit the flow can never
    reach (short by more than ``margin``) keeps a zero dual."""
    nl = net.n_branch
    if big_m is not None:
        full = np.full(nl, big_m)
        return Caps(big_m, big_m, big_m, full, full, np.full(net.n_gen, big_m), full,
                    np.zeros(nl, dtype=bool), np.zeros(nl, dtype=bool))
    lo, hi = flow_bounds(net, L_S)
    relax = np.maximum(np.maximum(hi, -lo) - net.rating, 0.0)
    return Caps(
        lam=penalty_norm,
        alpha=ALPHA_CAP,
        beta=penalty_norm,
        slack_up=net.rating + relax - lo + margin,
        slack_lo=net.rating + relax + hi + margin,
        gen_slack=net.P_G_max - net.P_G_min,
        relax=relax,
        never_up=hi < net.rating - margin,
        never_lo=lo > -net.rating + margin,
    )


class _Layout:
    """Contiguous variable blocks."""

    def __init__(self):
        self.size = 0
        self.blocks: dict[str, slice] = {}

    def add(self, name: str, n: int) -> slice:
        sl = slice(self.size, self.size + n)
        self.blocks[name] = sl
        self.size += n
        return sl

    def __getitem__(self, name: str) -> slice:
        return self.blocks[name]


@dataclass(eq=False)
class AttackModel:
    milp: MilpModel
    layout: _Layout
    net: Network
    spec: AttackProblemSpec
    gamma: float
    direction: float
    costs: np.ndarray
    scale: float
    penalty: float
    caps: Caps
    load_idx: np.ndarray

    def part(self, x: np.ndarray, name: str) -> np.ndarray:
        return x[self.layout[name]]


def build_attack_milp(
    net: Network,
    spec: AttackProblemSpec,
    baseline: Baseline | None = None,
    caps: Caps | None = None,
    costs: np.ndarray | None = None,
) -> AttackModel:
    if not 1 <= spec.target <= net.n_branch:
        raise ValueError(f"target branch {spec.target} does not exist")
    baseline = Baseline.of(net) if baseline is None else baseline
    l = spec.target - 1
    base_flow = float(baseline.flows[l])
    direction = 1.0 if base_flow >= 0 else -1.0
    gamma = FEASIBLE_FRACTION * abs(base_flow) if spec.gamma is None else spec.gamma

    costs = linear_costs(net) if costs is None else np.asarray(costs, dtype=float)
    scale = cost_scale(costs)
    penalty = default_penalty(net, costs)
    c_hat = costs / scale
    K_hat = penalty / scale
    caps = default_caps(net, K_hat, spec.L_S, spec.big_m) if caps is None else caps

    nb, ng, nl = net.n_bus, net.n_gen, net.n_branch
    load_idx = np.flatnonzero(net.load_mask)
    nload = load_idx.size
    dc = build_dc_matrices(net)
    H1, H2, Cg = dc.H1, dc.H2, net.gen_incidence

    L = _Layout()
    for name, n in (
        ("c", nb), ("s", nload), ("theta", nb), ("PG", ng), ("R", nl), ("ups", nb),
        ("lam_p", nl), ("lam_m", nl), ("alp_p", ng), ("alp_m", ng), ("beta", nl),
        ("d_lam_p", nl), ("d_lam_m", nl), ("d_alp_p", ng), ("d_alp_m", ng), ("d_beta", nl),
    ):
        L.add(name, n)
    n = L.size

    rows: list[np.ndarray] = []
    senses: list[str] = []
    rhs: list[float] = []
    names: list[str] = []

    def block(count: int, sense: str, b, label: str, **coeffs):
        A = np.zeros((count, n))
        for var, mat in coeffs.items():
            A[:, L[var]] = mat
        rows.append(A)
        senses.extend([sense] * count)
        rhs.extend(np.broadcast_to(np.asarray(b, dtype=float), (count,)).tolist())
        names.extend(f"{label}{i}" for i in range(count))

    I_l, I_g = np.eye(nl), np.eye(ng)
    E_load = np.zeros((nload, nb))
    E_load[np.arange(nload), load_idx] = 1.0
    keep = np.arange(nb) != net.slack

    # dispatch primal feasibility at cyber loads P_L - H1 c
    block(nb, "=", net.P_L, "bal", PG=Cg, theta=-H1, c=H1)
    block(nl, "<", net.rating, "lup", theta=H2, R=-I_l)
    block(nl, "<", net.rating, "llo", theta=-H2, R=-I_l)
    # load-shift box
    block(nb, "<", spec.L_S * net.P_L, "shu", c=H1)
    block(nb, "<", spec.L_S * net.P_L, "shl", c=-H1)
    # l1 linearization over load buses
    block(nload, "<", 0.0, "l1p", c=E_load, s=-np.eye(nload))
    block(nload, "<", 0.0, "l1m", c=-E_load, s=-np.eye(nload))
    if math.isfinite(spec.N_1):
        block(1, "<", spec.N_1, "l1", s=np.ones((1, nload)))
    # stationarity
    block(ng, "=", -c_hat, "sPG", alp_p=I_g, alp_m=-I_g, ups=Cg.T)
    block(int(keep.sum()), "=", 0.0, "sth", lam_p=H2.T[keep], lam_m=-H2.T[keep], ups=-H1[keep])
    block(nl, "=", K_hat, "sR", lam_p=I_l, lam_m=I_l, beta=I_l)
    # switched complementarity: dual <= cap * d, slack <= cap * (1 - d)
    Mu, Mo, Mg, Mr = caps.slack_up, caps.slack_lo, caps.gen_slack, caps.relax
    block(nl, "<", 0.0, "clp", lam_p=I_l, d_lam_p=-caps.lam * I_l)
    block(nl, "<", Mu - net.rating, "slp", R=I_l, theta=-H2, d_lam_p=np.diag(Mu))
    block(nl, "<", 0.0, "clm", lam_m=I_l, d_lam_m=-caps.lam * I_l)
    block(nl, "<", Mo - net.rating, "slm", R=I_l, theta=H2, d_lam_m=np.diag(Mo))
    block(ng, "<", 0.0, "cap", alp_p=I_g, d_alp_p=-caps.alpha * I_g)
    block(ng, "<", Mg - net.P_G_max, "sap", PG=-I_g, d_alp_p=np.diag(Mg))
    block(ng, "<", 0.0, "cam", alp_m=I_g, d_alp_m=-caps.alpha * I_g)
    block(ng, "<", Mg + net.P_G_min, "sam", PG=I_g, d_alp_m=np.diag(Mg))
    block(nl, "<", 0.0, "cb", beta=I_l, d_beta=-caps.beta * I_l)
    block(nl, "<", Mr, "sb", R=I_l, d_beta=np.diag(Mr))
    # valid switch cuts: both line limits cannot bind at once (ratings are
    # positive), and lam+ + lam- + beta = penalty needs one of them positive
    block(nl, "<", 1.0, "xl", d_lam_p=I_l, d_lam_m=I_l)
    block(nl, ">", 1.0, "xb", d_lam_p=I_l, d_lam_m=I_l, d_beta=I_l)
    spread = (net.P_G_max - net.P_G_min) > 0
    if spread.any():
        block(int(spread.sum()), "<", 1.0, "xg", d_alp_p=I_g[spread], d_alp_m=I_g[spread])

    A = np.vstack(rows)
    obj = np.zeros(n)
    obj[L["theta"]] = direction * H2[l]
    obj[L["c"]] = -direction * H2[l]
    obj[L["s"]] = -gamma

    lb = np.zeros(n)
    ub = np.full(n, np.inf)
    lb[L["c"]], ub[L["c"]] = -spec.c_bound, spec.c_bound
    ub[L["s"]] = spec.c_bound
    lb[L["theta"]], ub[L["theta"]] = -np.inf, np.inf
    lb[L["theta"].start + net.slack] = ub[L["theta"].start + net.slack] = 0.0
    lb[L["PG"]], ub[L["PG"]] = net.P_G_min, net.P_G_max
    ub[L["R"]] = Mr
    lb[L["ups"]], ub[L["ups"]] = -np.inf, np.inf
    for name in ("lam_p", "lam_m"):
        ub[L[name]] = caps.lam
    ub[L["beta"]] = caps.beta
    for name in ("alp_p", "alp_m"):
        ub[L[name]] = caps.alpha
    for flag, dual, switch in ((caps.never_up, "lam_p", "d_lam_p"), (caps.never_lo, "lam_m", "d_lam_m")):
        if flag.size:
            ub[np.arange(n)[L[dual]][flag]] = 0.0
            ub[np.arange(n)[L[switch]][flag]] = 0.0
    binaries = np.concatenate([np.arange(n)[L[k]] for k in ("d_lam_p", "d_lam_m", "d_alp_p", "d_alp_m", "d_beta")])
    ub[binaries] = np.minimum(ub[binaries], 1.0)

    var_names = [f"{k}{i}" for k, sl in L.blocks.items() for i in range(sl.stop - sl.start)]
    lp = LinearProgram(obj, A, senses, rhs, lb, ub, maximize=True, var_names=var_names, row_names=names)
    return AttackModel(
        MilpModel(lp, binaries), L, net, spec, gamma, direction, costs, scale, penalty, caps, load_idx
    )


# ---------------------------------------------------------------------------
# solving
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class AttackSolution:
    spec: AttackProblemSpec
    status: str
    classification: str
    c: AttackVector
    P_target: float
    P_base: float
    objective: float
    gamma: float
    s: np.ndarray | None = None
    theta: np.ndarray | None = None
    P_G: np.ndarray | None = None
    R: np.ndarray | None = None
    upsilon: np.ndarray | None = None
    lambda_plus: np.ndarray | None = None
    lambda_minus: np.ndarray | None = None
    alpha_plus: np.ndarray | None = None
    alpha_minus: np.ndarray | None = None
    beta: np.ndarray | None = None
    binaries: dict[str, np.ndarray] = field(default_factory=dict)
    physical_flows: np.ndarray | None = None
    cyber_flows: np.ndarray | None = None
    cyber_loads: np.ndarray | None = None
    rating: float = float("nan")
    nodes: int = 0
    cap_rounds: int = 0
    runtime: float = 0.0
    backend: str = ""
    bound: float = float("nan")
    x: np.ndarray | None = field(default=None, repr=False)  # raw model vector, for warm starts

    @property
    def feasible(self) -> bool:
        return self.classification in (FEASIBLE, SUCCESSFUL)

    @property
    def successful(self) -> bool:
        return self.classification == SUCCESSFUL

    @property
    def l0(self) -> int:
        return self.c.l0

    @property
    def l1(self) -> float:
        return self.c.l1

    def to_dict(self, include_runtime: bool = False) -> dict:
        def arr(v):
            return None if v is None else np.asarray(v).tolist()

        out = {
            "target": self.spec.target,
            "L_S": self.spec.L_S,
            "N_1": None if math.isinf(self.spec.N_1) else self.spec.N_1,
            "gamma": self.gamma,
            "status": self.status,
            "classification": self.classification,
            "P_target": self.P_target,
            "P_base": self.P_base,
            "rating": self.rating,
            "objective": self.objective,
            "l0": self.l0,
            "l1": self.l1,
            "c": self.c.to_dict(),
            "s": arr(self.s),
            "theta": arr(self.theta),
            "P_G": arr(self.P_G),
            "R": arr(self.R),
            "upsilon": arr(self.upsilon),
            "lambda_plus": arr(self.lambda_plus),
            "lambda_minus": arr(self.lambda_minus),
            "alpha_plus": arr(self.alpha_plus),
            "alpha_minus": arr(self.alpha_minus),
            "beta": arr(self.beta),
            "binaries": {k: arr(v) for k, v in self.binaries.items()},
            "physical_flows": arr(self.physical_flows),
            "cyber_flows": arr(self.cyber_flows),
            "cyber_loads": arr(self.cyber_loads),
            "nodes": self.nodes,
            "bound": None if math.isnan(self.bound) else self.bound,
            "cap_rounds": self.cap_rounds,
            "backend": self.backend,
        }
        if include_runtime:
            out["runtime"] = self.runtime
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def classify(P_target: float, P_base: float, rating: float) -> str:
    change = abs(P_target - P_base)
    if not change > max(FEASIBLE_FRACTION * abs(P_base), 1e-6):
        return INFEASIBLE_ATTACK
    return SUCCESSFUL if abs(P_target) > rating + 1e-9 else FEASIBLE


def _switch_sides(model: AttackModel, x: np.ndarray) -> np.ndarray:
    """Binaries read off the continuous values: a switch is on (slack held at
    zero) when the slack is the smaller member of its pair."""
    p = lambda name: model.part(x, name)  # noqa: E731
    net = model.net
    flows = build_dc_matrices(net).H2 @ p("theta")
    R = p("R")
    pairs = {
        "d_lam_p": (p("lam_p"), net.rating + R - flows),
        "d_lam_m": (p("lam_m"), net.rating + R + flows),
        "d_alp_p": (p("alp_p"), net.P_G_max - p("PG")),
        "d_alp_m": (p("alp_m"), p("PG") - net.P_G_min),
        "d_beta": (p("beta"), R),
    }
    out = x.copy()
    for name, (dual, slack) in pairs.items():
        sl = model.layout[name]
        on = slack <= dual
        out[sl] = np.minimum(on.astype(float), model.milp.lp.ub[sl])
    return out


def _polish(model: AttackModel, x: np.ndarray, backend: str) -> np.ndarray | None:
    """Re-solve the LP with the binaries fixed, giving an exact vertex. The
    rounded binaries are tried first, then the ones implied by the values."""
    lp = model.milp.lp
    b = model.milp.binaries
    for guess in (x, _switch_sides(model, x)):
        lb, ub = lp.lb.copy(), lp.ub.copy()
        lb[b] = ub[b] = np.round(guess[b])
        res = solve_lp(lp.copy(lb=lb, ub=ub), backend=backend)
        if res.optimal:
            return res.x
    return None


def baseline_start(model: AttackModel, dispatch: DispatchResult) -> np.ndarray:
    """The no-attack point: ``c = 0`` with the baseline dispatch and its duals."""
    L, net = model.layout, model.net
    x = np.zeros(model.milp.lp.n_vars)
    x[L["theta"]] = dispatch.theta
    x[L["PG"]] = dispatch.P_G
    x[L["R"]] = dispatch.R
    for name, value in (
        ("ups", dispatch.upsilon), ("lam_p", dispatch.lambda_plus), ("lam_m", dispatch.lambda_minus),
        ("alp_p", dispatch.alpha_plus), ("alp_m", dispatch.alpha_minus), ("beta", dispatch.beta),
    ):
        x[L[name]] = value / model.scale
    return _switch_sides(model, x)


def _fits(model: AttackModel, x: np.ndarray, tol: float = 1e-7) -> bool:
    lp = model.milp.lp
    return lp.primal_residual(x) <= tol * max(1.0, float(np.max(np.abs(x), initial=0.0)))


def _touches_cap(model: AttackModel, x: np.ndarray) -> bool:
    """Any heuristic dual cap within 1% of being binding. The beta cap and
    the primal caps are exact bounds and are not checked."""
    if model.spec.big_m is not None:
        return False
    caps = model.caps
    p = lambda name: model.part(x, name)  # noqa: E731
    lam = np.max(np.r_[p("lam_p"), p("lam_m")], initial=0.0)
    alpha = np.max(np.r_[p("alp_p"), p("alp_m")], initial=0.0)
    return bool(
        (caps.lam < caps.beta and lam >= CAP_CONTACT * caps.lam)
        or alpha >= CAP_CONTACT * caps.alpha
    )


def solve_attack(
    net: Network,
    spec: AttackProblemSpec,
    backend: str = "highs",
    baseline: Baseline | None = None,
    node_limit: int = 100_000,
    time_limit: float | None = None,
    start: AttackSolution | Sequence[AttackSolution] | None = None,
    options: dict | None = None,
) -> AttackSolution:
    """Solve one instance and classify it against the pre-attack target flow.

    Caps that are touched (or an infeasible model) trigger a rebuild with the
    heuristic caps doubled, up to a fixed number of rounds. HiGHS is offered
    the better of the no-attack point and ``start`` (a solution of the same
    network under tighter limits) as its first incumbent, so with a node
    limit the result is never worse than either.
    """
    t0 = time.perf_counter()
    baseline = Baseline.of(net) if baseline is None else baseline
    model = build_attack_milp(net, spec, baseline)
    l = spec.target - 1
    P_base = float(baseline.flows[l])
    options = dict(HIGHS_OPTIONS if options is None else options)
    rounds = 0
    while True:
        kwargs = {"node_limit": node_limit}
        if backend == "highs":
            # a chained start solved under doubled caps must stay admissible
            if rounds < MAX_CAP_ROUNDS and _start_needs_room(model, baseline, start):
                rounds += 1
                model = build_attack_milp(net, spec, baseline, model.caps.doubled())
                continue
            kwargs.update(time_limit=time_limit, options=options, start=_pick_start(model, baseline, start))
        out = solve_milp(model.milp, backend=backend, **kwargs)
        x = out.x
        if x is not None:
            polished = _polish(model, x, backend)
            if polished is None and backend == "highs" and options.get("mip_feasibility_tolerance", 1.0) > TIGHT_TOL:
                # the incumbent leans on integrality slop times a large cap and
                # no exact vertex has its switch pattern: solve again, strictly
                options["mip_feasibility_tolerance"] = TIGHT_TOL
                continue
            x = polished if polished is not None else x
        retry = spec.big_m is None and rounds < MAX_CAP_ROUNDS and (
            x is None and out.status != OPTIMAL or x is not None and _touches_cap(model, x)
        )
        if not retry:
            break
        rounds += 1
        model = build_attack_milp(net, spec, baseline, model.caps.doubled())

    if x is None:
        return AttackSolution(
            spec, out.status, INFEASIBLE_ATTACK, AttackVector.zeros(net), float("nan"), P_base,
            float("nan"), model.gamma, rating=float(net.rating[l]), nodes=out.nodes,
            cap_rounds=rounds, runtime=time.perf_counter() - t0, backend=backend,
        )
    return _unpack(model, x, out, P_base, rounds, time.perf_counter() - t0, backend)


def _start_candidates(model: AttackModel, baseline: Baseline, start):
    if baseline.dispatch is not None and baseline.dispatch.optimal:
        yield baseline_start(model, baseline.dispatch)
    if isinstance(start, AttackSolution):
        start = [start]
    for sol in start or ():
        if sol is not None and sol.x is not None and sol.x.size == model.milp.lp.n_vars:
            yield sol.x


def _pick_start(model, baseline, start) -> np.ndarray | None:
    best, best_obj = None, -np.inf
    lp = model.milp.lp
    for x in _start_candidates(model, baseline, start):
        if _fits(model, x) and lp.objective(x) > best_obj:
            best, best_obj = x, lp.objective(x)
    return best


def _start_needs_room(model, baseline, start) -> bool:
    """A candidate start is ruled out only by the heuristic alpha cap."""
    for x in _start_candidates(model, baseline, start):
        alpha = np.max(np.r_[model.part(x, "alp_p"), model.part(x, "alp_m")], initial=0.0)
        if alpha >= CAP_CONTACT * model.caps.alpha:
            return True
    return False


def _unpack(model, x, out, P_base, rounds, runtime, backend) -> AttackSolution:
    net, spec = model.net, model.spec
    l = spec.target - 1
    p = lambda name: model.part(x, name).copy()  # noqa: E731
    dc = build_dc_matrices(net)
    c = p("c")
    theta = p("theta")
    physical = dc.H2 @ (theta - c)
    P_target = float(physical[l])
    s_ = model.scale
    return AttackSolution(
        spec=spec,
        status=out.status,
        classification=classify(P_target, P_base, float(net.rating[l])),
        c=AttackVector(np.where(np.abs(c) > 1e-12, c, 0.0), net.load_mask),
        P_target=P_target,
        P_base=P_base,
        objective=float(model.milp.lp.c @ x),
        gamma=model.gamma,
        s=p("s"),
        theta=theta,
        P_G=p("PG"),
        R=p("R"),
        upsilon=p("ups") * s_,
        lambda_plus=p("lam_p") * s_,
        lambda_minus=p("lam_m") * s_,
        alpha_plus=p("alp_p") * s_,
        alpha_minus=p("alp_m") * s_,
        beta=p("beta") * s_,
        binaries={k: np.round(p(k)).astype(int) for k in ("d_lam_p", "d_lam_m", "d_alp_p", "d_alp_m", "d_beta")},
        physical_flows=physical,
        cyber_flows=dc.H2 @ theta,
        cyber_loads=net.P_L - dc.H1 @ c,
        rating=float(net.rating[l]),
        nodes=out.nodes,
        cap_rounds=rounds,
        runtime=runtime,
        backend=backend,
        bound=float(out.bound),
        x=x.copy(),
    )


# ---------------------------------------------------------------------------
# checks
# ---------------------------------------------------------------------------


@dataclass
class KktReport:
    stationarity: float
    complementarity: float
    primal: float
    dual: float
    attack_primal: float
    lower_level_gap: float

    @property
    def worst(self) -> float:
        return max(self.stationarity, self.complementarity, self.primal, self.dual,
                   self.attack_primal, self.lower_level_gap)

    def ok(self, tol: float = KKT_TOL) -> bool:
        return self.worst < tol


def verify_kkt(solution: AttackSolution, net: Network, costs: np.ndarray | None = None,
               backend: str = "native") -> KktReport:
    """Recompute every optimality condition of the embedded dispatch from the
    returned numbers, check the attack constraints, and re-solve the relaxed
    dispatch at the cyber loads to compare objectives (in largest-cost units)."""
    costs = linear_costs(net) if costs is None else costs
    penalty = default_penalty(net, costs)
    scale = cost_scale(costs)
    dc = build_dc_matrices(net)
    c = solution.c.c
    cyber = net.P_L - dc.H1 @ c
    res = lower_level_kkt(
        net, cyber, solution.theta, solution.P_G, solution.R, solution.upsilon,
        solution.lambda_plus, solution.lambda_minus, solution.alpha_plus, solution.alpha_minus,
        solution.beta, costs, penalty,
    )
    spec = solution.spec
    shift = dc.H1 @ c
    load = np.flatnonzero(net.load_mask)
    viol = [
        np.max(np.abs(shift) - spec.L_S * net.P_L, initial=0.0),
        np.max(np.abs(c[load]) - solution.s, initial=0.0),
        np.max(np.abs(c) - spec.c_bound, initial=0.0),
    ]
    if math.isfinite(spec.N_1):
        viol.append(float(solution.s.sum() - spec.N_1))
    attack_primal = max(0.0, *(float(v) for v in viol))

    ref = dcopf_relaxed(net, cyber, penalty=penalty, costs=costs, backend=backend)
    own = float(costs @ solution.P_G + penalty * solution.R.sum())
    gap = abs(own - ref.cost) / scale if ref.optimal else math.inf
    return KktReport(res["stationarity"], res["complementarity"], res["primal"], res["dual"],
                     attack_primal, gap)


def sparsity_report(c: AttackVector | np.ndarray, load_mask: np.ndarray | None = None) -> tuple[int, float]:
    """``(l0, l1)`` over load buses; ``l0`` counts entries above 1e-6 in magnitude."""
    if not isinstance(c, AttackVector):
        c = np.asarray(c, dtype=float)
        c = AttackVector(c, np.ones(c.size, bool) if load_mask is None else load_mask)
    vals = c.c[c.load_mask]
    return int(np.sum(np.abs(vals) > SUPPORT_TOL)), float(np.sum(np.abs(vals)))
