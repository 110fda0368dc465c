"""Scenario sweeps, the end-to-end consequence run, and result files.

A sweep solves the attack program for every (target, L_S, N_1) tuple of a
config. Tuples of one target form a chain: each solve is warm-started from the
solutions at the next-smaller L_S and N_1, whose attacks stay admissible when
a limit is relaxed. Chains run in parallel; results are ordered by key, so the
emitted files depend only on the config.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from .attack import AttackVector, ac_attack, estimated_load_shift
from .bilevel import INFEASIBLE_ATTACK, AttackProblemSpec, AttackSolution, Baseline, solve_attack
from .dispatch import ac_power_flow, dcopf_relaxed
from .errors import ConvergenceError, ObservabilityError
from .estimation import DetectorConfig, ac_wls_se, chi2_test
from .measurement import complete_plan, generate
from .network import Network, load_case, override_ratings, scale_ratings

DEFAULT_L_S = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
ERROR = "error"


def _number(value) -> float:
    """Floats from config text; ``inf``/``.inf``/``null`` mean no limit."""
    if value is None:
        return math.inf
    if isinstance(value, str) and value.strip().lower() in ("inf", "+inf", "infinity", ".inf"):
        return math.inf
    return float(value)


def _fmt(value: float) -> str:
    return "inf" if math.isinf(value) else repr(float(value))


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass
class ScenarioConfig:
    """One network and the grid of attack problems to solve on it.

    ``gamma`` is ``"auto"`` (1% of the pre-attack target flow) or a number.
    ``rating_overrides`` maps 1-based branch ids to per-unit ratings; they are
    applied after the congestion factor and only in consequence runs.
    """

    case: str = "rts24"
    congestion_factor: float = 1.0
    targets: list[int] | str = "all"
    L_S: list[float] = field(default_factory=lambda: list(DEFAULT_L_S))
    N_1: list[float] = field(default_factory=lambda: [math.inf])
    gamma: float | str = "auto"
    alpha: float = 0.01
    sigma2: float = 1e-4
    seed: int = 0
    rating_overrides: dict[int, float] = field(default_factory=dict)
    node_limit: int = 100_000
    backend: str = "highs"
    out: str = "results"

    def __post_init__(self):
        self.congestion_factor = float(self.congestion_factor)
        if not self.congestion_factor > 0:
            raise ValueError("congestion_factor must be positive")
        if isinstance(self.targets, str):
            if self.targets != "all":
                raise ValueError("targets must be 'all' or a list of branch ids")
        else:
            self.targets = sorted({int(t) for t in self.targets})
            if not self.targets:
                raise ValueError("target list is empty")
        self.L_S = sorted({float(v) for v in self.L_S})
        self.N_1 = sorted({_number(v) for v in self.N_1})
        if not self.L_S or not self.N_1:
            raise ValueError("L_S and N_1 grids must be nonempty")
        if min(self.L_S) < 0 or min(self.N_1) < 0:
            raise ValueError("grid values must be nonnegative")
        if not (isinstance(self.gamma, str) and self.gamma == "auto"):
            self.gamma = float(self.gamma)
            if self.gamma < 0:
                raise ValueError("gamma must be nonnegative")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        self.rating_overrides = {int(k): float(v) for k, v in (self.rating_overrides or {}).items()}
        self.node_limit = int(self.node_limit)
        self.seed = int(self.seed)

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_yaml(cls, path_or_text: str | Path) -> "ScenarioConfig":
        text = path_or_text
        if isinstance(path_or_text, Path) or "\n" not in str(path_or_text):
            text = Path(path_or_text).read_text()
        return cls.from_dict(yaml.safe_load(text) or {})

    def to_dict(self) -> dict:
        out = asdict(self)
        out["N_1"] = [_fmt(v) if math.isinf(v) else v for v in self.N_1]
        return out

    def network(self) -> Network:
        """The case with the congestion factor applied (sweep network)."""
        return scale_ratings(load_case(self.case), self.congestion_factor)

    def consequence_network(self) -> Network:
        net = self.network()
        if self.rating_overrides:
            net = override_ratings(net, {k: v * net.base_mva for k, v in self.rating_overrides.items()})
        return net

    def target_list(self, net: Network) -> list[int]:
        if self.targets == "all":
            return list(range(1, net.n_branch + 1))
        bad = [t for t in self.targets if not 1 <= t <= net.n_branch]
        if bad:
            raise ValueError(f"targets {bad} are not branches of the case")
        return list(self.targets)

    def spec(self, target: int, L_S: float, N_1: float) -> AttackProblemSpec:
        gamma = None if self.gamma == "auto" else float(self.gamma)
        return AttackProblemSpec(target=target, L_S=L_S, N_1=N_1, gamma=gamma)


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

RECORD_COLUMNS = (
    "target", "L_S", "N_1", "P_base", "P_target", "rating", "l0", "l1",
    "classification", "status", "nodes", "bound", "cap_rounds", "error",
)
AGGREGATE_COLUMNS = (
    "L_S", "N_1", "tuples", "max_flow", "max_flow_target", "mean_l0_feasible",
    "pct_feasible", "pct_successful", "errors",
)


@dataclass
class ScenarioRecord:
    target: int
    L_S: float
    N_1: float
    P_base: float
    P_target: float
    rating: float
    l0: int
    l1: float
    classification: str
    status: str
    nodes: int = 0
    bound: float = float("nan")
    cap_rounds: int = 0
    error: str = ""
    runtime: float = field(default=0.0, compare=False)  # never emitted

    @property
    def key(self) -> tuple:
        return (self.target, self.L_S, self.N_1)

    @property
    def feasible(self) -> bool:
        return self.classification in ("feasible", "successful")

    @classmethod
    def from_solution(cls, sol: AttackSolution) -> "ScenarioRecord":
        spec = sol.spec
        return cls(
            spec.target, spec.L_S, spec.N_1, sol.P_base, sol.P_target, sol.rating, sol.l0, sol.l1,
            sol.classification, sol.status, sol.nodes, sol.bound, sol.cap_rounds, "", sol.runtime,
        )

    def row(self) -> dict:
        out = {}
        for name in RECORD_COLUMNS:
            value = getattr(self, name)
            out[name] = _fmt(value) if isinstance(value, float) else str(value)
        return out

    @classmethod
    def from_row(cls, row: dict) -> "ScenarioRecord":
        return cls(
            int(row["target"]), _number(row["L_S"]), _number(row["N_1"]), float(row["P_base"]),
            float(row["P_target"]), float(row["rating"]), int(row["l0"]), float(row["l1"]),
            row["classification"], row["status"], int(row["nodes"]), float(row["bound"]),
            int(row["cap_rounds"]), row["error"],
        )


@dataclass
class Aggregate:
    L_S: float
    N_1: float
    tuples: int
    max_flow: float
    max_flow_target: int
    mean_l0_feasible: float
    pct_feasible: float
    pct_successful: float
    errors: int

    def row(self) -> dict:
        return {
            name: (_fmt(v) if isinstance(v, float) else str(v))
            for name, v in ((n, getattr(self, n)) for n in AGGREGATE_COLUMNS)
        }


def aggregate(records: list[ScenarioRecord]) -> list[Aggregate]:
    """Per (L_S, N_1): largest attacked target flow over targets, mean l0 over
    feasible attacks, and the percentages of feasible and successful attacks
    among all targets. Failed tuples are counted separately."""
    groups: dict[tuple, list[ScenarioRecord]] = {}
    for r in records:
        groups.setdefault((r.L_S, r.N_1), []).append(r)
    out = []
    for (L_S, N_1), rs in sorted(groups.items()):
        rs = sorted(rs, key=lambda r: r.target)
        ok = [r for r in rs if not r.error and not math.isnan(r.P_target)]
        best = max(ok, key=lambda r: (abs(r.P_target), -r.target), default=None)
        feas = [r for r in ok if r.feasible]
        n = len(rs)
        out.append(Aggregate(
            L_S, N_1, n,
            abs(best.P_target) if best else float("nan"),
            best.target if best else 0,
            float(np.mean([r.l0 for r in feas])) if feas else float("nan"),
            100.0 * len(feas) / n,
            100.0 * sum(r.classification == "successful" for r in ok) / n,
            n - len(ok),
        ))
    return out


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    records: list[ScenarioRecord]
    aggregates: list[Aggregate]

    @property
    def complete(self) -> bool:
        return not any(r.error for r in self.records)


def _error_record(spec: AttackProblemSpec, P_base: float, rating: float, exc: Exception) -> ScenarioRecord:
    return ScenarioRecord(
        spec.target, spec.L_S, spec.N_1, P_base, float("nan"), rating, 0, 0.0,
        ERROR, ERROR, error=f"{type(exc).__name__}: {exc}",
    )


def _run_chain(cfg: ScenarioConfig, target: int) -> list[ScenarioRecord]:
    net = cfg.network()
    baseline = Baseline.of(net)
    done: dict[tuple[int, int], AttackSolution] = {}
    records = []
    for i, L_S in enumerate(cfg.L_S):
        for j, N_1 in enumerate(cfg.N_1):
            spec = cfg.spec(target, L_S, N_1)
            starts = [done.get(k) for k in ((i - 1, j), (i, j - 1))]
            try:
                sol = solve_attack(
                    net, spec, backend=cfg.backend, baseline=baseline,
                    node_limit=cfg.node_limit, start=[s for s in starts if s is not None],
                )
            except Exception as exc:  # recorded in-band, the sweep goes on
                records.append(_error_record(
                    spec, float(baseline.flows[target - 1]), float(net.rating[target - 1]), exc))
                continue
            done[(i, j)] = sol
            records.append(ScenarioRecord.from_solution(sol))
    return records


def run_sweep(cfg: ScenarioConfig, jobs: int = 1) -> ScenarioResult:
    targets = cfg.target_list(cfg.network())
    if jobs > 1 and len(targets) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chains = list(pool.map(_run_chain, [cfg] * len(targets), targets))
    else:
        chains = [_run_chain(cfg, t) for t in targets]
    records = sorted((r for chain in chains for r in chain), key=lambda r: r.key)
    return ScenarioResult(cfg, records, aggregate(records))


# ---------------------------------------------------------------------------
# consequence
# ---------------------------------------------------------------------------


@dataclass
class ConsequenceReport:
    """Physical effect of one solved attack on the AC system.

    Flows are per unit at each branch's from end; apparent flow is the larger
    of the two ends. ``stage`` names the failing step when ``error`` is set.
    """

    target: int
    L_S: float
    N_1: float
    P_target: float = float("nan")
    P_base: float = float("nan")
    classification: str = ""
    c: dict = field(default_factory=dict)
    rating: np.ndarray | None = None
    pre_P: np.ndarray | None = None
    pre_Q: np.ndarray | None = None
    pre_S: np.ndarray | None = None
    post_P: np.ndarray | None = None
    post_Q: np.ndarray | None = None
    post_S: np.ndarray | None = None
    pre_overloaded: np.ndarray | None = None
    post_overloaded: np.ndarray | None = None
    J: float = float("nan")
    dof: int = 0
    threshold: float = float("nan")
    detector_pass: bool | None = None
    load_shift: np.ndarray | None = None
    cyber_loads: np.ndarray | None = None
    pre_P_G: np.ndarray | None = None
    post_P_G: np.ndarray | None = None
    stage: str = ""
    error: str = ""

    @property
    def ok(self) -> bool:
        return not self.error

    @property
    def target_P(self) -> float:
        """Post-attack AC active flow on the target, from end."""
        return float(self.post_P[self.target - 1]) if self.post_P is not None else float("nan")

    @property
    def target_S(self) -> float:
        return float(self.post_S[self.target - 1]) if self.post_S is not None else float("nan")

    @property
    def overloaded_branches(self) -> list[int]:
        if self.post_overloaded is None:
            return []
        return [int(k) + 1 for k in np.flatnonzero(self.post_overloaded)]

    def to_dict(self) -> dict:
        out = {}
        for key, value in asdict(self).items():
            if isinstance(value, np.ndarray):
                value = value.tolist()
            elif isinstance(value, float) and math.isinf(value):
                value = _fmt(value)
            elif isinstance(value, float) and math.isnan(value):
                value = None
            out[key] = value
        out["target_P"] = None if math.isnan(self.target_P) else self.target_P
        out["target_S"] = None if math.isnan(self.target_S) else self.target_S
        out["overloaded_branches"] = self.overloaded_branches
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def branch_rows(self) -> list[dict]:
        rows = []
        if self.rating is None:
            return rows
        for k in range(len(self.rating)):
            row = {"branch": str(k + 1), "rating": _fmt(self.rating[k])}
            for name in ("pre_P", "pre_Q", "pre_S", "post_P", "post_Q", "post_S"):
                arr = getattr(self, name)
                row[name] = "" if arr is None else _fmt(arr[k])
            for name in ("pre_overloaded", "post_overloaded"):
                arr = getattr(self, name)
                row[name] = "" if arr is None else str(bool(arr[k]))
            rows.append(row)
        return rows


def _ac_flows(net: Network, P_G: np.ndarray):
    flow = ac_power_flow(net, P_G)
    if not flow.converged:
        raise ConvergenceError("AC power flow did not converge", "power_flow", flow.mismatch)
    S = flow.branch_S
    return flow, flow.P_from.copy(), flow.Q_from.copy(), S


def run_consequence(
    cfg: ScenarioConfig, target: int, L_S: float, N_1: float,
    solution: AttackSolution | None = None,
) -> ConsequenceReport:
    """Base dispatch and AC flow, measurements, AC attack with the solved
    ``c``, full AC estimation and chi-square test, estimated loads, DC
    redispatch at those loads, and the AC flow at the true loads."""
    N_1 = _number(N_1)
    net = cfg.consequence_network()
    report = ConsequenceReport(target, float(L_S), N_1, rating=net.rating.copy())
    stage = "setup"
    try:
        stage = "base_dispatch"
        base = dcopf_relaxed(net, backend=cfg.backend)
        if not base.optimal:
            raise RuntimeError(f"base dispatch {base.status}")
        report.pre_P_G = base.P_G.copy()
        stage = "base_power_flow"
        flow0, report.pre_P, report.pre_Q, report.pre_S = _ac_flows(net, base.P_G)
        report.pre_overloaded = report.pre_S > net.rating

        stage = "attack_solve"
        if solution is None:
            solution = solve_attack(
                net, cfg.spec(target, float(L_S), N_1), backend=cfg.backend, node_limit=cfg.node_limit)
        if math.isnan(solution.P_target):
            raise RuntimeError(f"attack program {solution.status}")
        report.P_target, report.P_base = solution.P_target, solution.P_base
        report.classification = solution.classification
        c = solution.c
        report.c = {str(k + 1): float(c.c[k]) for k in c.support}

        stage = "measurements"
        plan = complete_plan(net, cfg.sigma2)
        meas = generate(net, plan, flow0.state, seed=cfg.seed)
        stage = "ac_attack"
        attacked = ac_attack(net, meas, AttackVector(np.where(net.load_mask, c.c, 0.0), net.load_mask))

        stage = "state_estimation"
        est = ac_wls_se(net, attacked)
        det = DetectorConfig.for_plan(net, plan, cfg.alpha)
        report.J, report.dof, report.threshold = est.J, det.dof, det.threshold
        report.detector_pass = chi2_test(est.J, det)
        shift = estimated_load_shift(net, meas, attacked, model="ac")
        report.load_shift = np.where(net.load_mask, shift, 0.0)
        report.cyber_loads = net.P_L - report.load_shift

        stage = "redispatch"
        redispatch = dcopf_relaxed(net, P_L=report.cyber_loads, backend=cfg.backend)
        if not redispatch.optimal:
            raise RuntimeError(f"redispatch {redispatch.status}")
        report.post_P_G = redispatch.P_G.copy()
        stage = "post_power_flow"
        _, report.post_P, report.post_Q, report.post_S = _ac_flows(net, redispatch.P_G)
        report.post_overloaded = report.post_S > net.rating
        report.stage = "done"
    except (ConvergenceError, ObservabilityError, RuntimeError, ValueError) as exc:
        report.stage, report.error = stage, f"{type(exc).__name__}: {exc}"
    return report


# ---------------------------------------------------------------------------
# emission
# ---------------------------------------------------------------------------


def _csv_text(columns, rows) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


def _json_value(text: str):
    if text in ("inf", "nan"):
        return text
    for kind in (int, float):
        try:
            return kind(text)
        except ValueError:
            pass
    return text


def emit(result: ScenarioResult, fmt: str, out_dir: str | Path) -> list[Path]:
    """Write one row per tuple plus the aggregate table. Runtimes are left out
    so repeated runs of one config give identical bytes."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rec_rows = [r.row() for r in result.records]
    agg_rows = [a.row() for a in result.aggregates]
    if fmt == "csv":
        paths = [out / "records.csv", out / "aggregates.csv"]
        paths[0].write_text(_csv_text(RECORD_COLUMNS, rec_rows))
        paths[1].write_text(_csv_text(AGGREGATE_COLUMNS, agg_rows))
        return paths
    if fmt == "json":
        conv = lambda rows: [{k: _json_value(v) for k, v in row.items()} for row in rows]  # noqa: E731
        doc = {"records": conv(rec_rows), "aggregates": conv(agg_rows)}
        path = out / "results.json"
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        return [path]
    raise ValueError("format must be 'csv' or 'json'")


def load_records(path: str | Path) -> list[ScenarioRecord]:
    with open(path, newline="") as fh:
        return [ScenarioRecord.from_row(row) for row in csv.DictReader(fh)]


def load_result(out_dir: str | Path, cfg: ScenarioConfig | None = None) -> ScenarioResult:
    """Read ``records.csv`` and ``aggregates.csv`` back, checking that the
    aggregates are exactly what the records give."""
    out = Path(out_dir)
    records = load_records(out / "records.csv")
    aggs = aggregate(records)
    with open(out / "aggregates.csv", newline="") as fh:
        stored = list(csv.DictReader(fh))
    if stored != [a.row() for a in aggs]:
        raise ValueError("aggregates do not match the records they summarize")
    return ScenarioResult(cfg or ScenarioConfig(), records, aggs)


def emit_consequence(report: ConsequenceReport, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"consequence_t{report.target}_ls{_fmt(report.L_S)}_n1{_fmt(report.N_1)}"
    json_path = out / f"{stem}.json"
    json_path.write_text(report.to_json() + "\n")
    csv_path = out / f"{stem}_branches.csv"
    columns = ("branch", "rating", "pre_P", "pre_Q", "pre_S", "post_P", "post_Q", "post_S",
               "pre_overloaded", "post_overloaded")
    csv_path.write_text(_csv_text(columns, report.branch_rows()))
    return [json_path, csv_path]


__all__ = [
    "AGGREGATE_COLUMNS", "Aggregate", "ConsequenceReport", "DEFAULT_L_S", "RECORD_COLUMNS",
    "ScenarioConfig", "ScenarioRecord", "ScenarioResult", "aggregate", "emit",
    "emit_consequence", "load_records", "load_result", "run_consequence", "run_sweep",
]
