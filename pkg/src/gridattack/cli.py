"""Command line: ``gridattack sweep | consequence | export-mps | validate-case``."""

from __future__ import annotations

import math
import sys
from pathlib import Path

import click

from .bilevel import Baseline, build_attack_milp
from .errors import CaseFormatError, NetworkValidationError
from .harness import ScenarioConfig, _number, emit, emit_consequence, run_consequence, run_sweep
from .milp import export_mps
from .network import load_case, validate


def _config(path: str | None, seed: int | None, out: str | None) -> ScenarioConfig:
    cfg = ScenarioConfig.from_yaml(Path(path)) if path else ScenarioConfig()
    if seed is not None:
        cfg.seed = seed
    if out is not None:
        cfg.out = out
    return cfg


config_option = click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
                             help="YAML scenario file (see README for the schema).")
out_option = click.option("--out", default=None, help="Output directory (overrides the config).")
seed_option = click.option("--seed", type=int, default=None, help="Noise seed (overrides the config).")


@click.group()
def main():
    """Worst-case line-overload attacks on state estimation."""


@main.command()
@config_option
@out_option
@click.option("--jobs", type=int, default=1, show_default=True, help="Parallel target chains.")
@seed_option
@click.option("--format", "fmt", type=click.Choice(["csv", "json", "both"]), default="both", show_default=True)
def sweep(config_path, out, jobs, seed, fmt):
    """Solve the attack program for every (target, L_S, N_1) tuple."""
    cfg = _config(config_path, seed, out)
    result = run_sweep(cfg, jobs=max(1, jobs))
    for kind in (("csv", "json") if fmt == "both" else (fmt,)):
        for path in emit(result, kind, cfg.out):
            click.echo(f"wrote {path}")
    failed = [r for r in result.records if r.error]
    for r in failed:
        click.echo(f"tuple {r.key} failed: {r.error}", err=True)
    sys.exit(1 if failed else 0)


@main.command()
@config_option
@out_option
@click.option("--jobs", type=int, default=1, help="Accepted for symmetry; runs are sequential.")
@seed_option
@click.option("--target", type=int, required=True, help="Target branch, 1-based.")
@click.option("--ls", "L_S", type=float, required=True, help="Load-shift fraction.")
@click.option("--n1", "N_1", multiple=True, help="l1 budget(s); default is the config's N_1 grid.")
def consequence(config_path, out, jobs, seed, target, L_S, N_1):
    """Attack, estimate, redispatch, and evaluate the AC flows."""
    cfg = _config(config_path, seed, out)
    budgets = [_number(v) for v in N_1] or cfg.N_1
    failed = False
    for budget in budgets:
        report = run_consequence(cfg, target, L_S, budget)
        for path in emit_consequence(report, cfg.out):
            click.echo(f"wrote {path}")
        if report.ok:
            click.echo(
                f"N_1={budget}: P_target={report.P_target:.4f} AC P={report.target_P:.4f} "
                f"S={report.target_S:.4f} J={report.J:.2f} pass={report.detector_pass} "
                f"overloaded={report.overloaded_branches}"
            )
        else:
            failed = True
            click.echo(f"N_1={budget}: failed at {report.stage}: {report.error}", err=True)
    sys.exit(1 if failed else 0)


@main.command("export-mps")
@config_option
@click.option("--target", type=int, required=True)
@click.option("--ls", "L_S", type=float, required=True)
@click.option("--n1", "N_1", default="inf", show_default=True)
@click.option("--out", default=None, help="MPS file path; stdout when omitted.")
def export_mps_cmd(config_path, target, L_S, N_1, out):
    """Write one attack program in fixed-format MPS."""
    cfg = _config(config_path, None, None)
    net = cfg.network()
    model = build_attack_milp(net, cfg.spec(target, L_S, _number(N_1)), Baseline.of(net))
    n1 = "INF" if math.isinf(_number(N_1)) else N_1
    text = export_mps(model.milp, name=f"T{target}LS{L_S}N{n1}"[:8])
    if out:
        Path(out).write_text(text)
        click.echo(f"wrote {out}")
    else:
        click.echo(text, nl=False)


@main.command("validate-case")
@click.argument("case")
def validate_case(case):
    """Parse and check a case file (or a bundled case name)."""
    try:
        net = load_case(case)
        validate(net)
    except (CaseFormatError, NetworkValidationError, FileNotFoundError) as exc:
        click.echo(f"invalid: {exc}", err=True)
        sys.exit(1)
    click.echo(
        f"ok: {net.n_bus} buses, {net.n_branch} branches, {net.n_gen} generators, "
        f"{int(net.load_mask.sum())} load buses, slack bus {net.buses[net.slack].id}"
    )


if __name__ == "__main__":
    main()
