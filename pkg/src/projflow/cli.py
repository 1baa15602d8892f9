import json
import logging
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, List, Optional

import pandas as pd
import typer

from projflow.app import runner
from projflow.engine.errors import (
    ConeViolationError,
    ConfigError,
    ConvergenceError,
    DimensionError,
    DomainError,
    SolverError,
    StepSizeError,
)
from projflow.engine.scenarios import Scenario

app = typer.Typer(help="Simulator and analysis toolkit for dy/dt = y P(a - y)")

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2

USAGE_ERRORS = (ConfigError, ConeViolationError, DimensionError, DomainError, FileNotFoundError)
NUMERICAL_ERRORS = (StepSizeError, ConvergenceError, SolverError)


@app.callback()
def main(
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Log progress at INFO"),
    debug: bool = typer.Option(False, "--debug", help="Log at DEBUG"),
):
    level = logging.DEBUG if debug else logging.INFO if verbose else logging.WARNING
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(levelname)s %(message)s")


@contextmanager
def _exit_codes():
    try:
        yield
    except USAGE_ERRORS as exc:
        typer.echo(f"error: {exc}", err=True)
        raise typer.Exit(EXIT_USAGE)
    except NUMERICAL_ERRORS as exc:
        typer.echo(f"failed: {exc}", err=True)
        raise typer.Exit(EXIT_CHECK_FAILED)


def _scenario(
    builtin: Optional[str],
    config: Optional[Path],
    constants: Optional[Path],
    m: Optional[int] = None,
    T: Optional[float] = None,
    h: Optional[float] = None,
    stride: Optional[int] = None,
    method: Optional[str] = None,
    out: Optional[Path] = None,
) -> Scenario:

    scenario = runner.load_scenario(builtin, config, constants)
    return scenario.with_overrides(
        m=m,
        T=T,
        h=h,
        stride=stride,
        method=method,
        out=str(out) if out is not None else None,
    )


def _display_summary(title: str, summary: Dict[str, Any]):

    rows = [
        {"key": k, "value": v}
        for k, v in summary.items()
        if not isinstance(v, dict)
    ]
    df = pd.DataFrame(rows).set_index("key")

    typer.echo()
    typer.echo(title)
    typer.echo("=" * len(title))
    with pd.option_context("display.max_rows", None, "display.float_format", "{:.6g}".format):
        typer.echo(df)


def _display_checks(checks: List[runner.Check]):

    df = pd.DataFrame([
        {"check": c.name, "result": "ok" if c.passed else "FAILED", "detail": c.detail}
        for c in checks
    ])

    typer.echo()
    typer.echo("Checks")
    typer.echo("======")
    with pd.option_context("display.max_colwidth", None):
        typer.echo(df.to_string(index=False))


def _parse_z0(text: Optional[str]) -> Optional[Dict[str, Any]]:
    if text is None:
        return None
    try:
        return {"kind": "constant", "value": float(text)}
    except ValueError:
        pass
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"--z0 must be a number or a JSON field spec: {exc}") from exc


@app.command()
def run(
    builtin: Optional[str] = typer.Option(None, "--builtin", "-b", help="Built-in scenario name"),
    config: Optional[Path] = typer.Option(None, "--config", "-f", help="Scenario JSON file"),
    constants: Path = typer.Option(Path("runs/constants.json"), "--constants", "-c"),
    m: Optional[int] = typer.Option(None, "--m", help="Cell count override"),
    T: Optional[float] = typer.Option(None, "--T", help="Final time override"),
    h: Optional[float] = typer.Option(None, "--h", help="Step size override"),
    stride: Optional[int] = typer.Option(None, "--stride", help="Record every STRIDE steps"),
    method: Optional[str] = typer.Option(None, "--method", help="log_rk4 | direct_rk4"),
    out: Optional[Path] = typer.Option(None, "--out", help="Output directory"),
    tol_scale: float = typer.Option(1.0, "--tol-scale", help="Multiplies every check tolerance"),
    states: bool = typer.Option(False, "--states", help="Also write the full-state CSV"),
):
    """Integrate a scenario, write trajectory.csv and summary.json, and check the invariants."""

    with _exit_codes():
        scenario = _scenario(builtin, config, constants, m, T, h, stride, method, out)
        typer.echo(f"Running scenario: {scenario.name}")
        result = runner.run_scenario(scenario, tol_scale=tol_scale)
        runner.write_run(result, Path(scenario.output.dir), states=states or scenario.output.states)

    _display_summary("Summary", result.summary.to_dict())
    _display_checks(result.checks)

    if not result.passed:
        failed = ", ".join(c.name for c in result.checks if not c.passed)
        typer.echo(f"violated: {failed}", err=True)
        raise typer.Exit(EXIT_CHECK_FAILED)


@app.command()
def analyze(
    builtin: Optional[str] = typer.Option(None, "--builtin", "-b", help="Built-in scenario name"),
    config: Optional[Path] = typer.Option(None, "--config", "-f", help="Scenario JSON file"),
    constants: Path = typer.Option(Path("runs/constants.json"), "--constants", "-c"),
    m: Optional[int] = typer.Option(None, "--m", help="Cell count override"),
    out: Optional[Path] = typer.Option(None, "--out", help="Output directory"),
):
    """Solve Phi(alpha) = Gamma(y0) without integrating; write summary.json and phi_table.csv."""

    with _exit_codes():
        scenario = _scenario(builtin, config, constants, m=m, out=out)
        result = runner.analyze_scenario(scenario)
        runner.write_analysis(result, Path(scenario.output.dir))

    _display_summary("Equilibrium analysis", result.summary)


@app.command()
def compare(
    builtin: Optional[str] = typer.Option(None, "--builtin", "-b", help="Built-in scenario name"),
    config: Optional[Path] = typer.Option(None, "--config", "-f", help="Scenario JSON file"),
    constants: Path = typer.Option(Path("runs/constants.json"), "--constants", "-c"),
    scale: Optional[float] = typer.Option(None, "--scale", help="Lower data z0 = scale * y0"),
    z0: Optional[str] = typer.Option(None, "--z0", help="Lower data as a number or JSON field spec"),
    envelope: bool = typer.Option(False, "--envelope", help="Compare y0 against the equilibrium a + K n"),
    m: Optional[int] = typer.Option(None, "--m", help="Cell count override"),
    T: Optional[float] = typer.Option(None, "--T", help="Final time override"),
    h: Optional[float] = typer.Option(None, "--h", help="Step size override"),
    stride: Optional[int] = typer.Option(None, "--stride", help="Record every STRIDE steps"),
    method: Optional[str] = typer.Option(None, "--method", help="log_rk4 | direct_rk4"),
    out: Optional[Path] = typer.Option(None, "--out", help="Output directory"),
    tol_scale: float = typer.Option(1.0, "--tol-scale", help="Multiplies the ordering tolerance"),
):
    """Run an ordered pair of trajectories and check that the ordering persists."""

    with _exit_codes():
        scenario = _scenario(builtin, config, constants, m, T, h, stride, method, out)
        result = runner.compare_scenario(
            scenario,
            scale=scale,
            z0_spec=_parse_z0(z0),
            envelope=envelope,
            tol=runner.COMPARISON_TOLERANCE * tol_scale,
        )
        runner.write_comparison(result, Path(scenario.output.dir))

    _display_summary("Comparison", result.summary)

    if not result.passed:
        raise typer.Exit(EXIT_CHECK_FAILED)


@app.command()
def sweep(
    builtin: Optional[str] = typer.Option(None, "--builtin", "-b", help="Built-in scenario name"),
    config: Optional[Path] = typer.Option(None, "--config", "-f", help="Scenario JSON file"),
    constants: Path = typer.Option(Path("runs/constants.json"), "--constants", "-c"),
    ms: List[int] = typer.Option([128, 512, 2048], "--m", help="Cell counts (repeatable)"),
    T: Optional[float] = typer.Option(None, "--T", help="Final time override"),
    h: Optional[float] = typer.Option(None, "--h", help="Step size override"),
    stride: Optional[int] = typer.Option(None, "--stride", help="Record every STRIDE steps"),
    out: Optional[Path] = typer.Option(None, "--out", help="Output directory"),
):
    """Repeat a scenario over several cell counts and check the degenerate-regime trends."""

    with _exit_codes():
        scenario = _scenario(builtin, config, constants, T=T, h=h, stride=stride, out=out)
        table = runner.sweep_scenario(scenario, ms)
        checks = runner.sweep_checks(table)
        runner.write_sweep(table, checks, Path(scenario.output.dir))

    typer.echo()
    typer.echo("Sweep")
    typer.echo("=====")
    typer.echo(table.to_string(index=False))
    _display_checks(checks)

    if not all(c.passed for c in checks):
        raise typer.Exit(EXIT_CHECK_FAILED)


if __name__ == "__main__":
    app()
