import json, re, time, logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from projflow.engine import diagnostics, equilibrium
from projflow.engine.dynamics import Trajectory, integrate
from projflow.engine.equilibrium import AlphaSolution
from projflow.engine.errors import ConfigError
from projflow.engine.scenarios import Scenario, builtin, materialize, materialize_z0

logger = logging.getLogger(__name__)

DRIFT_PER_STEP = 1e-14
MONOTONICITY_SLACK = 1e-12
ENVELOPE_TOLERANCE = 1e-9
COMPARISON_TOLERANCE = 1e-10
BETA_TOLERANCE = 1e-6
MANIFOLD_REACHED = 1e-8
TAIL_FLOOR_THRESHOLD = 1e-3


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str


@dataclass
class RunSummary:

    scenario: str
    scenario_hash: str
    method: str
    alpha_predicted: Optional[float]
    alpha_gap: Optional[float]
    no_root: bool
    xi_min: float
    K: float
    k_lower: float
    bounded_away: bool
    gamma_y0: float
    beta_final: float
    v_b_final: float
    dist_m_final: float
    gamma_drift_max: float
    va_violations: int
    va_worst: float
    vb_violations: int
    vb_worst: float
    min_y_final: float
    tail_floor: float
    positivity_floor: float
    positivity_lost: bool
    records: int
    wall_time: float
    checks: Dict[str, bool] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class RunResult:
    summary: RunSummary
    trajectory: Trajectory
    checks: List[Check]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


@dataclass
class AnalysisResult:
    summary: Dict[str, Any]
    phi_table: pd.DataFrame


@dataclass
class CompareResult:
    summary: Dict[str, Any]
    report: diagnostics.ComparisonReport
    trajectory_y: Trajectory
    trajectory_z: Trajectory

    @property
    def passed(self) -> bool:
        return self.report.holds


# ---------- loading ----------

def load_scenario(
    builtin_name: Optional[str] = None,
    config_file: Optional[Path] = None,
    constants_file: Optional[Path] = None,
) -> Scenario:

    if (builtin_name is None) == (config_file is None):
        raise ConfigError("specify exactly one of --builtin or --config")

    if builtin_name is not None:
        return builtin(builtin_name)

    return _load_scenario(config_file, constants_file)


def _load_scenario(scenario_file: Path, constants_file: Optional[Path]) -> Scenario:

    # Load scenario JSON
    with open(scenario_file, "r") as f:
        try:
            scenario = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{scenario_file}: {exc}") from exc

    # Load constants if provided
    if constants_file is not None and Path(constants_file).exists():
        with open(constants_file, "r") as f:
            constants = json.load(f)
    else:
        constants = {}

    # Recursively resolve constants in the scenario
    scenario = _resolve_refs(scenario, constants)

    return Scenario.from_dict(scenario)


def _resolve_refs(obj: Any, constants: Dict[str, Any]) -> Any:
    """Recursively replace ${constant.path} in the scenario dict, preserving types."""
    if isinstance(obj, dict):
        return {k: _resolve_refs(v, constants) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_resolve_refs(v, constants) for v in obj]
    if isinstance(obj, str):
        pattern = re.compile(r"\$\{([\w\.]+)\}")

        # If the entire string is a placeholder, return the actual type
        match_entire = pattern.fullmatch(obj)
        if match_entire:
            if match_entire.group(1) not in constants:
                raise ConfigError(f"undefined constant {match_entire.group(1)!r}")
            return constants[match_entire.group(1)]

        # Otherwise, replace placeholders inside a string
        def replacer(m):
            return str(constants.get(m.group(1), m.group(0)))

        return pattern.sub(replacer, obj)

    return obj


# ---------- run ----------

def run_scenario(scenario: Scenario, tol_scale: float = 1.0) -> RunResult:

    started = time.perf_counter()
    ig = scenario.integration
    logger.info("run %s (%s)", scenario.name, scenario.hash[:12])

    sys, y0 = materialize(scenario)
    p = sys.partition

    solution = equilibrium.solve_alpha(y0, sys)
    xi_min = equilibrium.cone(sys.a, sys.n).xi_min
    K = equilibrium.k_bound(y0, sys)
    K_low = equilibrium.k_lower(y0, sys)
    floor = equilibrium.simple_function_floor(y0, sys)
    gamma_y0 = equilibrium.gamma(y0, sys.n, p)

    traj = integrate(sys, y0, ig.T, ig.h, ig.stride, ig.method)

    drift = diagnostics.gamma_drift(traj)
    va = diagnostics.monotonicity_check(traj, "V_a", MONOTONICITY_SLACK * tol_scale)
    vb = diagnostics.monotonicity_check(traj, "V_b", MONOTONICITY_SLACK * tol_scale)
    upper = diagnostics.envelope_check(traj, sys, K, ENVELOPE_TOLERANCE * tol_scale)
    tail = diagnostics.tail_floor(traj)
    final = traj.diagnostics.iloc[-1]
    alpha = solution.alpha if isinstance(solution, AlphaSolution) else None

    checks = [
        Check(
            "positivity",
            bool(traj.column("min_y").min() > 0 and not traj.metadata["positivity_lost"]),
            f"min over records {traj.column('min_y').min():.3e}; lost at {traj.metadata['positivity_lost_at']}",
        ),
        Check("V_a non-increasing", bool(va.violations == 0), f"{va.violations} violations, worst {va.worst:.3e}"),
        Check("V_b non-increasing", bool(vb.violations == 0), f"{vb.violations} violations, worst {vb.worst:.3e}"),
        Check("upper envelope a + K n", bool(upper.holds), f"worst excess {upper.worst_excess:.3e} at t={upper.worst_time:g}"),
        Check("positivity floor", bool(diagnostics.floor_check(traj, floor)), f"floor {floor:.3e}"),
        Check("beta bounds", bool(diagnostics.beta_bounds(traj, sys, K)), f"K={K:.6g}"),
    ]

    if ig.method == "log_rk4":
        budget = traj.metadata["steps"] * DRIFT_PER_STEP * (1.0 + abs(gamma_y0)) * tol_scale
        checks.append(Check("Gamma conserved", bool(drift <= budget), f"drift {drift:.3e}, budget {budget:.3e}"))

    if alpha is not None and final["V_b"] < MANIFOLD_REACHED and tail > TAIL_FLOOR_THRESHOLD:
        gap = abs(final["beta"] - alpha)
        checks.append(Check("beta -> alpha", bool(gap < BETA_TOLERANCE * tol_scale), f"|beta - alpha| = {gap:.3e}"))

    for check in checks:
        if not check.passed:
            logger.warning("check failed: %s (%s)", check.name, check.detail)

    summary = RunSummary(
        scenario=scenario.name,
        scenario_hash=scenario.hash,
        method=ig.method,
        alpha_predicted=alpha,
        alpha_gap=solution.gap if alpha is not None else None,
        no_root=alpha is None,
        xi_min=xi_min,
        K=K,
        k_lower=K_low,
        bounded_away=bool(K_low > xi_min),
        gamma_y0=gamma_y0,
        beta_final=float(final["beta"]),
        v_b_final=float(final["V_b"]),
        dist_m_final=float(final["dist_M"]),
        gamma_drift_max=drift,
        va_violations=va.violations,
        va_worst=va.worst,
        vb_violations=vb.violations,
        vb_worst=vb.worst,
        min_y_final=float(final["min_y"]),
        tail_floor=tail,
        positivity_floor=floor,
        positivity_lost=bool(traj.metadata["positivity_lost"]),
        records=len(traj),
        wall_time=time.perf_counter() - started,
        checks={c.name: bool(c.passed) for c in checks},
    )

    return RunResult(summary=summary, trajectory=traj, checks=checks)


# ---------- analyze ----------

def analyze_scenario(scenario: Scenario) -> AnalysisResult:

    sys, y0 = materialize(scenario)
    p = sys.partition

    xi_min = equilibrium.cone(sys.a, sys.n).xi_min
    solution = equilibrium.solve_alpha(y0, sys)
    solved = isinstance(solution, AlphaSolution)

    span = max(1.0, abs(xi_min), solution.gap if solved else 0.0)
    grid = np.linspace(xi_min + 0.05 * span, xi_min + 2.0 * span, scenario.output.phi_grid)
    table = pd.DataFrame(equilibrium.phi_table(sys, grid), columns=["xi", "Phi", "Phi_prime"])

    summary = {
        "scenario": scenario.name,
        "scenario_hash": scenario.hash,
        "m": p.m,
        "xi_min": xi_min,
        "gamma_y0": equilibrium.gamma(y0, sys.n, p),
        "no_root": not solved,
        "alpha": solution.alpha if solved else None,
        "alpha_gap": solution.gap if solved else None,
        "residual": solution.residual if solved else None,
        "iterations": solution.iterations if solved else None,
        "phi_floor": None if solved else solution.phi_floor,
        "K": equilibrium.k_bound(y0, sys),
        "k_lower": equilibrium.k_lower(y0, sys),
    }

    return AnalysisResult(summary=summary, phi_table=table)


# ---------- compare ----------

def compare_scenario(
    scenario: Scenario,
    scale: Optional[float] = None,
    z0_spec: Optional[Dict[str, Any]] = None,
    envelope: bool = False,
    tol: float = COMPARISON_TOLERANCE,
) -> CompareResult:
    """
    Runs an upper trajectory y and a lower trajectory z on one time grid.

    The lower initial data comes from --scale, --z0, the scenario's z0, or, for
    the envelope run, the pair is (a + K n, y0) with K = k_bound(y0).
    """

    ig = scenario.integration
    sys, y0 = materialize(scenario)

    if envelope:
        K = equilibrium.k_bound(y0, sys)
        # a + K n can round below y0 in the arg-max cell
        while np.any(y0.values > (sys.a + K * sys.n).values):
            K = float(np.nextafter(K, np.inf))
        upper0 = equilibrium.equilibrium_field(K, sys)
        lower0 = y0
    else:
        upper0 = y0
        if scale is not None:
            if not 0 < scale:
                raise ConfigError(f"--scale must be > 0, got {scale}")
            lower0 = scale * y0
        elif z0_spec is not None:
            lower0 = materialize_z0(scenario.with_z0(z0_spec), sys, y0)
        else:
            lower0 = materialize_z0(scenario, sys, y0)
            if lower0 is None:
                raise ConfigError("no lower initial data: pass --scale or --z0, or declare scenario.z0")

    above = np.flatnonzero(lower0.values > upper0.values)
    if above.size:
        raise ConfigError(f"initial data are not ordered: z0 > y0 in cells {above[:10].tolist()}")

    with ThreadPoolExecutor(max_workers=2) as pool:
        futures = [pool.submit(integrate, sys, start, ig.T, ig.h, ig.stride, ig.method) for start in (upper0, lower0)]
        traj_y, traj_z = [f.result() for f in futures]

    report = diagnostics.comparison_check(traj_y, traj_z, tol)
    if not report.holds:
        logger.warning("ordering violated by %.3e at t=%g, cell %d", report.worst_violation, report.worst_time, report.worst_cell)

    summary = {
        "scenario": scenario.name,
        "scenario_hash": scenario.hash,
        "envelope": envelope,
        "tol": tol,
        **asdict(report),
    }

    return CompareResult(summary=summary, report=report, trajectory_y=traj_y, trajectory_z=traj_z)


# ---------- sweep ----------

def sweep_scenario(scenario: Scenario, ms: Sequence[int]) -> pd.DataFrame:
    """One run per cell count; rows ordered by m."""

    def one(m: int) -> Dict[str, Any]:
        s = scenario.with_overrides(m=m)
        sys, y0 = materialize(s)
        solution = equilibrium.solve_alpha(y0, sys)
        ig = s.integration
        traj = integrate(sys, y0, ig.T, ig.h, ig.stride, ig.method)
        final = traj.diagnostics.iloc[-1]
        solved = isinstance(solution, AlphaSolution)
        return {
            "m": m,
            "xi_min": equilibrium.cone(sys.a, sys.n).xi_min,
            "alpha": solution.alpha if solved else np.nan,
            "gap": solution.gap if solved else np.nan,
            "min_y_final": float(final["min_y"]),
            "beta_final": float(final["beta"]),
            "v_b_final": float(final["V_b"]),
        }

    with ThreadPoolExecutor() as pool:
        rows = list(pool.map(one, sorted(ms)))

    return pd.DataFrame(rows)


def sweep_checks(table: pd.DataFrame) -> List[Check]:

    gap = table["gap"].to_numpy()
    min_y = table["min_y_final"].to_numpy()

    return [
        Check("root exists for every m", bool(np.all(np.isfinite(gap))), f"gaps {gap.tolist()}"),
        Check("gap decreases with m", bool(np.all(np.diff(gap) < 0)), f"gaps {gap.tolist()}"),
        Check("final min_y decreases with m", bool(np.all(np.diff(min_y) < 0)), f"min_y {min_y.tolist()}"),
    ]


# ---------- artifacts ----------

def _to_json(value: Any) -> Any:
    # numpy scalars that json cannot encode natively
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    return float(value)


def _write_json(path: Path, payload: Dict[str, Any]):
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True, default=_to_json)


def write_run(result: RunResult, out_dir: Path, states: bool = False):
    out_dir.mkdir(parents=True, exist_ok=True)
    result.trajectory.to_csv(out_dir / "trajectory.csv")
    if states:
        result.trajectory.states_to_csv(out_dir / "states.csv")
    _write_json(out_dir / "summary.json", result.summary.to_dict())


def write_analysis(result: AnalysisResult, out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    result.phi_table.to_csv(out_dir / "phi_table.csv", index=False, float_format="%.17g")
    _write_json(out_dir / "summary.json", result.summary)


def write_comparison(result: CompareResult, out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    result.trajectory_y.to_csv(out_dir / "trajectory_y.csv")
    result.trajectory_z.to_csv(out_dir / "trajectory_z.csv")
    _write_json(out_dir / "summary.json", result.summary)


def write_sweep(table: pd.DataFrame, checks: List[Check], out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    table.to_csv(out_dir / "sweep.csv", index=False, float_format="%.17g")
    _write_json(out_dir / "summary.json", {"rows": table.to_dict(orient="records"), "checks": {c.name: c.passed for c in checks}})
