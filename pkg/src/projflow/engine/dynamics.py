"""
Right-hand side and fixed-step time integration of dy/dt = y P(a - y).

The primary scheme integrates u = log y with classical RK4. Every stage
derivative P(a - exp(u)) lies in the range of P, hence is orthogonal to n in
the weighted inner product, so Gamma(y) = (n, log y) is carried exactly up to
rounding and positivity of y = exp(u) holds by construction. The direct
scheme integrates y itself and is kept as an independent cross-check.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Optional, Union

import numpy as np
import pandas as pd

from projflow.engine import diagnostics
from projflow.engine.errors import ConeViolationError, ConvergenceError, DomainError, StepSizeError
from projflow.engine.measure import Field, Partition, check_partition, norm
from projflow.engine.projection import Projector

logger = logging.getLogger(__name__)

METHODS = ("log_rk4", "direct_rk4")
DEFAULT_STEP = 0.01
DEFAULT_STRIDE = 10
PICARD_MAX_SWEEPS = 200
FORCING_TOLERANCE = 1e-12
UNDERFLOW = "state underflowed to zero"


@dataclass(frozen=True, eq=False)
class System:

    projector: Projector
    a: Field

    @classmethod
    def build(cls, projector: Projector, a_raw: Field) -> "System":
        """Projects the forcing once so that P(a) = a holds to rounding."""

        a = projector.project(a_raw)
        residual = norm(a - projector.project(a), projector.partition)
        if residual > FORCING_TOLERANCE * max(norm(a, projector.partition), 1e-300):
            raise DomainError(f"projected forcing is not P-invariant (residual {residual:.3e})")

        return cls(projector=projector, a=a)

    @property
    def partition(self) -> Partition:
        return self.projector.partition

    @property
    def n(self) -> Field:
        return self.projector.n

    # ---------- array kernels ----------

    def log_drift(self, u: np.ndarray) -> np.ndarray:
        return self.projector.project_values(self.a.values - np.exp(u))

    def drift(self, y: np.ndarray) -> np.ndarray:
        return y * self.projector.project_values(self.a.values - y)


@dataclass(frozen=True, eq=False)
class Trajectory:

    times: np.ndarray
    states: np.ndarray
    diagnostics: pd.DataFrame
    partition: Partition
    metadata: Dict = field(default_factory=dict)

    def __len__(self):
        return self.times.size

    def state(self, k: int) -> Field:
        return Field(self.states[k], self.partition)

    @property
    def final(self) -> Field:
        return self.state(-1)

    def column(self, name: str) -> np.ndarray:
        return self.diagnostics[name].to_numpy()

    def to_csv(self, path: Union[str, Path]):
        self.diagnostics.to_csv(path, index=False, float_format="%.17g")

    def states_to_csv(self, path: Union[str, Path]):
        df = pd.DataFrame(self.states, columns=[f"y{i}" for i in range(self.partition.m)])
        df.insert(0, "t", self.times)
        df.to_csv(path, index=False, float_format="%.17g")


def _rk4(f: Callable[[np.ndarray], np.ndarray], x: np.ndarray, h: float) -> np.ndarray:

    k1 = f(x)
    k2 = f(x + 0.5 * h * k1)
    k3 = f(x + 0.5 * h * k2)
    k4 = f(x + h * k3)

    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _require_positive(y: Field, label: str = "y"):
    bad = np.flatnonzero(y.values <= 0)
    if bad.size:
        raise ConeViolationError(label, bad)


def rhs(sys: System, y: Field) -> Field:
    check_partition(y, sys.partition)
    return y * sys.projector.project(sys.a - y)


def step_log(sys: System, y: Field, h: float, t: float = 0.0) -> Field:
    """One RK4 step in u = log y; returns exp(u_new)."""

    check_partition(y, sys.partition)
    _require_positive(y)
    if h <= 0:
        raise ValueError(f"step size must be > 0, got {h}")

    try:
        with np.errstate(over="raise", invalid="raise"):
            u = _rk4(sys.log_drift, np.log(y.values), h)
            y_new = np.exp(u)
    except FloatingPointError as exc:
        raise StepSizeError(t, h) from exc
    if np.any(y_new == 0):
        raise StepSizeError(t, h, reason=UNDERFLOW)

    return Field(y_new, sys.partition)


def step_direct(sys: System, y: Field, h: float, t: float = 0.0) -> Field:
    """One RK4 step on y itself; positivity is not guaranteed."""

    check_partition(y, sys.partition)
    if h <= 0:
        raise ValueError(f"step size must be > 0, got {h}")

    try:
        with np.errstate(over="raise", invalid="raise"):
            y_new = _rk4(sys.drift, y.values, h)
    except FloatingPointError as exc:
        raise StepSizeError(t, h) from exc

    return Field(y_new, sys.partition)


def integrate(
    sys: System,
    y0: Field,
    T: float,
    h: float = DEFAULT_STEP,
    stride: int = DEFAULT_STRIDE,
    method: str = "log_rk4",
    reference: Optional["diagnostics.ReferenceEquilibrium"] = None,
) -> Trajectory:

    check_partition(y0, sys.partition)
    _require_positive(y0, "y0")

    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    if T <= 0 or h <= 0 or h > T:
        raise ValueError(f"need 0 < h <= T, got h={h}, T={T}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")

    n_steps = max(1, int(round(T / h)))
    dt = T / n_steps
    use_log = method == "log_rk4"

    logger.info("integrating %s: T=%g, %d steps of %g, stride %d", method, T, n_steps, dt, stride)

    times = [0.0]
    states = [y0.values.copy()]
    metadata = {
        "method": method,
        "h": dt,
        "steps": n_steps,
        "stride": stride,
        "positivity_lost": False,
        "positivity_lost_at": None,
    }

    x = np.log(y0.values) if use_log else y0.values.copy()
    f = sys.log_drift if use_log else sys.drift

    for k in range(1, n_steps + 1):

        t = k * dt
        try:
            with np.errstate(over="raise", invalid="raise"):
                x = _rk4(f, x, dt)
                y = np.exp(x) if use_log else x
        except FloatingPointError as exc:
            raise StepSizeError(t, dt) from exc

        if use_log and np.any(y == 0):
            raise StepSizeError(t, dt, reason=UNDERFLOW)

        if not use_log and np.any(y <= 0):
            logger.warning("direct_rk4 left the positive cone at t=%g", t)
            metadata["positivity_lost"] = True
            metadata["positivity_lost_at"] = t
            break

        if k % stride == 0 or k == n_steps:
            times.append(t)
            states.append(y.copy())

    states = np.vstack(states)
    times = np.asarray(times)

    if reference is None:
        reference = diagnostics.ReferenceEquilibrium.default(sys)

    rows = [
        diagnostics.record(t, Field(state, sys.partition), sys, reference).as_row()
        for t, state in zip(times, states)
    ]
    frame = pd.DataFrame(rows, columns=diagnostics.TRAJECTORY_COLUMNS)

    logger.info("finished %s at t=%g with %d records", method, times[-1], times.size)

    return Trajectory(
        times=times,
        states=states,
        diagnostics=frame,
        partition=sys.partition,
        metadata=metadata,
    )


def picard_reference(
    sys: System,
    y0: Field,
    T: float,
    quad_steps: int = 4096,
    tol: float = 1e-12,
    max_sweeps: int = PICARD_MAX_SWEEPS,
) -> Field:
    """
    Fixed-point iteration of y(t) = y0 exp(int_0^t P(a - y(s)) ds) with the
    trapezoid rule on quad_steps uniform time nodes. Returns y(T).
    """

    check_partition(y0, sys.partition)
    _require_positive(y0, "y0")

    if T == 0:
        return y0
    if T < 0:
        raise ValueError("only forward time is supported")
    if quad_steps < 1:
        raise ValueError(f"quad_steps must be >= 1, got {quad_steps}")

    dt = T / quad_steps
    Y = np.tile(y0.values, (quad_steps + 1, 1))
    residual = np.inf

    for sweep in range(1, max_sweeps + 1):

        G = sys.projector.project_values(sys.a.values - Y)
        integral = np.zeros_like(Y)
        integral[1:] = np.cumsum(0.5 * dt * (G[:-1] + G[1:]), axis=0)

        with np.errstate(over="raise"):
            try:
                Y_new = y0.values * np.exp(integral)
            except FloatingPointError as exc:
                raise ConvergenceError(np.inf, sweep) from exc

        residual = float(np.max(np.abs(Y_new - Y)))
        Y = Y_new
        logger.debug("picard sweep %d: residual %.3e", sweep, residual)

        if residual <= tol:
            return Field(Y[-1], sys.partition)

    raise ConvergenceError(residual, max_sweeps)
