"""
Lyapunov functionals, conserved quantities and trajectory checkers.

Every check works from stored states and records; nothing is accumulated
incrementally during integration.
"""
from dataclasses import asdict, dataclass
from typing import TYPE_CHECKING, Dict, Optional

import numpy as np

from projflow.engine import equilibrium
from projflow.engine.errors import ConeViolationError, DimensionError, DomainError
from projflow.engine.measure import Field, Partition, check_partition, inner, norm
from projflow.engine.projection import Projector

if TYPE_CHECKING:
    from projflow.engine.dynamics import System, Trajectory

TRAJECTORY_COLUMNS = ["t", "Gamma", "V_a", "V_b", "beta", "min_y", "max_y", "dist_M"]
MONOTONICITY_SLACK = 1e-12


@dataclass(frozen=True)
class DiagnosticRecord:

    t: float
    gamma: float
    v_a: float
    v_b: float
    beta: float
    min_y: float
    max_y: float
    dist_m: float

    def as_row(self) -> Dict[str, float]:
        return dict(zip(TRAJECTORY_COLUMNS, asdict(self).values()))


@dataclass(frozen=True, eq=False)
class ReferenceEquilibrium:
    """Positive equilibrium ytilde = a + gamma_ref n used by the entropy functional."""

    gamma_ref: float
    ytilde: Field

    @classmethod
    def default(cls, sys: "System") -> "ReferenceEquilibrium":
        xi_min = equilibrium.cone(sys.a, sys.n).xi_min
        return cls.at(max(xi_min + 1.0, 2.0 * abs(xi_min) + 1.0), sys)

    @classmethod
    def at(cls, gamma_ref: float, sys: "System") -> "ReferenceEquilibrium":
        return cls(gamma_ref=gamma_ref, ytilde=equilibrium.equilibrium_field(gamma_ref, sys))


# ---------- functionals ----------

def v_a(y: Field, ref: ReferenceEquilibrium, p: Partition) -> float:
    check_partition(y, p)
    if np.any(y.values <= 0):
        raise DomainError("V_a is only defined on strictly positive fields")
    ratio = y.values / ref.ytilde.values
    return float(np.sum(p.weights * ref.ytilde.values * (ratio - np.log(ratio))))


def dist_to_manifold(y: Field, sys: "System") -> float:
    return norm(sys.projector.project(y - sys.a), sys.partition, "L2")


def v_b(y: Field, sys: "System") -> float:
    return _square(dist_to_manifold(y, sys))


def _square(x: float) -> float:
    # same rounding as the elementwise square of the dist_M column
    return x * x


def dissipation_rate(y: Field, sys: "System") -> float:
    """d/dt V_b along the flow: -2 || y^(1/2) P(y - a) ||^2."""
    if np.any(y.values < 0):
        raise ConeViolationError("y", np.flatnonzero(y.values < 0))
    w = sys.projector.project(y - sys.a).values
    return float(-2.0 * np.sum(sys.partition.weights * y.values * w ** 2))


def beta(y: Field, P: Projector, p: Partition) -> float:
    return inner(y, P.n, p)


def record(t: float, y: Field, sys: "System", ref: ReferenceEquilibrium) -> DiagnosticRecord:

    p = sys.partition
    dist = dist_to_manifold(y, sys)

    return DiagnosticRecord(
        t=float(t),
        gamma=equilibrium.gamma(y, sys.n, p),
        v_a=v_a(y, ref, p),
        v_b=_square(dist),
        beta=beta(y, sys.projector, p),
        min_y=float(y.values.min()),
        max_y=float(y.values.max()),
        dist_m=dist,
    )


# ---------- reports ----------

@dataclass(frozen=True)
class EntropyIdentityReport:
    max_defect: float
    worst_time: float


@dataclass(frozen=True)
class ComparisonReport:
    holds: bool
    worst_violation: float
    worst_time: float
    worst_cell: int
    max_gap: float


@dataclass(frozen=True)
class MonotonicityReport:
    column: str
    violations: int
    worst: float


@dataclass(frozen=True)
class EnvelopeReport:
    holds: bool
    K: float
    worst_excess: float
    worst_time: float


# ---------- checkers ----------

def entropy_identity_check(traj: "Trajectory") -> EntropyIdentityReport:
    """
    Centered difference of V_a against -V_b at interior records, relative to
    max(1, V_b).
    """

    if len(traj) < 3:
        raise ValueError("entropy identity check needs at least 3 records")

    t = traj.times
    va = traj.column("V_a")
    vb = traj.column("V_b")

    dva = (va[2:] - va[:-2]) / (t[2:] - t[:-2])
    defect = np.abs(dva + vb[1:-1]) / np.maximum(1.0, vb[1:-1])
    k = int(np.argmax(defect))

    return EntropyIdentityReport(max_defect=float(defect[k]), worst_time=float(t[k + 1]))


def comparison_check(traj_y: "Trajectory", traj_z: "Trajectory", tol: float = 1e-10) -> ComparisonReport:
    """Componentwise y(t) >= z(t) - tol at every shared record."""

    if traj_y.states.shape != traj_z.states.shape or not np.array_equal(traj_y.times, traj_z.times):
        raise DimensionError("comparison needs trajectories on the same time grid and partition")

    gap = traj_y.states - traj_z.states
    k, i = np.unravel_index(int(np.argmin(gap)), gap.shape)
    worst = float(max(0.0, -gap[k, i]))

    return ComparisonReport(
        holds=bool(worst <= tol),
        worst_violation=worst,
        worst_time=float(traj_y.times[k]),
        worst_cell=int(i),
        max_gap=float(np.max(np.abs(gap))),
    )


def monotonicity_check(traj: "Trajectory", column: str, slack: float = MONOTONICITY_SLACK) -> MonotonicityReport:
    """Counts consecutive-record increases beyond slack * (1 + |value|)."""

    values = traj.column(column)
    increase = values[1:] - values[:-1]
    allowed = slack * (1.0 + np.abs(values[:-1]))
    excess = increase - allowed
    bad = excess > 0

    return MonotonicityReport(
        column=column,
        violations=int(bad.sum()),
        worst=float(increase[bad].max()) if bad.any() else 0.0,
    )


def gamma_drift(traj: "Trajectory") -> float:
    g = traj.column("Gamma")
    return float(np.max(np.abs(g - g[0])))


def tail_floor(traj: "Trajectory", fraction: float = 0.25) -> float:
    """Min of min_y over the last `fraction` of records."""
    min_y = traj.column("min_y")
    start = min(len(min_y) - 1, int(np.floor((1.0 - fraction) * len(min_y))))
    return float(min_y[start:].min())


def envelope_check(
    traj: "Trajectory",
    sys: "System",
    K: float,
    tol: float = 1e-9,
    upper: bool = True,
) -> EnvelopeReport:
    """y(t) <= a + K n + tol (upper) or y(t) >= a + K n - tol on every record."""

    envelope = sys.a.values + K * sys.n.values
    excess = traj.states - envelope if upper else envelope - traj.states
    k, i = np.unravel_index(int(np.argmax(excess)), excess.shape)
    worst = float(excess[k, i])

    return EnvelopeReport(holds=bool(worst <= tol), K=K, worst_excess=worst, worst_time=float(traj.times[k]))


def floor_check(traj: "Trajectory", floor: float) -> bool:
    return bool(np.all(traj.column("min_y") >= floor))


def beta_bounds(traj: "Trajectory", sys: "System", K: Optional[float] = None) -> bool:
    """0 < beta(t) <= (a + K n, n) on every record."""

    if K is None:
        K = equilibrium.k_bound(traj.state(0), sys)
    upper = inner(sys.a + K * sys.n, sys.n, sys.partition)
    b = traj.column("beta")
    return bool(np.all(b > 0) and np.all(b <= upper * (1.0 + 1e-12) + 1e-12))
