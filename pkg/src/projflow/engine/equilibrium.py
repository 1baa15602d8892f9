"""
Equilibrium manifold analysis.

Equilibria in the positive cone are a + xi n with xi in the open interval
(xi_min, inf). Gamma(y) = (n, log y) is conserved by the flow, so the limit
equilibrium (when it exists) is a + alpha n with Phi(alpha) = Gamma(y0), where
Phi(xi) = (n, log(a + xi n)) is strictly increasing.
"""
import logging
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Tuple, Union

import numpy as np

from projflow.engine.errors import ConeViolationError, DomainError, SolverError
from projflow.engine.measure import Field, Partition, check_partition

if TYPE_CHECKING:
    from projflow.engine.dynamics import System

logger = logging.getLogger(__name__)

NEWTON_TOLERANCE = 1e-12
NEWTON_MAX_ITERATIONS = 100
BRACKET_OFFSET = 1e-12
MAX_EXPANSIONS = 1000
SMALLEST_GAP = np.finfo(np.float64).tiny


@dataclass(frozen=True)
class ConeInterval:
    """Admissible coefficients (xi_min, +inf) for positive equilibria a + xi n."""

    xi_min: float

    def __contains__(self, xi: float) -> bool:
        return xi > self.xi_min


@dataclass(frozen=True)
class AlphaSolution:

    alpha: float
    gap: float
    residual: float
    iterations: int
    bracket: Tuple[float, float]


@dataclass(frozen=True)
class NoRoot:
    """Phi stays above the target on the whole admissible interval."""

    target: float
    phi_floor: float
    xi_min: float


def gamma(y: Field, n: Field, p: Partition) -> float:
    check_partition(y, p)
    check_partition(n, p)
    if np.any(y.values <= 0):
        raise DomainError("Gamma is only defined on strictly positive fields")
    return float(np.sum(p.weights * n.values * np.log(y.values)))


def cone(a: Field, n: Field) -> ConeInterval:
    if np.any(n.values <= 0):
        raise ConeViolationError("n", np.flatnonzero(n.values <= 0))
    return ConeInterval(xi_min=float(np.max(-a.values / n.values)))


def phi(xi: float, a: Field, n: Field, p: Partition) -> float:
    s = _shifted(xi, a, n, p)
    return float(np.sum(p.weights * n.values * np.log(s)))


def phi_prime(xi: float, a: Field, n: Field, p: Partition) -> float:
    s = _shifted(xi, a, n, p)
    return float(np.sum(p.weights * n.values ** 2 / s))


def _shifted(xi: float, a: Field, n: Field, p: Partition) -> np.ndarray:
    check_partition(a, p)
    check_partition(n, p)
    interval = cone(a, n)
    if xi not in interval:
        raise DomainError(f"xi={xi!r} is outside the admissible interval ({interval.xi_min!r}, inf)")
    return a.values + xi * n.values


class _GapPhi:
    """
    Phi as a function of s = log(xi - xi_min).

    Residuals r = a + xi_min n are formed once with the arg-max cell pinned to
    zero, so gaps far below one ulp of xi_min stay representable.
    """

    def __init__(self, a: Field, n: Field, p: Partition):

        ratios = -a.values / n.values
        j = int(np.argmax(ratios))
        self.xi_min = float(ratios[j])

        r = a.values + self.xi_min * n.values
        r[j] = 0.0
        self.r = np.maximum(r, 0.0)
        self.wn = p.weights * n.values
        self.n = n.values

    def __call__(self, s: float) -> Tuple[float, float]:
        delta = math.exp(s)
        shifted = self.r + delta * self.n
        value = float(np.sum(self.wn * np.log(shifted)))
        slope = float(np.sum(self.wn * self.n * delta / shifted))
        return value, slope


def solve_alpha(y0: Field, sys: "System") -> Union[AlphaSolution, NoRoot]:
    """
    Unique alpha > xi_min with Phi(alpha) = Gamma(y0), by Newton on the log-gap
    safeguarded with bisection inside a maintained bracket.
    """

    p, a, n = sys.partition, sys.a, sys.n
    target = gamma(y0, n, p)
    f = _GapPhi(a, n, p)

    # ---------- bracket ----------

    s0 = math.log(BRACKET_OFFSET * (1.0 + abs(f.xi_min)))
    value, _ = f(s0)

    if value < target:
        s_lo, s_hi = s0, s0 + math.log(2.0)
        expansions = 0
        while f(s_hi)[0] < target:
            s_lo, s_hi = s_hi, s_hi + math.log(2.0)
            expansions += 1
            if expansions > MAX_EXPANSIONS:
                raise SolverError("Phi never reached the target to the right", (s_lo, s_hi))
    else:
        s_lo, s_hi = s0 - 1.0, s0
        step = 1.0
        s_floor = math.log(SMALLEST_GAP)
        while f(s_lo)[0] >= target:
            if s_lo <= s_floor:
                floor_value = f(s_floor)[0]
                logger.info("no root: Phi >= %.6g at the smallest gap, target %.6g", floor_value, target)
                return NoRoot(target=target, phi_floor=floor_value, xi_min=f.xi_min)
            step *= 2.0
            s_hi, s_lo = s_lo, max(s_lo - step, s_floor)

    logger.debug("alpha bracket in log-gap: [%g, %g]", s_lo, s_hi)

    # ---------- safeguarded Newton ----------

    s = 0.5 * (s_lo + s_hi)
    for iteration in range(1, NEWTON_MAX_ITERATIONS + 1):

        value, slope = f(s)
        residual = value - target

        if abs(residual) <= NEWTON_TOLERANCE:
            gap = math.exp(s)
            return AlphaSolution(
                alpha=max(f.xi_min + gap, float(np.nextafter(f.xi_min, np.inf))),
                gap=gap,
                residual=abs(residual),
                iterations=iteration,
                bracket=(f.xi_min + math.exp(s_lo), f.xi_min + math.exp(s_hi)),
            )

        if residual < 0:
            s_lo = s
        else:
            s_hi = s

        candidate = s - residual / slope if slope > 0 else math.nan
        if not (s_lo < candidate < s_hi):
            candidate = 0.5 * (s_lo + s_hi)
        if candidate == s:
            break
        s = candidate

    raise SolverError(
        f"Newton did not reach |Phi - Gamma| <= {NEWTON_TOLERANCE:g} in {NEWTON_MAX_ITERATIONS} iterations",
        (f.xi_min + math.exp(s_lo), f.xi_min + math.exp(s_hi)),
    )


def k_bound(y0: Field, sys: "System") -> float:
    """Smallest K with y0 <= a + K n: the upper comparison envelope."""
    check_partition(y0, sys.partition)
    return float(np.max((y0.values - sys.a.values) / sys.n.values))


def k_lower(y0: Field, sys: "System") -> float:
    """Largest K with y0 >= a + K n; a lower envelope when K > xi_min."""
    check_partition(y0, sys.partition)
    return float(np.min((y0.values - sys.a.values) / sys.n.values))


def equilibrium_field(xi: float, sys: "System") -> Field:
    interval = cone(sys.a, sys.n)
    if xi not in interval:
        raise DomainError(f"xi={xi!r} is outside the admissible interval ({interval.xi_min!r}, inf)")
    return sys.a + xi * sys.n


def phi_gap(gap: float, sys: "System") -> float:
    """Phi(xi_min + gap) evaluated from the gap, valid below one ulp of xi_min."""
    if not gap > 0:
        raise DomainError(f"gap must be > 0, got {gap!r}")
    value, _ = _GapPhi(sys.a, sys.n, sys.partition)(math.log(gap))
    return value


def equilibrium_from_gap(gap: float, sys: "System") -> Field:
    """The equilibrium a + (xi_min + gap) n, formed from the pinned residuals."""
    if not gap > 0:
        raise DomainError(f"gap must be > 0, got {gap!r}")
    f = _GapPhi(sys.a, sys.n, sys.partition)
    return Field(f.r + gap * f.n, sys.partition)


def simple_function_floor(y0: Field, sys: "System") -> float:
    """
    Lower bound on ess inf y(t) for all t >= 0 when a and n are simple:
    exp((log c - log M) * int n / min_i(n_i mu_i)), c = ess inf y0,
    M = sup(a + K n). May underflow to 0 on fine partitions.
    """

    p, n = sys.partition, sys.n
    c = float(y0.values.min())
    if c <= 0:
        raise DomainError("y0 must be strictly positive")

    K = k_bound(y0, sys)
    M = float(np.max(sys.a.values + K * n.values))
    mass_n = float(np.sum(p.weights * n.values))
    smallest = float(np.min(p.weights * n.values))

    with np.errstate(under="ignore"):
        return float(np.exp((math.log(c) - math.log(M)) * mass_n / smallest))


def phi_table(sys: "System", xi_values) -> np.ndarray:
    """Phi and Phi' on a grid of admissible xi, as an (k, 3) array."""
    p, a, n = sys.partition, sys.a, sys.n
    rows = [(xi, phi(xi, a, n, p), phi_prime(xi, a, n, p)) for xi in xi_values]
    return np.array(rows, dtype=np.float64).reshape(-1, 3)
