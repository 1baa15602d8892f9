import math

import numpy as np
import pytest

from conftest import random_system
from projflow.engine.dynamics import System
from projflow.engine.equilibrium import (
    AlphaSolution,
    NoRoot,
    cone,
    equilibrium_field,
    equilibrium_from_gap,
    gamma,
    k_bound,
    k_lower,
    phi,
    phi_gap,
    phi_prime,
    phi_table,
    simple_function_floor,
    solve_alpha,
)
from projflow.engine.errors import DomainError
from projflow.engine.measure import Partition, inner
from projflow.engine.projection import make_projector
from projflow.engine.scenarios import builtin, materialize


def two_cell_system(a) -> System:
    p = Partition.uniform(2)
    return System.build(make_projector(p.constant(1.0), p), p.field(a))


def sine_phi(xi: float) -> float:
    """Continuum value of int_0^1 log(xi + sin 2 pi x) dx for xi > 1."""
    return math.log(0.5 * (xi + math.sqrt(xi * xi - 1.0)))


# ---------- Gamma and the cone ----------

def test_gamma_of_exponentials():
    p = Partition.uniform(4)
    y = p.field(np.exp([0.0, 1.0, 2.0, 3.0]))
    assert gamma(y, p.constant(1.0), p) == pytest.approx(1.5, rel=1e-14)


@pytest.mark.parametrize("c", [1e-3, 0.4, 7.0])
def test_gamma_shifts_by_log_of_a_scale(rng, c):
    sys = random_system(rng)
    p = sys.partition
    y = p.field(rng.uniform(0.5, 4.0, p.m))
    mass = float(np.sum(p.weights * sys.n.values))

    assert gamma(c * y, sys.n, p) == pytest.approx(gamma(y, sys.n, p) + mass * math.log(c), abs=1e-12)


def test_gamma_needs_positive_field():
    p = Partition.uniform(2)
    with pytest.raises(DomainError):
        gamma(p.field([1.0, 0.0]), p.constant(1.0), p)


def test_sine_cone_is_just_below_one(sine):
    sys, _ = sine
    xi_min = cone(sys.a, sys.n).xi_min
    assert 1.0 - 1e-3 < xi_min < 1.0


def test_cone_with_positive_forcing_admits_negative_coefficients():
    p = Partition.uniform(2)
    interval = cone(p.field([0.5, 1.0]), p.constant(1.0))

    assert interval.xi_min == -0.5
    assert -0.4 in interval
    assert -0.5 not in interval


# ---------- Phi ----------

@pytest.mark.parametrize("xi", [1.05, 1.25, 2.0, 5.0])
def test_phi_matches_closed_form(sine, xi):
    sys, _ = sine
    p = sys.partition

    assert phi(xi, sys.a, sys.n, p) == pytest.approx(sine_phi(xi), abs=1e-10)
    assert phi_prime(xi, sys.a, sys.n, p) == pytest.approx(1.0 / math.sqrt(xi * xi - 1.0), rel=1e-10)


def test_phi_stays_above_minus_log_two(sine):
    sys, _ = sine
    values = phi_table(sys, np.linspace(1.05, 10.0, 50))[:, 1]
    assert np.all(values > -math.log(2.0))


def test_phi_is_increasing(rng):
    sys = random_system(rng)
    xi_min = cone(sys.a, sys.n).xi_min
    table = phi_table(sys, xi_min + np.geomspace(1e-6, 1e3, 60))

    assert table.shape == (60, 3)
    assert np.all(np.diff(table[:, 1]) > 0)
    assert np.all(table[:, 2] > 0)


def test_phi_prime_matches_finite_difference(rng):
    sys = random_system(rng)
    p = sys.partition
    xi = cone(sys.a, sys.n).xi_min + 0.7
    d = 1e-5

    fd = (phi(xi + d, sys.a, sys.n, p) - phi(xi - d, sys.a, sys.n, p)) / (2 * d)
    assert fd == pytest.approx(phi_prime(xi, sys.a, sys.n, p), rel=1e-7)


def test_phi_outside_cone_raises(sine):
    sys, _ = sine
    xi_min = cone(sys.a, sys.n).xi_min
    with pytest.raises(DomainError):
        phi(xi_min, sys.a, sys.n, sys.partition)
    with pytest.raises(DomainError):
        phi_prime(xi_min - 1.0, sys.a, sys.n, sys.partition)


# ---------- solve_alpha ----------

def test_sine_mean_alpha(sine):
    sys, y0 = sine
    solution = solve_alpha(y0, sys)

    assert isinstance(solution, AlphaSolution)
    assert solution.alpha == pytest.approx(1.25, abs=1e-9)
    assert solution.residual <= 1e-12
    assert solution.bracket[0] <= solution.alpha <= solution.bracket[1]


def test_flat_alpha_equals_initial_constant():
    sys, y0 = materialize(builtin("flat"))
    solution = solve_alpha(y0, sys)
    assert solution.alpha == pytest.approx(2.0, rel=1e-12)


@pytest.mark.parametrize("scale", [0.5, 3.0, 40.0])
def test_alpha_scales_with_data(rng, scale):
    sys = random_system(rng)
    p = sys.partition
    y0 = p.field(rng.uniform(0.5, 4.0, p.m))
    scaled = System.build(sys.projector, scale * sys.a)

    base = solve_alpha(y0, sys)
    stretched = solve_alpha(scale * y0, scaled)

    assert stretched.alpha == pytest.approx(scale * base.alpha, rel=1e-9)


def test_alpha_solves_the_conservation_equation(rng):
    sys = random_system(rng)
    p = sys.partition
    y0 = p.field(rng.uniform(0.5, 4.0, p.m))
    solution = solve_alpha(y0, sys)

    assert solution.alpha > cone(sys.a, sys.n).xi_min
    assert phi_gap(solution.gap, sys) == pytest.approx(gamma(y0, sys.n, p), abs=1e-11)


def test_subcritical_root_stays_inside_the_cone():
    sys, y0 = materialize(builtin("sine-subcritical"))
    solution = solve_alpha(y0, sys)
    assert solution.alpha in cone(sys.a, sys.n)
    assert phi_gap(solution.gap, sys) == pytest.approx(gamma(y0, sys.n, sys.partition), abs=1e-11)

    y = equilibrium_from_gap(solution.gap, sys)
    assert np.all(y.values > 0)
    assert y.values.min() <= solution.gap * sys.n.values.max()


def test_root_far_below_one_ulp_of_the_cone_edge():
    sys = two_cell_system([1.0, -1.0])
    # (2 + g) g = 2e-20 puts the root at g ~ 1e-20
    y0 = sys.partition.constant(math.sqrt(2e-20))

    solution = solve_alpha(y0, sys)

    assert solution.gap == pytest.approx(1e-20, rel=1e-9)
    assert solution.alpha == np.nextafter(1.0, 2.0)
    assert solution.alpha in cone(sys.a, sys.n)
    assert phi_gap(solution.gap, sys) == pytest.approx(gamma(y0, sys.n, sys.partition), abs=1e-11)
    np.testing.assert_allclose(equilibrium_from_gap(solution.gap, sys).values, [2.0, 1e-20], rtol=1e-9)


def test_gap_forms_reject_non_positive_gaps(sine):
    sys, _ = sine
    with pytest.raises(DomainError):
        phi_gap(0.0, sys)
    with pytest.raises(DomainError):
        equilibrium_from_gap(-1.0, sys)


def test_subcritical_gap_shrinks_with_resolution():
    gaps = []
    for m in (128, 512, 2048):
        sys, y0 = materialize(builtin("sine-subcritical").with_overrides(m=m))
        solution = solve_alpha(y0, sys)
        assert isinstance(solution, AlphaSolution)
        assert solution.gap > 0
        gaps.append(solution.gap)

    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[0] < 1e-6


def test_no_root_below_the_smallest_gap():
    sys = two_cell_system([1.0, -1.0])
    y0 = sys.partition.constant(1e-300)

    result = solve_alpha(y0, sys)

    assert isinstance(result, NoRoot)
    assert result.xi_min == 1.0
    assert result.phi_floor >= result.target


# ---------- envelopes, equilibria, floors ----------

def test_envelopes_of_an_equilibrium(rng):
    sys = random_system(rng)
    y0 = sys.a + 3.0 * sys.n

    assert k_bound(y0, sys) == pytest.approx(3.0, rel=1e-12)
    assert k_lower(y0, sys) == pytest.approx(3.0, rel=1e-12)


def test_envelopes_bracket_the_data(sine):
    sys, y0 = sine
    K, K_low = k_bound(y0, sys), k_lower(y0, sys)

    assert K == pytest.approx(1.0 + cone(sys.a, sys.n).xi_min, rel=1e-14)
    assert np.all(y0.values <= (sys.a + K * sys.n).values + 1e-15)
    assert np.all(y0.values >= (sys.a + K_low * sys.n).values - 1e-15)


def test_equilibrium_field(sine):
    sys, _ = sine
    y = equilibrium_field(1.25, sys)

    assert np.all(y.values > 0)
    assert inner(y, sys.n, sys.partition) == pytest.approx(1.25, rel=1e-13)
    with pytest.raises(DomainError):
        equilibrium_field(0.5, sys)


def test_simple_function_floor_two_cells():
    sys = two_cell_system([5.0, -5.0])
    y0 = sys.partition.field([1.0, 2.0])
    # c = 1, K = 7, M = 12, int n = 1, min n mu = 1/2
    assert simple_function_floor(y0, sys) == pytest.approx(1.0 / 144.0, rel=1e-12)


def test_simple_function_floor_bounds_the_run(sine, sine_mean_run):
    sys, y0 = sine
    floor = simple_function_floor(y0, sys)

    assert 0 < floor < 1
    assert np.all(sine_mean_run.trajectory.column("min_y") >= floor)
