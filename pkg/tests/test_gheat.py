import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from glil.core import TestFunction, VolatilityInterval
from glil.errors import DomainError, GrowthError, ShapeError, StabilityError
from glil.gheat import (
    PdeSolverParams,
    SandwichPair,
    abs_tail_bounds,
    check_shift_inequality,
    check_tail_monotonicity,
    conjugate_expectation,
    g_expectation,
    g_function,
    solve_g_heat,
    tol_pde,
    upper_distribution_bounds,
)

IV = VolatilityInterval(1.0, 2.0)
COARSE = PdeSolverParams(points=201)


def gaussian_expectation(phi, sigma, t=1.0):
    """Independent oracle: integrate phi against the N(0, sigma^2 t) density."""
    s = sigma * math.sqrt(t)
    f = lambda z: float(phi(s * z)) * math.exp(-z * z / 2) / math.sqrt(2 * math.pi)
    return integrate.quad(f, -12, 12, limit=400, points=[0.0])[0]


def test_g_function():
    assert g_function(1.0, IV) == 2.0
    assert g_function(-1.0, IV) == -0.5
    assert np.allclose(g_function(np.array([2.0, -2.0, 0.0]), IV), [4.0, -1.0, 0.0])


@pytest.mark.parametrize(
    "phi,expected",
    [
        (TestFunction.quadratic(), 4.0),
        (TestFunction.neg_quadratic(), -1.0),
        (TestFunction.identity(), 0.0),
    ],
)
def test_second_moments(phi, expected):
    v = g_expectation(phi, 1.0, IV)
    assert abs(v - expected) <= tol_pde(expected)


def test_conjugate_second_moment():
    assert conjugate_expectation(TestFunction.quadratic(), 1.0, IV) == pytest.approx(1.0, abs=1e-3)


@pytest.mark.parametrize(
    "phi",
    [TestFunction.absolute(), TestFunction.power(4), TestFunction.power(4).scaled(-1), TestFunction.exp(), TestFunction.power(1.5)],
    ids=["abs", "x4", "-x4", "exp", "x1.5"],
)
def test_convex_concave_match_extremal_gaussian(phi):
    sigma = IV.sigma_high if phi.convexity == "convex" else IV.sigma_low
    oracle = gaussian_expectation(phi, sigma)
    assert g_expectation(phi, 1.0, IV) == pytest.approx(oracle, rel=5e-3)


def test_closed_forms_frozen():
    # sigma_high sqrt(2/pi), 3 sigma_high^4, -3 sigma_low^4, exp(sigma_high^2 / 2)
    assert g_expectation(TestFunction.absolute(), 1.0, IV) == pytest.approx(2 * math.sqrt(2 / math.pi), rel=5e-3)
    assert g_expectation(TestFunction.power(4), 1.0, IV) == pytest.approx(48.0, rel=5e-3)
    assert g_expectation(TestFunction.power(4).scaled(-1), 1.0, IV) == pytest.approx(-3.0, rel=5e-3)
    assert g_expectation(TestFunction.exp(), 1.0, IV) == pytest.approx(math.e**2, rel=5e-3)


def test_time_scaling():
    assert g_expectation(TestFunction.quadratic(), 2.5, IV) == pytest.approx(10.0, rel=1e-3)


def test_classical_interval_is_gaussian():
    iv = VolatilityInterval(1.3, 1.3)
    phi = TestFunction.bump(1.0, 0.4)
    assert g_expectation(phi, 1.0, iv) == pytest.approx(gaussian_expectation(phi, 1.3), abs=2e-4)


def test_cdf_bounds_at_zero_match_oscillating_bm():
    # The maximising policy uses sigma_high above 0 and sigma_low below; that oscillating
    # Brownian motion has P(X_1 <= 0) = sigma_high / (sigma_low + sigma_high) = 2/3.
    lo, hi = upper_distribution_bounds(0.0, 1.0, IV, 0.01)
    assert lo <= 2 / 3 <= hi
    assert hi - lo < 0.01
    lo, hi = upper_distribution_bounds(0.0, 1.0, VolatilityInterval(1, 1), 0.01)
    assert lo <= 0.5 <= hi


def test_abs_tail_bounds_order():
    lo, hi = abs_tail_bounds(1.0, 1.0, IV, 0.01)
    # constant sigma_high gives P(|2Z| >= 1) = 0.617075; feedback does strictly better
    assert lo <= hi and hi - lo < 0.01
    assert lo > 0.617075


def test_sandwich_pair():
    pair = SandwichPair(0.0, 0.1)
    assert pair.lower(0.0) == 0.0 and pair.upper(0.0) == 1.0
    with pytest.raises(DomainError):
        SandwichPair(0.0, 0.0)


def test_errors():
    with pytest.raises(StabilityError):
        g_expectation(TestFunction.quadratic(), 1.0, IV, PdeSolverParams(steps=10))
    with pytest.raises(StabilityError):
        g_expectation(TestFunction.quadratic(), 1.0, IV, PdeSolverParams(cfl=1.5))
    with pytest.raises(DomainError):
        g_expectation(TestFunction.quadratic(), 1.0, IV, PdeSolverParams(halfwidth=5.0))
    with pytest.raises(DomainError):
        g_expectation(TestFunction.quadratic(), 0.0, IV)
    with pytest.raises(GrowthError):
        g_expectation(TestFunction.exp(clip=1000.0), 1.0, VolatilityInterval(1, 100))


def test_snapshots_flag_convexity():
    sol = solve_g_heat(TestFunction.quadratic(), 1.0, IV, COARSE, snapshot_taus=[0.0, 0.5, 1.0])
    assert sol.convex.shape == (3, len(sol.x))
    # linear extrapolation flattens the curvature next to the boundary
    core = np.abs(sol.x) < 0.5 * sol.x[-1]
    assert sol.convex[:, core].all()
    sol = solve_g_heat(TestFunction.neg_quadratic(), 1.0, IV, COARSE, snapshot_taus=[0.5])
    assert not sol.convex[:, core].any()


def test_shift_inequality():
    bump = TestFunction.bump(1.0)
    for b in (-2.0, -0.5, 0.0, 1.0, 3.0):
        assert check_shift_inequality(bump, b, IV, params=COARSE) >= -1e-4
    assert check_shift_inequality(bump, 0.0, IV, params=COARSE) == 0.0
    with pytest.raises(ShapeError):
        check_shift_inequality(TestFunction.quadratic(), 1.0, IV)
    with pytest.raises(ShapeError):
        check_shift_inequality(TestFunction.bump(1.0, 0.5), 1.0, IV)


def test_tail_monotonicity_classical_values():
    rows = check_tail_monotonicity(1.0, 4.0, [1.0], VolatilityInterval(1, 1), delta=0.01)
    (y, vs, vt), = [tuple(r) for r in rows]
    # P(|Z| >= 1) = 0.317311, P(|2Z| >= 1) = 0.617075
    assert vs == pytest.approx(0.317311, abs=2e-3)
    assert vt == pytest.approx(0.617075, abs=2e-3)
    assert rows[0].holds and rows[0].continuous
    with pytest.raises(DomainError):
        check_tail_monotonicity(2.0, 1.0, [1.0], IV)


# -- sublinear expectation axioms on the discrete solver ---------------------

knots = st.lists(st.floats(-1.0, 1.0), min_size=5, max_size=5)


def tab(vals):
    return TestFunction.tabulated(np.linspace(-3, 3, len(vals)), vals)


@settings(max_examples=25, deadline=None)
@given(a=knots, b=knots)
def test_subadditive(a, b):
    f, g = tab(a), tab(b)
    lhs = g_expectation(f + g, 1.0, IV, COARSE)
    assert lhs <= g_expectation(f, 1.0, IV, COARSE) + g_expectation(g, 1.0, IV, COARSE) + 1e-10


@settings(max_examples=25, deadline=None)
@given(a=knots, lam=st.floats(0.0, 5.0), c=st.floats(-3.0, 3.0))
def test_homogeneous_and_constant_preserving(a, lam, c):
    f = tab(a)
    base = g_expectation(f, 1.0, IV, COARSE)
    assert g_expectation(f.scaled(lam), 1.0, IV, COARSE) == pytest.approx(lam * base, abs=1e-10)
    assert g_expectation(f + TestFunction.constant(c), 1.0, IV, COARSE) == pytest.approx(base + c, abs=1e-10)


@settings(max_examples=25, deadline=None)
@given(a=knots, bump=st.lists(st.floats(0.0, 1.0), min_size=5, max_size=5))
def test_monotone_and_conjugate_below(a, bump):
    f = tab(a)
    g = f + tab(bump)
    assert g_expectation(f, 1.0, IV, COARSE) <= g_expectation(g, 1.0, IV, COARSE) + 1e-12
    assert conjugate_expectation(f, 1.0, IV, COARSE) <= g_expectation(f, 1.0, IV, COARSE) + 1e-12
