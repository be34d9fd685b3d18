import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import optimize

from smallnoise import models
from smallnoise.semigroup import (Grid1D, TestFunctional, bellman_operator, extrapolated_semigroup,
                                  rate_from_semigroup, resolvent_1d, semigroup_doubling, semigroup_iterate,
                                  v_control, vn_estimate)

OU = models.ou(n=64.0)
GRID = Grid1D(-3.0, 3.0, 241)


def piecewise_constant_value(f, x0, t, pieces):
    """Best reward minus action over controls constant on ``pieces`` equal sub-intervals (OU, exact flow)."""
    tau = t / pieces
    decay = math.exp(-tau)

    def neg(u):
        x = x0
        for uj in u:
            x = x * decay + uj * (1 - decay)
        return -(float(f(np.array([x]))) - 0.5 * tau * float(np.sum(u * u)))

    runs = [optimize.minimize(neg, s, method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-12})
            for s in (np.zeros(pieces), np.ones(pieces), -np.ones(pieces))]
    return -min(r.fun for r in runs)


def test_functional_values():
    f = TestFunctional("clipped-quadratic", (0.3,), (0.5,), 0.3, 0.2, 1.0)
    assert float(f(np.array([0.5]))) == pytest.approx(0.2)
    assert float(f(np.array([-10.0]))) == -1.0
    g = TestFunctional.linear([2.0], 1.0)
    assert float(g(np.array([3.0]))) == 1.0
    assert TestFunctional.from_dict(f.to_dict()) == f
    with pytest.raises(ValueError):
        TestFunctional("clipped-quadratic", L=0.0)


def test_vn_trivial_cases():
    c = TestFunctional.constant(0.37)
    assert vn_estimate(0.5, c, [1.0], OU, 100).value == pytest.approx(0.37, abs=1e-15)
    f = TestFunctional.linear([0.5], 1.0)
    assert vn_estimate(0.0, f, [1.0], OU, 100).value == 0.5
    with pytest.raises(ValueError):
        vn_estimate(0.5, f, [1.0], models.ou(n=math.inf), 100)


def test_vn_shift_and_order():
    f = TestFunctional.linear([0.5], 1.0)
    g = TestFunctional("clipped-quadratic", (0.5,), (0.0,), 0.0, 0.25, 1.25)
    a = vn_estimate(1.0, f, [1.0], OU, 2000, seed=4)
    b = vn_estimate(1.0, g, [1.0], OU, 2000, seed=4)
    assert b.value - a.value == pytest.approx(0.25, abs=1e-12)
    low = TestFunctional.linear([0.5], 0.5)
    assert vn_estimate(1.0, low, [1.0], OU, 2000, seed=4).value <= a.value


def test_vn_linear_gaussian_limit():
    # exp of a linear functional of a Gaussian: (1/n) log E = p m + n p^2 v / 2
    p, n, t = 0.5, 64.0, 1.0
    f = TestFunctional.linear([p], 100.0)
    est = vn_estimate(t, f, [1.0], OU, 40000, dt=0.01, seed=1)
    a = 1 - 0.01
    m = a**100
    v = 0.01 / n * sum(a ** (2 * j) for j in range(100))
    assert abs(est.value - (p * m + n * p * p * v / 2)) <= 4 * est.std_error + 1e-4


def test_v_control_closed_forms():
    assert v_control(1.0, TestFunctional.constant(0.2), [0.3], OU).value == pytest.approx(0.2, abs=1e-9)
    p, t = 0.5, 1.0
    f = TestFunctional.linear([p], 100.0)
    val = v_control(t, f, [1.0], OU).value
    assert val == pytest.approx(p * math.exp(-t) + p * p * (1 - math.exp(-2 * t)) / 4, abs=1e-5)


def test_resolvent_fixes_constants_and_is_monotone():
    h = np.full(GRID.points, 0.4)
    assert np.max(np.abs(resolvent_1d(h, 0.1, OU, GRID).values - 0.4)) <= 1e-8
    f = TestFunctional.linear([0.5], 1.0)(GRID.x[:, None])
    g = f + 0.1 * np.exp(-GRID.x**2)
    rf = resolvent_1d(f, 0.1, OU, GRID).values
    rg = resolvent_1d(g, 0.1, OU, GRID).values
    assert np.all(rg >= rf - 1e-9)


def test_bellman_operator_is_a_contraction():
    h = TestFunctional.quadratic(0.5, [0.0], 1.0)(GRID.x[:, None])
    rng = np.random.default_rng(0)
    for _ in range(5):
        f, g = rng.uniform(-1, 1, (2, GRID.points))
        d = np.max(np.abs(bellman_operator(h, 0.2, OU, GRID, f) - bellman_operator(h, 0.2, OU, GRID, g)))
        assert d < np.max(np.abs(f - g))


def test_single_iterate_is_the_resolvent():
    h = TestFunctional.linear([0.5], 1.0)(GRID.x[:, None])
    assert np.array_equal(semigroup_iterate(h, 0.3, 1, OU, GRID).values, resolvent_1d(h, 0.3, OU, GRID, f0=h).values)


def test_iterates_converge_monotonically():
    h = TestFunctional.linear([0.5], 1.0)(GRID.x[:, None])
    rep = semigroup_doubling(h, 1.0, [4, 8, 16], OU, GRID)
    assert rep.monotone


def test_semigroup_against_piecewise_constant_controls():
    for f, x0 in ((TestFunctional.linear([0.5], 1.0), 1.0),
                  (TestFunctional.quadratic(0.5, [0.5], 1.0), -0.5),
                  (TestFunctional("clipped-quadratic", (0.3,), (0.5,), 0.3, 0.2, 1.0), -1.0)):
        v = float(np.interp(x0, GRID.x, extrapolated_semigroup(f, 1.0, 32, OU, GRID)))
        assert abs(v - piecewise_constant_value(f, x0, 1.0, 3)) <= 1e-2
        assert abs(v - v_control(1.0, f, [x0], OU).value) <= 1e-3


def test_rate_bound_below_transition_cost():
    cost = math.exp(2) / (math.exp(2) - 1)  # x0 = 0 -> 1, theta = sigma = 1
    rb = rate_from_semigroup(1.0, 1.0, 0.0, OU, Grid1D(-3.0, 3.0, 121), k=16, two_parameter=False)
    assert rb.value <= cost + 1e-2
    assert rb.value >= 0.85 * cost


@settings(max_examples=10, deadline=None)
@given(shift=st.floats(-0.5, 0.5))
def test_iterate_commutes_with_constants(shift):
    h = TestFunctional.quadratic(0.5, [0.0], 1.0)(GRID.x[:, None])
    a = semigroup_iterate(h, 0.5, 2, OU, GRID).values
    b = semigroup_iterate(h + shift, 0.5, 2, OU, GRID).values
    assert np.max(np.abs(b - a - shift)) <= 1e-7
