import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from smallnoise import tataru as tt
from smallnoise.tataru import SemigroupHandle

SCALAR = SemigroupHandle.scalar_decay()
HEAT = SemigroupHandle.heat(1, 5)


def test_phi_eps_values():
    eps = 0.01
    assert float(tt.phi_eps(0.0, eps)) == pytest.approx(0.375 * math.sqrt(eps), rel=1e-14)
    assert float(tt.phi_eps(eps, eps)) == pytest.approx(math.sqrt(eps), rel=1e-14)
    assert float(tt.phi_eps(4.0, eps)) == 2.0
    # C^1 across r = eps
    h = 1e-12
    assert float(tt.phi_eps_d1(eps - h, eps)) == pytest.approx(float(tt.phi_eps_d1(eps + h, eps)), rel=1e-8)
    with pytest.raises(ValueError):
        tt.phi_eps(-1.0, eps)


def test_phi_eps_derivatives_match_differences():
    eps = 0.04
    r = np.linspace(1e-3, 0.2, 97)
    h = 1e-7
    fd1 = (tt.phi_eps(r + h, eps) - tt.phi_eps(r - h, eps)) / (2 * h)
    assert np.max(np.abs(fd1 - tt.phi_eps_d1(r, eps))) <= 1e-6
    fd2 = (tt.phi_eps_d1(r + h, eps) - tt.phi_eps_d1(r - h, eps)) / (2 * h)
    assert np.max(np.abs(fd2 - tt.phi_eps_d2(r, eps))) <= 1e-5


def test_distance_examples():
    d = tt.tataru_distance([0.0], [3.0], SCALAR)
    assert d.value == pytest.approx(math.log(3) + 1, abs=1e-9)
    assert tt.tataru_distance([1.0], [3.0], SCALAR).value == pytest.approx(math.log(3), abs=1e-9)
    assert tt.tataru_distance([0.5], [0.5], SCALAR).value == 0.0
    ident = SemigroupHandle.identity(3)
    x, y = np.array([1.0, 2.0, -1.0]), np.array([0.0, 0.5, 1.0])
    assert tt.tataru_distance(x, y, ident).value == pytest.approx(np.linalg.norm(x - y), rel=1e-12)


def test_semigroup_handles():
    A = ((-1.0, 2.0), (-2.0, -1.0))
    S = SemigroupHandle("finite-dim-linear", matrix=A)
    y = np.array([1.0, -0.5])
    assert np.allclose(S.apply(0.7, S.apply(0.3, y)), S.apply(1.0, y), atol=1e-13)
    rng = np.random.default_rng(0)
    for t in rng.uniform(0, 3, 20):
        assert np.linalg.norm(S.apply(t, y)) <= np.linalg.norm(y) + 1e-12
        assert np.allclose(HEAT.apply(t, HEAT.apply(0.1, np.ones(5))), HEAT.apply(t + 0.1, np.ones(5)))
    with pytest.raises(ValueError):
        SemigroupHandle("finite-dim-linear", matrix=((1.0,),))
    explicit = SemigroupHandle("explicit-map", fn=lambda t, x: np.exp(-t) * x)
    assert tt.tataru_distance([0.0], [3.0], explicit).value == pytest.approx(math.log(3) + 1, abs=1e-9)


def test_soft_min_gradient_matches_differences():
    rng = np.random.default_rng(1)
    for k in range(50):
        S = SCALAR if k % 2 else HEAT
        n = S.size
        x, y = 2 * rng.standard_normal(n), 2 * rng.standard_normal(n)
        eps, a = 1e-2, (10.0, 100.0)[k % 2]
        g = tt.grad_h_n_eps(x, y, eps, a, S)
        h = 1e-6
        fd = np.array([(tt.h_n_eps(x + h * e, y, eps, a, S) - tt.h_n_eps(x - h * e, y, eps, a, S)) / (2 * h)
                       for e in np.eye(n)])
        assert np.max(np.abs(g - fd)) <= 1e-6


def test_soft_min_follows_laplace_rate():
    # g(t) = t + 3 e^-t near t* = ln 3 has curvature 1, so the gap is log(a / 2 pi) / (2 a) to leading order
    x, y, eps = np.array([0.0]), np.array([3.0]), 1e-2
    hard = tt.h_eps(x, y, eps, SCALAR).value
    for a in (100.0, 300.0, 1000.0):
        gap = tt.h_n_eps(x, y, eps, a, SCALAR) - hard
        assert gap == pytest.approx(math.log(a / (2 * math.pi)) / (2 * a), rel=2e-3)
    # the gap peaks near a = 2 pi e, so it grows from a = 10 to a = 30 at this point
    assert tt.h_n_eps(x, y, eps, 10.0, SCALAR) < tt.h_n_eps(x, y, eps, 30.0, SCALAR)
    with pytest.raises(ValueError):
        tt.h_n_eps(x, y, eps, 1.0, SCALAR)


def test_soft_min_gap_decreases_past_the_peak():
    rng = np.random.default_rng(3)
    for S in (SCALAR, HEAT):
        for _ in range(50):
            x, y = 2 * rng.standard_normal(S.size), 2 * rng.standard_normal(S.size)
            hard = tt.h_eps(x, y, 1e-2, S).value
            gaps = [abs(tt.h_n_eps(x, y, 1e-2, a, S) - hard) for a in (30.0, 100.0, 300.0, 1000.0)]
            assert all(g1 > g2 for g1, g2 in zip(gaps, gaps[1:]))


def test_smoothing_gap_bound():
    rng = np.random.default_rng(2)
    for eps in (1e-1, 1e-3):
        for _ in range(20):
            x, y = 2 * rng.standard_normal(5), 2 * rng.standard_normal(5)
            gap = abs(tt.h_eps(x, y, eps, HEAT).value - tt.tataru_distance(x, y, HEAT).value)
            assert gap <= 0.375 * math.sqrt(eps) + 1e-9


def test_directional_bound_example():
    rep = tt.directional_bound_check(np.array([0.5]), np.array([2.0]), SCALAR)
    assert rep.passed, rep.max_violation


def test_all_suites_pass_small():
    for rep in tt.run_suites(samples=40):
        assert rep.passed, (rep.suite, rep.max_violation, rep.witness)


@settings(max_examples=30, deadline=None)
@given(x=st.floats(-3, 3), y=st.floats(-3, 3), z=st.floats(-3, 3))
def test_distance_triangle_with_flow(x, y, z):
    # d(x, z) <= d(x, y) + |y - z| and d is nonnegative
    dxz = tt.tataru_distance([x], [z], SCALAR).value
    dxy = tt.tataru_distance([x], [y], SCALAR).value
    assert dxz >= 0
    assert dxz <= dxy + abs(y - z) + 1e-9
