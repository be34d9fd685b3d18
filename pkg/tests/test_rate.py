import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from smallnoise import models, rate
from smallnoise.harness.experiments import ou_quadratic_program, ou_transition_cost
from smallnoise.models import NoiseSpec, Potential
from smallnoise.simulator import Path

# theta = sigma = 1, 0 -> 1 in unit time: e^2 / (e^2 - 1)
OU_COST = 1.156517642749666


def simpson_least_squares(x0, x1, T, slices, theta=1.0, sigma=1.0):
    """Minimum of the Simpson-discretised OU action, assembled as an explicit least-squares problem."""
    dt = T / slices
    n = slices - 1
    rows, rhs = [], []
    for k in range(slices):
        for w, (cl, cr) in ((1 / 6, (1.0, 0.0)), (4 / 6, (0.5, 0.5)), (1 / 6, (0.0, 1.0))):
            # residual (x_{k+1} - x_k)/dt + theta*(cl x_k + cr x_{k+1}), scaled to sqrt(w dt / 2) / sigma
            a = -1 / dt + theta * cl
            b = 1 / dt + theta * cr
            scale = math.sqrt(w * dt / 2) / sigma
            row = np.zeros(n)
            c = 0.0
            for idx, coef in ((k, a), (k + 1, b)):
                if idx == 0:
                    c += coef * x0
                elif idx == slices:
                    c += coef * x1
                else:
                    row[idx - 1] += coef
            rows.append(scale * row)
            rhs.append(-scale * c)
    A, y = np.array(rows), np.array(rhs)
    z, *_ = np.linalg.lstsq(A, y, rcond=None)
    return float(np.sum((A @ z - y) ** 2)), z


def test_control_residual_examples():
    s = models.ou()
    u = rate.control_residual(Path.linear([0.0], [1.0], 1.0, 10), s)[:, 0]
    assert np.allclose(u, 1 + np.linspace(0, 1, 11), atol=1e-12)
    flat = Path.linear([0.7], [0.7], 2.0, 10)
    assert np.allclose(rate.control_residual(flat, s)[:, 0], 0.7)
    assert rate.action(flat, s).total == pytest.approx(0.5 * 2.0 * 0.49, rel=1e-14)
    assert rate.action(flat, s, quadrature="nodal").total == pytest.approx(0.49, rel=1e-14)


def test_initial_cost_is_added():
    s = models.ou()
    p = Path.linear([0.5], [0.5], 1.0, 8)
    rep = rate.action(p, s, I0=lambda x: 2.0)
    assert rep.initial_cost == 2.0
    assert rep.total == pytest.approx(2.0 + 0.125)


def test_closed_form_against_oracles():
    assert ou_transition_cost(0.0, 1.0, 1.0) == pytest.approx(OU_COST, rel=1e-15)
    assert abs(ou_quadratic_program(0.0, 1.0, 1.0, 2048) - OU_COST) <= 1e-4


def test_minimizer_matches_least_squares_oracle():
    s = models.ou()
    for slices in (8, 32):
        path, rep = rate.minimize_action([0.0], [1.0], 1.0, s, slices)
        ref, z = simpson_least_squares(0.0, 1.0, 1.0, slices)
        assert rep.converged
        assert abs(rep.total - ref) <= 1e-9
        assert np.max(np.abs(path.states[1:-1, 0] - z)) <= 1e-6


def test_refinement_converges_to_closed_form():
    s = models.ou()
    vals = [rate.minimize_action([0.0], [1.0], 1.0, s, k)[1].total for k in (8, 16, 32, 64)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))
    assert abs(vals[-1] - OU_COST) <= 1e-5
    assert abs(vals[0] - vals[-1]) / vals[-1] < 0.01


def test_noise_scaling_divides_action():
    a1 = rate.minimize_action([0.0], [1.0], 1.0, models.ou(sigma=1.0), 32)[1].total
    a2 = rate.minimize_action([0.0], [1.0], 1.0, models.ou(sigma=2.0), 32)[1].total
    assert a2 == pytest.approx(a1 / 4, rel=1e-9)


def test_gradient_matches_differences():
    for s, dim in ((models.allen_cahn(1, 5, math.inf), 5),
                   (models.allen_cahn(1, 4, 64.0, noise=NoiseSpec("multiplicative-AC", 1.0, 0.3, 0.2,
                                                                   ((0.1, 0.2, -0.1, 0.3),))), 4),
                   (models.cahn_hilliard(1, 4, math.inf), 4), (models.ou(d=2), 2)):
        rng = np.random.default_rng(dim)
        p = Path.linear(rng.standard_normal(dim), rng.standard_normal(dim), 1.0, 16)
        assert rate.gradient_check(p, s, trials=10) <= 1e-5


def test_deterministic_flow_has_negligible_action():
    s = models.allen_cahn(1, 5, math.inf)
    flow = rate.deterministic_flow([-0.9, 0.0, 0.05, 0.0, 0.0], s, np.linspace(0, 1, 1001))
    assert rate.action(flow, s).total <= 1e-5
    ou = rate.deterministic_flow([1.0], models.ou(), np.linspace(0, 1, 11))
    assert np.allclose(ou.states[:, 0], np.exp(-ou.times), rtol=1e-9)


def test_minimizer_beats_straight_line():
    s = models.allen_cahn(1, 5, math.inf)
    x0, x1 = [-0.9, 0, 0.05, 0, 0], [0.9, 0.05, 0, 0, 0]
    line = rate.action(Path.linear(x0, x1, 2.0, 16), s).total
    path, rep = rate.minimize_action(x0, x1, 2.0, s, 16)
    assert rep.total <= line
    again = rate.action(path, s).total
    assert again == rep.total


def test_singular_noise_is_rejected():
    m = models.allen_cahn(1, 3, 64.0, noise=NoiseSpec("multiplicative-AC", a=0.0))
    with pytest.raises(rate.SingularNoiseError):
        rate.action(Path.linear(np.zeros(3), np.ones(3), 1.0, 4), m)


def test_terminal_reward_linear_case():
    # sup_z p z - (cost of reaching z) for OU from 0 in time 1: p^2 (1 - e^-2) / 4
    p = 0.5
    s = models.ou()
    _, value, res = rate.maximize_terminal_reward([0.0], 1.0, s, 64, lambda x: (p * x[0], np.array([p])))
    assert res.converged
    assert value == pytest.approx(p * p * (1 - math.exp(-2)) / 4, rel=1e-4)


@settings(max_examples=15, deadline=None)
@given(a=st.floats(-2, 2), T=st.floats(0.3, 2.0), theta=st.floats(0.2, 3.0))
def test_action_nonnegative_and_closed_form(a, T, theta):
    s = models.ou(theta=theta)
    _, rep = rate.minimize_action([0.0], [a], T, s, 64)
    assert rep.total >= 0
    assert rep.total == pytest.approx(ou_transition_cost(0.0, a, T, theta), rel=1e-3, abs=1e-9)


def test_potential_energy_bound_under_noise_off():
    s = models.allen_cahn(1, 4, math.inf, Potential("quadratic"))
    flow = rate.deterministic_flow([1.0, 0.5, 0.0, 0.0], s, np.linspace(0, 0.5, 51))
    norms = np.linalg.norm(flow.states, axis=1)
    assert np.all(np.diff(norms) <= 1e-12)
