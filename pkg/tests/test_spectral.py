import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from smallnoise import spectral as sp
from smallnoise.spectral import SpectralField

PI2 = math.pi**2


def test_mu_values():
    assert sp.mu(1) == 0.0
    assert sp.mu(2) == pytest.approx(4 * PI2)
    # sin/cos pair of frequency one share the eigenvalue
    assert sp.mu(3) == pytest.approx(4 * PI2)
    assert sp.mu(4) == pytest.approx(16 * PI2)
    with pytest.raises(ValueError):
        sp.mu(0)


def test_mu_matches_second_difference():
    h = 1e-4
    r = np.linspace(0, 1, 1001)
    for j in range(1, 10):
        d2 = (sp.phi(j, r + h) - 2 * sp.phi(j, r) + sp.phi(j, r - h)) / h**2
        assert np.max(np.abs(d2 + sp.mu(j) * sp.phi(j, r))) <= 1e-6 * max(1.0, sp.mu(j))
    d2 = (sp.phi(5, r + h) - 2 * sp.phi(5, r) + sp.phi(5, r - h)) / h**2
    assert np.max(np.abs(d2 + sp.mu(5) * sp.phi(5, r))) <= 1e-4


def test_eval_basis():
    assert sp.eval_basis((1,), 0.37) == 1.0
    assert sp.eval_basis((2,), 0.25) == pytest.approx(math.sqrt(2))
    assert sp.eval_basis((3,), 0.0) == pytest.approx(math.sqrt(2))
    assert sp.eval_basis((2, 3), (0.25, 0.0)) == pytest.approx(2.0)


def test_trapezoid_orthonormality_257():
    r = np.linspace(0, 1, 257)
    w = np.full(257, 1 / 256)
    w[[0, -1]] /= 2
    vals = np.stack([sp.phi(j, r) for j in range(1, 10)])
    gram = (vals * w) @ vals.T
    assert np.max(np.abs(gram - np.eye(9))) <= 1e-10


def test_round_trip_and_constant():
    rng = np.random.default_rng(0)
    f = SpectralField(1, 9, rng.standard_normal(9))
    back = sp.to_spectral(sp.to_grid(f, 32), 9)
    assert np.max(np.abs(back.coeffs - f.coeffs)) <= 1e-12
    g = sp.GridField(1, 32, np.full(32, 2.5))
    c = sp.to_spectral(g, 9).coeffs
    assert c[0] == pytest.approx(2.5)
    assert np.max(np.abs(c[1:])) <= 1e-14


def test_single_sine_projection():
    theta = np.arange(32) / 32
    c = sp.to_spectral(sp.GridField(1, 32, np.sin(2 * math.pi * 3 * theta)), 9).coeffs
    expected = np.zeros(9)
    expected[5] = 1 / math.sqrt(2)
    assert np.max(np.abs(c - expected)) <= 1e-12


def test_aliasing_rejected():
    with pytest.raises(sp.AliasingError):
        sp.to_grid(SpectralField.zeros(1, 9), 18)


def test_default_grid_size():
    assert sp.default_grid_size(5) == 12
    assert sp.default_grid_size(9) == 20
    assert sp.default_grid_size(16) == 36


def test_laplacian_examples():
    c = sp.laplacian(SpectralField(1, 5, np.array([3.0, 0, 0, 0, 0])))
    assert np.all(c.coeffs == 0)
    e2 = sp.laplacian(SpectralField.mode(1, 5, (2,)))
    assert e2.coeffs[1] == pytest.approx(-4 * PI2)
    e23 = sp.laplacian(SpectralField.mode(2, 5, (2, 3)))
    assert e23.coeffs[sp.flat_index((2, 3), 5)] == pytest.approx(-8 * PI2)


def test_laplacian_against_grid_differences():
    q = 400
    th = np.arange(q) / q
    X, Y = np.meshgrid(th, th, indexing="ij")
    u = sp.phi(2, X) * sp.phi(3, Y)
    h = 1 / q
    lap = (np.roll(u, 1, 0) + np.roll(u, -1, 0) + np.roll(u, 1, 1) + np.roll(u, -1, 1) - 4 * u) / h**2
    ratio = np.sum(lap * u) / np.sum(u * u)
    assert abs(ratio + 8 * PI2) / (8 * PI2) <= 1e-4


def test_d_theta():
    f = SpectralField.mode(1, 5, (2,))
    d = sp.d_theta(f).coeffs
    assert d[2] == pytest.approx(2 * math.pi)
    assert np.count_nonzero(np.abs(d) > 1e-14) == 1
    assert np.all(sp.d_theta(SpectralField(1, 5, np.array([1.0, 0, 0, 0, 0]))).coeffs == 0)
    with pytest.raises(ValueError):
        sp.d_theta(SpectralField.zeros(2, 3))


def test_d_theta_squared_is_laplacian():
    rng = np.random.default_rng(1)
    f = SpectralField(1, 9, rng.standard_normal(9))
    assert np.max(np.abs(sp.d_theta(sp.d_theta(f)).coeffs - sp.laplacian(f).coeffs)) <= 1e-12 * 4 * PI2 * 16


def test_project():
    rng = np.random.default_rng(2)
    for _ in range(100):
        f = SpectralField(2, 6, rng.standard_normal(36))
        assert np.array_equal(sp.project(f, 6).coeffs, f.coeffs)
        assert sp.project(f, 3).norm() <= f.norm()
        assert np.array_equal(sp.project(sp.project(f, 5), 3).coeffs, sp.project(f, 3).coeffs)


def test_json_round_trip():
    f = SpectralField(1, 3, np.array([0.1, 1 / 3, -2e-17]))
    assert np.array_equal(SpectralField.from_json(f.to_json()).coeffs, f.coeffs)


@settings(max_examples=30, deadline=None)
@given(dim=st.integers(1, 3), m=st.integers(1, 6), seed=st.integers(0, 2**31))
def test_parseval_and_orthonormality(dim, m, seed):
    b = sp.get_basis(dim, m)
    c = np.random.default_rng(seed).standard_normal(b.size)
    assert abs(math.sqrt(np.mean(b.to_grid(c) ** 2)) - np.linalg.norm(c)) <= 1e-10
    G = b.grid_matrix()
    assert np.max(np.abs(G.T @ G / b.grid_size - np.eye(b.size))) <= 1e-10


@settings(max_examples=30, deadline=None)
@given(dim=st.integers(1, 3), m=st.integers(1, 5), seed=st.integers(0, 2**31))
def test_laplacian_symmetric_negative(dim, m, seed):
    b = sp.get_basis(dim, m)
    rng = np.random.default_rng(seed)
    f, g = rng.standard_normal((2, b.size))
    assert np.dot(b.laplacian(f), g) == pytest.approx(np.dot(f, b.laplacian(g)), rel=1e-12, abs=1e-9)
    assert np.dot(b.laplacian(f), f) <= 0


def test_eigen_sum_bound():
    for d in (1, 2, 3):
        for m in range(1, 17):
            total, bound = sp.eigen_sum_bound(m, d)
            assert total <= bound
