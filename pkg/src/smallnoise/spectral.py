"""Tensor Fourier basis on the periodic unit torus and coefficient-space operators.

The 1-D basis is

    phi_1 = 1,  phi_{2k} = sqrt(2) sin(2 pi k r),  phi_{2k+1} = sqrt(2) cos(2 pi k r),

so index ``j`` carries frequency ``floor(j / 2)`` and ``-phi_j'' = mu_j phi_j`` with
``mu_j = 4 pi^2 floor(j/2)^2``.  A field in dimension ``d`` truncated at ``m`` modes per
axis is stored as a flat array of ``m**d`` coefficients in lexicographic (C) order over
the index tuple ``(k_1, ..., k_d)``.

Nonlinear terms are handled by collocation on the uniform grid ``theta_j = j / q``.
With ``q >= 2m + 1`` the rectangle rule integrates every product of two retained modes
exactly, so ``to_spectral(to_grid(c)) == c`` to rounding.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from smallnoise.jsonio import dumps17

TWO_PI = 2.0 * math.pi


class AliasingError(ValueError):
    """Collocation grid too coarse for the requested truncation."""


def mu(j: int) -> float:
    """Eigenvalue of ``-d^2/dr^2`` on the 1-D basis function ``phi_j`` (1-based)."""
    if j < 1:
        raise ValueError(f"mode index must be >= 1, got {j}")
    k = math.ceil((j - 1) / 2)
    return 4.0 * math.pi**2 * k * k


def mu_array(m: int) -> np.ndarray:
    return np.array([mu(j) for j in range(1, m + 1)])


def frequency(j: int) -> int:
    return j // 2


def phi(j: int, r):
    """1-D basis function ``phi_j`` evaluated at ``r`` (scalar or array)."""
    if j < 1:
        raise ValueError(f"mode index must be >= 1, got {j}")
    r = np.asarray(r, dtype=float)
    if j == 1:
        return np.ones_like(r)
    k = j // 2
    if j % 2 == 0:
        return math.sqrt(2.0) * np.sin(TWO_PI * k * r)
    return math.sqrt(2.0) * np.cos(TWO_PI * k * r)


def eval_basis(k: Sequence[int], theta) -> float:
    """Tensor basis function ``e_k(theta) = prod_j phi_{k_j}(theta_j)``."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if theta.shape[-1] != len(k):
        raise ValueError("theta dimension does not match multi-index length")
    out = np.ones(theta.shape[:-1])
    for axis, kj in enumerate(k):
        out = out * phi(kj, theta[..., axis])
    return out if out.ndim else float(out)


def default_grid_size(m: int) -> int:
    """Smallest 2^a 3^b 5^c that is at least ``2m + 1``."""
    target = 2 * m + 1
    q = target
    while True:
        r = q
        for p in (2, 3, 5):
            while r % p == 0:
                r //= p
        if r == 1:
            return q
        q += 1


def multi_indices(dim: int, m: int) -> np.ndarray:
    """All 1-based multi-indices in lexicographic order, shape ``(m**dim, dim)``."""
    grids = np.meshgrid(*([np.arange(1, m + 1)] * dim), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=-1)


def flat_index(k: Sequence[int], m: int) -> int:
    idx = 0
    for kj in k:
        if not 1 <= kj <= m:
            raise ValueError(f"index component {kj} outside 1..{m}")
        idx = idx * m + (kj - 1)
    return idx


@dataclass(frozen=True)
class SpectralBasis:
    """Precomputed collocation and eigenvalue tables for one ``(dim, m, q)``.

    All array methods accept a leading batch shape: ``(..., m**dim)`` coefficients or
    ``(..., q**dim)`` grid values.
    """

    dim: int
    m: int
    q: int
    g1: np.ndarray = field(repr=False, compare=False)
    mu1: np.ndarray = field(repr=False, compare=False)
    lam_sum: np.ndarray = field(repr=False, compare=False)
    lam_prod: np.ndarray = field(repr=False, compare=False)
    d1: np.ndarray = field(repr=False, compare=False)

    @property
    def size(self) -> int:
        return self.m**self.dim

    @property
    def grid_size(self) -> int:
        return self.q**self.dim

    def _along_axes(self, a: np.ndarray, mat: np.ndarray, n_in: int) -> np.ndarray:
        batch = a.shape[:-1]
        a = a.reshape(batch + (n_in,) * self.dim)
        nb = len(batch)
        # einsum without BLAS keeps each output element's summation order independent
        # of the batch size, so chunked ensembles reproduce single-path runs bitwise
        for axis in range(self.dim):
            a = np.moveaxis(np.einsum("...i,ji->...j", np.moveaxis(a, nb + axis, -1), mat), -1, nb + axis)
        return a.reshape(batch + (-1,))

    def to_grid(self, c: np.ndarray) -> np.ndarray:
        return self._along_axes(np.asarray(c, dtype=float), self.g1, self.m)

    def to_spectral(self, g: np.ndarray) -> np.ndarray:
        return self._along_axes(np.asarray(g, dtype=float), self.g1.T / self.q, self.q)

    def laplacian(self, c: np.ndarray) -> np.ndarray:
        return -self.lam_sum * c

    def d_theta(self, c: np.ndarray) -> np.ndarray:
        if self.dim != 1:
            raise ValueError("d_theta is defined for dim = 1 only")
        return np.einsum("...i,ji->...j", np.asarray(c, dtype=float), self.d1)

    def project(self, c: np.ndarray, m_new: int) -> np.ndarray:
        if m_new > self.m:
            raise ValueError(f"cannot project truncation {self.m} onto larger {m_new}")
        c = np.asarray(c, dtype=float)
        batch = c.shape[:-1]
        a = c.reshape(batch + (self.m,) * self.dim).copy()
        nb = len(batch)
        for axis in range(self.dim):
            sl = [slice(None)] * a.ndim
            sl[nb + axis] = slice(m_new, None)
            a[tuple(sl)] = 0.0
        return a.reshape(c.shape)

    def grid_points(self) -> np.ndarray:
        """Collocation points, shape ``(q**dim, dim)`` in the grid value ordering."""
        t = np.arange(self.q) / self.q
        grids = np.meshgrid(*([t] * self.dim), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)

    def inner(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return np.sum(np.asarray(a) * np.asarray(b), axis=-1)

    def grid_mean(self, g: np.ndarray) -> np.ndarray:
        return np.mean(g, axis=-1)

    def grid_matrix(self) -> np.ndarray:
        """Dense ``(q**dim, m**dim)`` collocation matrix; ``to_grid(c) == G @ c``."""
        return self.to_grid(np.eye(self.size)).T


@lru_cache(maxsize=64)
def get_basis(dim: int, m: int, q: int | None = None) -> SpectralBasis:
    if not 1 <= dim <= 3:
        raise ValueError(f"dimension must be 1, 2 or 3, got {dim}")
    if m < 1:
        raise ValueError(f"truncation must be >= 1, got {m}")
    if q is None:
        q = default_grid_size(m)
    if q < 2 * m + 1:
        raise AliasingError(f"grid size q={q} < 2m+1={2 * m + 1}: quadratic terms would alias")
    theta = np.arange(q) / q
    g1 = np.stack([phi(j, theta) for j in range(1, m + 1)], axis=1)
    mu1 = mu_array(m)
    idx = multi_indices(dim, m) - 1
    lam_sum = mu1[idx].sum(axis=1)
    lam_prod = mu1[idx].prod(axis=1)
    d1 = np.zeros((m, m))
    for j in range(2, m + 1):
        k = j // 2
        if j % 2 == 0:
            if j + 1 <= m:
                d1[j, j - 1] = TWO_PI * k  # sin_k -> cos_k (0-based rows: j+1 -> j)
        else:
            d1[j - 2, j - 1] = -TWO_PI * k  # cos_k -> -sin_k
    return SpectralBasis(dim, m, q, g1, mu1, lam_sum, lam_prod, d1)


@dataclass(frozen=True)
class SpectralField:
    dim: int
    m: int
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float).reshape(-1)
        if c.size != self.m**self.dim:
            raise ValueError(f"expected {self.m ** self.dim} coefficients, got {c.size}")
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, dim: int, m: int) -> "SpectralField":
        return cls(dim, m, np.zeros(m**dim))

    @classmethod
    def mode(cls, dim: int, m: int, k: Sequence[int], value: float = 1.0) -> "SpectralField":
        c = np.zeros(m**dim)
        c[flat_index(k, m)] = value
        return cls(dim, m, c)

    @property
    def basis(self) -> SpectralBasis:
        return get_basis(self.dim, self.m)

    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def __add__(self, other: "SpectralField") -> "SpectralField":
        _check_compatible(self, other)
        return SpectralField(self.dim, self.m, self.coeffs + other.coeffs)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        _check_compatible(self, other)
        return SpectralField(self.dim, self.m, self.coeffs - other.coeffs)

    def __mul__(self, a: float) -> "SpectralField":
        return SpectralField(self.dim, self.m, a * self.coeffs)

    __rmul__ = __mul__

    def to_json(self) -> str:
        return dumps17(self.to_dict())

    def to_dict(self) -> dict:
        return {"dim": self.dim, "m": self.m, "coeffs": self.coeffs.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "SpectralField":
        return cls(int(d["dim"]), int(d["m"]), np.asarray(d["coeffs"], dtype=float))

    @classmethod
    def from_json(cls, s: str) -> "SpectralField":
        return cls.from_dict(json.loads(s))


def _check_compatible(a: SpectralField, b: SpectralField) -> None:
    if (a.dim, a.m) != (b.dim, b.m):
        raise ValueError(f"incompatible fields: (dim, m) {(a.dim, a.m)} vs {(b.dim, b.m)}")


@dataclass(frozen=True)
class GridField:
    dim: int
    q: int
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(-1)
        if v.size != self.q**self.dim:
            raise ValueError(f"expected {self.q ** self.dim} grid values, got {v.size}")
        object.__setattr__(self, "values", v)

    def l2_norm(self) -> float:
        return float(np.sqrt(np.mean(self.values**2)))


def to_grid(f: SpectralField, q: int | None = None) -> GridField:
    b = get_basis(f.dim, f.m, q)
    return GridField(f.dim, b.q, b.to_grid(f.coeffs))


def to_spectral(g: GridField, m: int) -> SpectralField:
    b = get_basis(g.dim, m, g.q)
    return SpectralField(g.dim, m, b.to_spectral(g.values))


def laplacian(f: SpectralField) -> SpectralField:
    return SpectralField(f.dim, f.m, f.basis.laplacian(f.coeffs))


def d_theta(f: SpectralField) -> SpectralField:
    if f.dim != 1:
        raise ValueError(f"d_theta requires dim = 1, got {f.dim}")
    return SpectralField(1, f.m, f.basis.d_theta(f.coeffs))


def project(f: SpectralField, m_new: int) -> SpectralField:
    """Zero every coefficient with an index component above ``m_new`` (same storage size)."""
    return SpectralField(f.dim, f.m, f.basis.project(f.coeffs, m_new))


def eigen_sum_bound(m: int, dim: int) -> tuple[float, float]:
    """Product-eigenvalue sum over ``{1..m}^dim`` and its closed-form upper bound."""
    total = float(np.sum(mu_array(m))) ** dim
    bound = 4.0**dim * math.pi ** (2 * dim) * (1 + m) ** (3 * dim) / 3.0
    return total, bound
