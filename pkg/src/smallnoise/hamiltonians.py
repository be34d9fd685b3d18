"""Log-transformed generators on explicit test functions and free-energy containment.

For a test function ``f`` the transformed generator of the truncated diffusion is

    H_n f(x) = <Df, b(x)> + 1/2 |B(x)^T Df|^2 + 1/(2n) tr(B(x)^T D^2 f B(x)),

evaluated exactly in the ``m**d``-dimensional truncation (the trace sums over every
retained direction).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from smallnoise import models
from smallnoise.models import ModelSpec, Potential
from smallnoise.simulator import SimConfig, simulate_ensemble
from smallnoise.spectral import SpectralBasis, SpectralField, get_basis

TWO_PI = 2.0 * math.pi


def _coeffs(x) -> np.ndarray:
    return x.coeffs if isinstance(x, SpectralField) else np.asarray(x, dtype=float)


def free_energy(x, potential: Potential, basis: SpectralBasis | None = None) -> np.ndarray:
    """``1/2 |grad x|^2 + integral of V(x)``; batched over leading axes."""
    if isinstance(x, SpectralField):
        basis = basis or x.basis
    c = _coeffs(x)
    if basis is None:
        raise ValueError("a basis is needed for raw coefficient arrays")
    grad2 = np.sum(basis.lam_sum * c * c, axis=-1)
    return 0.5 * grad2 + np.mean(potential.V(basis.to_grid(c)), axis=-1)


def free_energy_grad(c: np.ndarray, potential: Potential, basis: SpectralBasis) -> np.ndarray:
    return basis.lam_sum * c + basis.to_spectral(potential.dV(basis.to_grid(c)))


def free_energy_hess(c: np.ndarray, potential: Potential, basis: SpectralBasis) -> np.ndarray:
    G = basis.grid_matrix()
    w = potential.d2V(basis.to_grid(c))
    return np.diag(basis.lam_sum) + (G.T * w) @ G / basis.grid_size


@dataclass(frozen=True)
class RadialTestFn:
    """Test function with analytic gradient and Hessian.

    ``quadratic``: ``mu/2 |x - xi|^2``.
    ``log-free-energy``: ``log(1 + E(x) / M^2)`` for the model's potential and basis.
    """

    kind: str
    mu: float = 1.0
    xi: tuple | None = None
    M: float = 1.0
    potential: Potential | None = None
    basis: SpectralBasis | None = None
    offset: float = 0.0

    def __post_init__(self):
        if self.kind not in ("quadratic", "log-free-energy"):
            raise ValueError(f"unknown test function {self.kind!r}")
        if self.kind == "log-free-energy" and (self.potential is None or self.basis is None):
            raise ValueError("log-free-energy needs a potential and a basis")

    @classmethod
    def for_model(cls, model: ModelSpec, M: float | None = None) -> "RadialTestFn":
        M = model.noise.sup_abs if M is None else M
        return cls("log-free-energy", M=M, potential=model.potential, basis=model.basis)

    def _xi(self, x):
        return np.zeros_like(x) if self.xi is None else np.asarray(self.xi, dtype=float)

    def value(self, x) -> float:
        x = _coeffs(x)
        if self.kind == "quadratic":
            d = x - self._xi(x)
            return float(0.5 * self.mu * d @ d) + self.offset
        E = float(free_energy(x, self.potential, self.basis))
        if 1 + E / self.M**2 <= 0:
            raise ValueError("free energy below -M^2: log-free-energy undefined")
        return math.log1p(E / self.M**2) + self.offset

    def grad(self, x) -> np.ndarray:
        x = _coeffs(x)
        if self.kind == "quadratic":
            return self.mu * (x - self._xi(x))
        E = float(free_energy(x, self.potential, self.basis))
        return free_energy_grad(x, self.potential, self.basis) / (self.M**2 + E)

    def hess(self, x) -> np.ndarray:
        x = _coeffs(x)
        if self.kind == "quadratic":
            return self.mu * np.eye(x.size)
        E = float(free_energy(x, self.potential, self.basis))
        dE = free_energy_grad(x, self.potential, self.basis)
        s = self.M**2 + E
        return free_energy_hess(x, self.potential, self.basis) / s - np.outer(dE, dE) / s**2


@dataclass
class GeneratorValue:
    total: float
    drift_term: float
    gradient_term: float
    trace_term: float


def transformed_generator(f: RadialTestFn, x, model: ModelSpec) -> GeneratorValue:
    """Exact ``H_n f(x)`` in the truncation, split into its three terms."""
    c = _coeffs(x)
    Df = f.grad(c)
    b = models.drift(c, model)
    B = models.diffusion_matrix(c, model)
    t1 = float(Df @ b)
    BtD = B.T @ Df
    t2 = 0.5 * float(BtD @ BtD)
    if math.isinf(model.n):
        t3 = 0.0
    else:
        t3 = float(np.trace(B.T @ f.hess(c) @ B)) / (2.0 * model.n)
    return GeneratorValue(t1 + t2 + t3, t1, t2, t3)


def lyapunov_bound(model: ModelSpec) -> float:
    """Closed-form upper bound on ``H_n f_n`` for the log-free-energy test function."""
    d, m, n = model.dim, model.m, model.n
    return (4.0**d * math.pi ** (2 * d) * (1 + m) ** (4 * d) / (6.0 * n)
            + m ** (3 * d) / n * model.potential.sup_d2)


@dataclass
class LyapunovCheck:
    value: float
    bound: float
    passed: bool
    witness: np.ndarray | None = None


def lyapunov_bound_check(x, model: ModelSpec, tol: float = 1e-8) -> LyapunovCheck:
    if model.family != "allen-cahn":
        raise ValueError("the Lyapunov bound applies to the allen-cahn family")
    f = RadialTestFn.for_model(model)
    val = transformed_generator(f, x, model).total
    bound = lyapunov_bound(model)
    ok = val <= bound + tol
    return LyapunovCheck(val, bound, ok, None if ok else _coeffs(x).copy())


def poincare_check(x, dim: int | None = None, m: int | None = None) -> tuple[float, float]:
    """``(|x - mean x|, |grad x| / (2 pi))``; the constant ``1/(2 pi)`` is sharp on the unit torus."""
    if isinstance(x, SpectralField):
        dim, m = x.dim, x.m
    c = _coeffs(x)
    basis = get_basis(dim, m)
    lhs = math.sqrt(float(np.sum(c[1:] ** 2)))
    rhs = math.sqrt(float(np.sum(basis.lam_sum * c * c))) / TWO_PI
    return lhs, rhs


# --------------------------------------------------------------------------- containment


@dataclass
class ContainmentCell:
    n: float
    trials: int
    exceed: int
    aborted: int

    @property
    def frequency(self) -> float:
        return self.exceed / self.trials

    @property
    def censored(self) -> bool:
        return self.exceed == 0

    @property
    def upper_bound(self) -> float:
        return max(self.exceed, 1) / self.trials

    def to_dict(self) -> dict:
        return {"n": self.n, "trials": self.trials, "exceed": self.exceed, "aborted": self.aborted,
                "frequency": self.frequency, "censored": self.censored, "upper_bound": self.upper_bound}


@dataclass
class SlopeFit:
    slope: float | None
    intercept: float | None
    std_error: float | None
    used: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "std_error": self.std_error, "used": self.used}


def fit_log_frequency(ns, counts, trials, min_count: int = 5) -> SlopeFit:
    """Weighted least squares of ``log(frequency)`` against ``n`` over cells with enough hits.

    Weights are the inverse delta-method variances ``count / (1 - p)``.
    """
    ns = np.asarray(ns, dtype=float)
    counts = np.asarray(counts, dtype=float)
    trials = np.broadcast_to(np.asarray(trials, dtype=float), ns.shape)
    use = counts >= min_count
    if use.sum() < 2:
        return SlopeFit(None, None, None, ns[use].tolist())
    p = counts[use] / trials[use]
    y = np.log(p)
    var = np.maximum((1 - p) / counts[use], 1e-12)
    w = 1.0 / var
    X = np.stack([np.ones(use.sum()), ns[use]], axis=1)
    A = X.T @ (w[:, None] * X)
    beta = np.linalg.solve(A, X.T @ (w * y))
    cov = np.linalg.inv(A)
    return SlopeFit(float(beta[1]), float(beta[0]), float(math.sqrt(cov[1, 1])), ns[use].tolist())


@dataclass
class ContainmentReport:
    C0: float
    C1: float
    cells: list
    fit: SlopeFit

    @property
    def strictly_decreasing(self) -> bool:
        f = [c.frequency for c in self.cells]
        return all(f[i + 1] < f[i] for i in range(len(f) - 1))

    def to_dict(self) -> dict:
        return {"C0": self.C0, "C1": self.C1, "cells": [c.to_dict() for c in self.cells],
                "fit": self.fit.to_dict(), "strictly_decreasing": self.strictly_decreasing}


def max_free_energy(model: ModelSpec):
    """Path functional: supremum of the free energy over the time grid."""
    def functional(path):
        return np.max(free_energy(path.states, model.potential, model.basis), axis=-1)
    return functional


def containment_experiment(model: ModelSpec, x0, C1: float | list, T: float, n_list, ensemble: int,
                           dt: float = 1e-3, seed: int = 0, budget: float = 1.0,
                           scheme: str = "semi-implicit-linear") -> list[ContainmentReport]:
    """Exceedance frequencies of ``sup_t E(X_n(t)) > C1`` for each ``n`` (one report per ``C1``).

    Every level shares the same simulated paths, so larger ``C1`` can never exceed more often.
    """
    c = _coeffs(x0)
    C0 = float(free_energy(c, model.potential, model.basis))
    levels = [float(v) for v in np.atleast_1d(C1)]
    counts = {lv: [] for lv in levels}
    for n in n_list:
        spec = model.with_n(float(n))
        if model.is_spde and not math.isinf(spec.n):
            res = models.scaling_check(spec.family, spec.m, spec.n, spec.dim, budget)
            if not res.passed:
                raise models.ConditionError(f"scaling check failed at n = {n}: ratio {res.ratio:.6g} > {budget}")
        cfg = SimConfig(dt=dt, T=T, scheme=scheme, seed=seed, ensemble=ensemble)
        out = simulate_ensemble(c, spec, cfg, functional=max_free_energy(spec))
        sup_e = out.values
        for lv in levels:
            hit = int(np.sum(sup_e[~out.aborted] > lv))
            counts[lv].append(ContainmentCell(float(n), int((~out.aborted).sum()), hit, int(out.aborted.sum())))
    reports = []
    for lv in levels:
        cells = counts[lv]
        fit = fit_log_frequency([c.n for c in cells], [c.exceed for c in cells], [c.trials for c in cells])
        reports.append(ContainmentReport(C0, lv, cells, fit))
    return reports
