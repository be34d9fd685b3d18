"""Semigroup-adapted distance ``d(x, y) = inf_t {t + |x - S(t) y|}`` and its smoothings.

``h_eps`` replaces the norm by ``phi_eps(|.|^2)`` (a C^1 square root that is quadratic
below ``eps``); ``h_n_eps`` is the soft-min ``-(1/a) log int exp(-a(...)) dt``, evaluated by
composite Gauss-Legendre quadrature in log space.  The property suites check each
quantitative bound on random samples and report ``{suite, samples, max_violation, pass}``.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import linalg, optimize
from scipy.special import logsumexp

SCAN_POINTS = 256
T_TOL = 1e-10


@dataclass(frozen=True)
class SemigroupHandle:
    """Linear (or user-supplied) contraction semigroup ``S(t)``.

    ``spectral-linear``: ``S(t) x = exp(-rates t) x`` per mode.
    ``finite-dim-linear``: ``S(t) x = expm(A t) x`` with ``A + A^T <= 0``.
    ``explicit-map``: ``S(t) x = fn(t, x)`` for a user-supplied contraction.
    """

    kind: str
    rates: tuple | None = None
    matrix: tuple | None = None
    fn: Callable | None = None

    def __post_init__(self):
        if self.kind == "spectral-linear":
            r = np.asarray(self.rates, dtype=float)
            if np.any(r < 0):
                raise ValueError("decay rates must be nonnegative")
            object.__setattr__(self, "rates", tuple(r.tolist()))
        elif self.kind == "finite-dim-linear":
            A = np.asarray(self.matrix, dtype=float)
            if np.max(np.linalg.eigvalsh(A + A.T)) > 1e-12:
                raise ValueError("matrix is not dissipative")
            object.__setattr__(self, "matrix", tuple(map(tuple, A.tolist())))
        elif self.kind == "explicit-map":
            if self.fn is None:
                raise ValueError("explicit-map needs fn(t, x)")
        else:
            raise ValueError(f"unknown semigroup kind {self.kind!r}")

    @classmethod
    def scalar_decay(cls, rate: float = 1.0) -> "SemigroupHandle":
        return cls("spectral-linear", rates=(rate,))

    @classmethod
    def heat(cls, dim: int = 1, m: int = 5) -> "SemigroupHandle":
        from smallnoise.spectral import get_basis
        return cls("spectral-linear", rates=tuple(get_basis(dim, m).lam_sum.tolist()))

    @classmethod
    def identity(cls, size: int = 1) -> "SemigroupHandle":
        return cls("spectral-linear", rates=(0.0,) * size)

    @property
    def size(self) -> int | None:
        if self.kind == "spectral-linear":
            return len(self.rates)
        if self.kind == "finite-dim-linear":
            return len(self.matrix)
        return None

    def apply(self, t: float, y) -> np.ndarray:
        return self.apply_many(np.array([t]), y)[0]

    def apply_many(self, ts, y) -> np.ndarray:
        """``S(t) y`` for every ``t`` in ``ts``; shape ``(len(ts), len(y))``."""
        ts = np.asarray(ts, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind == "spectral-linear":
            return np.exp(-np.outer(ts, np.asarray(self.rates))) * y
        if self.kind == "finite-dim-linear":
            A = np.asarray(self.matrix)
            return np.einsum("tij,j->ti", linalg.expm(ts[:, None, None] * A), y)
        return np.stack([np.asarray(self.fn(t, y), dtype=float) for t in ts])

    def kink_times(self, x, y) -> list[float]:
        """Times where ``x = S(t) y`` exactly (scalar decay only); the objective has a corner there."""
        if self.kind != "spectral-linear" or len(self.rates) != 1:
            return []
        lam = self.rates[0]
        x, y = float(np.ravel(x)[0]), float(np.ravel(y)[0])
        if lam > 0 and x != 0 and y / x >= 1:
            return [math.log(y / x) / lam]
        return []


# --------------------------------------------------------------------------- phi_eps


def _check_r(r):
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("phi_eps needs r >= 0")
    return r


def phi_eps(r, eps: float):
    """C^1 regularised square root: quadratic Taylor-type blend on ``[0, eps)``, ``sqrt(r)`` above."""
    r = _check_r(r)
    se = math.sqrt(eps)
    d = r - eps
    low = se + d / (2 * se) - d * d / (8 * eps * se)
    return np.where(r < eps, low, np.sqrt(np.maximum(r, eps)))


def phi_eps_d1(r, eps: float):
    r = _check_r(r)
    se = math.sqrt(eps)
    low = 1 / (2 * se) - (r - eps) / (4 * eps * se)
    return np.where(r < eps, low, 0.5 / np.sqrt(np.maximum(r, eps)))


def phi_eps_d2(r, eps: float):
    r = _check_r(r)
    se = math.sqrt(eps)
    return np.where(r < eps, -1 / (4 * eps * se), -0.25 / np.maximum(r, eps) ** 1.5)


# --------------------------------------------------------------------------- inf over t


@dataclass
class MinResult:
    value: float
    t: float


def _minimise(obj: Callable[[np.ndarray], np.ndarray], upper: float, extra=()) -> MinResult:
    """Global minimum on ``[0, upper]``: dense scan, Brent around every scan minimum, and exact candidates."""
    upper = max(upper, 0.0)
    if upper == 0.0:
        return MinResult(float(obj(np.array([0.0]))[0]), 0.0)
    # uniform scan plus geometric points near t = 0, where fast modes of S(t) act
    ts = np.union1d(np.linspace(0.0, upper, SCAN_POINTS), upper * np.geomspace(1e-8, 1.0, SCAN_POINTS // 4))
    vals = obj(ts)
    cand_t = [0.0, upper] + [t for t in extra if 0.0 <= t <= upper]
    cand_v = [float(vals[0]), float(vals[-1])] + [float(obj(np.array([t]))[0]) for t in cand_t[2:]]
    interior = np.nonzero((vals[1:-1] <= vals[:-2]) & (vals[1:-1] <= vals[2:]))[0] + 1
    for i in interior:
        r = optimize.minimize_scalar(lambda t: float(obj(np.array([t]))[0]), bounds=(ts[i - 1], ts[i + 1]),
                                     method="bounded", options={"xatol": T_TOL})
        cand_t.append(float(r.x))
        cand_v.append(float(r.fun))
    k = int(np.argmin(cand_v))
    return MinResult(cand_v[k], cand_t[k])


def tataru_distance(x, y, S: SemigroupHandle, extra_times=()) -> MinResult:
    """``inf_{t >= 0} t + |x - S(t) y|``; the minimiser lies in ``[0, |x - y|]``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))

    def obj(ts):
        return ts + np.linalg.norm(x - S.apply_many(ts, y), axis=-1)

    return _minimise(obj, float(np.linalg.norm(x - y)), list(extra_times) + S.kink_times(x, y))


def h_eps(x, y, eps: float, S: SemigroupHandle, extra_times=()) -> MinResult:
    """``inf_t t + phi_eps(|x - S(t) y|^2)``; the minimiser lies in ``[0, |x - y| + sqrt(eps)]``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))

    def obj(ts):
        d = x - S.apply_many(ts, y)
        return ts + phi_eps(np.sum(d * d, axis=-1), eps)

    return _minimise(obj, float(np.linalg.norm(x - y)) + math.sqrt(eps), extra_times)


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


def _quadrature(upper: float, panels: int = 256):
    # uniform panels plus geometric ones near t = 0, where fast modes of S(t) y move
    geo = upper * np.geomspace(1e-6, 1.0, 33)
    edges = np.union1d(np.linspace(0.0, upper, panels + 1), geo)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    t = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
    w = (half[:, None] * _GL_WEIGHTS[None, :]).ravel()
    return t, w


def _soft_min_terms(x, y, eps, a, S, panels):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if a <= 1 or eps <= 0:
        raise ValueError("need a > 1 and eps > 0")
    upper = float(np.linalg.norm(x - y)) + math.sqrt(eps) + 40.0 / a
    t, w = _quadrature(upper, panels)
    d = x - S.apply_many(t, y)
    r2 = np.sum(d * d, axis=-1)
    logw = np.log(w) - a * (t + phi_eps(r2, eps))
    return logw, d, r2


def h_n_eps(x, y, eps: float, a: float, S: SemigroupHandle, panels: int = 256) -> float:
    """``-(1/a) log int_0^inf exp(-a (t + phi_eps(|x - S(t) y|^2))) dt``."""
    logw, _, _ = _soft_min_terms(x, y, eps, a, S, panels)
    return float(-logsumexp(logw) / a)


def grad_h_n_eps(x, y, eps: float, a: float, S: SemigroupHandle, panels: int = 256) -> np.ndarray:
    """Gradient in ``x``: the Gibbs average of ``2 phi_eps'(|d|^2) d`` with ``d = x - S(t) y``."""
    logw, d, r2 = _soft_min_terms(x, y, eps, a, S, panels)
    p = np.exp(logw - logsumexp(logw))
    return np.sum((p * 2.0 * phi_eps_d1(r2, eps))[:, None] * d, axis=0)


# --------------------------------------------------------------------------- property suites


@dataclass
class SuiteReport:
    suite: str
    samples: int
    max_violation: float
    tol: float
    witness: dict | None = None

    @property
    def passed(self) -> bool:
        return self.max_violation <= self.tol

    def to_dict(self) -> dict:
        out = {"suite": self.suite, "samples": self.samples, "max_violation": self.max_violation,
               "pass": self.passed}
        if self.witness is not None and not self.passed:
            out["witness"] = self.witness
        return out


def _report(name, viols, witnesses, tol):
    viols = np.asarray(viols, dtype=float)
    k = int(np.argmax(viols))
    return SuiteReport(name, int(viols.size), float(max(viols[k], 0.0)), tol, witnesses[k])


def _sample(rng, S: SemigroupHandle, scale: float = 2.0) -> np.ndarray:
    size = S.size or 1
    return scale * rng.standard_normal(size)


def directional_bound_check(x, y, S: SemigroupHandle, r_list=(1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6),
                            tol: float = 1e-8) -> SuiteReport:
    """``(d(S(r) x, y) - d(x, y)) / r <= 1`` for every listed step."""
    d0 = tataru_distance(x, y, S)
    viols, wit = [], []
    for r in r_list:
        xr = S.apply(r, x)
        d1 = tataru_distance(xr, y, S, extra_times=(d0.t + r,))
        viols.append((d1.value - d0.value) / r - 1.0)
        wit.append({"r": r})
    return _report("directional-quotient", viols, wit, tol)


def suite_phi_bound(eps_list=(1e-1, 1e-2, 1e-3), points: int = 2001, tol: float = 1e-12) -> SuiteReport:
    viols, wit = [], []
    for eps in eps_list:
        r = np.concatenate([np.linspace(0.0, 10 * math.sqrt(eps), points), np.linspace(0.0, 10.0, points)])
        q = r * phi_eps_d1(r * r, eps)
        v = np.maximum(q - 0.5, -q)
        k = int(np.argmax(v))
        viols.append(float(v[k]))
        wit.append({"eps": eps, "r": float(r[k])})
    rep = _report("phi-eps-derivative", viols, wit, tol)
    rep.samples = 2 * points * len(eps_list)
    return rep


def suite_gradient_bound(S: SemigroupHandle, samples: int = 500, eps: float = 1e-2, a_list=(10.0, 100.0),
                         seed: int = 0, tol: float = 1e-8) -> SuiteReport:
    rng = np.random.default_rng(seed)
    viols, wit = [], []
    for i in range(samples):
        x, y = _sample(rng, S), _sample(rng, S)
        a = a_list[i % len(a_list)]
        viols.append(float(np.linalg.norm(grad_h_n_eps(x, y, eps, a, S))) - 1.0)
        wit.append({"x": x.tolist(), "y": y.tolist(), "a": a})
    return _report("soft-min-gradient", viols, wit, tol)


def suite_lipschitz(S: SemigroupHandle, samples: int = 500, seed: int = 1, tol: float = 1e-8) -> SuiteReport:
    rng = np.random.default_rng(seed)
    viols, wit = [], []
    for _ in range(samples):
        x, y = _sample(rng, S), _sample(rng, S)
        xh = x + 0.3 * rng.standard_normal(x.shape)
        yh = y + 0.3 * rng.standard_normal(y.shape)
        lhs = abs(tataru_distance(x, y, S).value - tataru_distance(xh, yh, S).value)
        viols.append(lhs - (np.linalg.norm(x - xh) + np.linalg.norm(y - yh)))
        wit.append({"x": x.tolist(), "y": y.tolist()})
    return _report("distance-lipschitz", viols, wit, tol)


def suite_directional(S: SemigroupHandle, samples: int = 500, seed: int = 2, tol: float = 1e-8) -> SuiteReport:
    rng = np.random.default_rng(seed)
    r_list = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6)
    viols, wit = [], []
    for _ in range(samples):
        x, y = _sample(rng, S), _sample(rng, S)
        rep = directional_bound_check(x, y, S, r_list, tol)
        viols.append(rep.max_violation)
        wit.append({"x": x.tolist(), "y": y.tolist()})
    rep = _report("directional-quotient", viols, wit, tol)
    rep.samples = samples * len(r_list)
    return rep


def suite_clamp(S: SemigroupHandle, samples: int = 500, c: float = 2.0, eps: float = 1e-2,
                a_list=(2.0, 10.0, 100.0), seed: int = 3, tol: float = 1e-8) -> SuiteReport:
    rng = np.random.default_rng(seed)
    viols, wit = [], []
    for i in range(samples):
        y = _sample(rng, S, 1.0)
        u = rng.standard_normal(y.shape)
        u /= np.linalg.norm(u)
        x = u * (np.linalg.norm(y) + c + rng.exponential(1.0))
        a = a_list[i % len(a_list)]
        viols.append(c - h_n_eps(x, y, eps, a, S))
        wit.append({"x": x.tolist(), "y": y.tolist(), "a": a})
    return _report("soft-min-clamp", viols, wit, tol)


def suite_eps_uniform(S: SemigroupHandle, samples: int = 500, eps_list=(1e-1, 1e-2, 1e-3), seed: int = 4,
                      tol: float = 1e-8) -> SuiteReport:
    rng = np.random.default_rng(seed)
    viols, wit = [], []
    for i in range(samples):
        x, y = _sample(rng, S), _sample(rng, S)
        if i % 5 == 0:
            y = x + 1e-3 * rng.standard_normal(x.shape)
        eps = eps_list[i % len(eps_list)]
        gap = abs(h_eps(x, y, eps, S).value - tataru_distance(x, y, S).value)
        viols.append(gap - 0.375 * math.sqrt(eps))
        wit.append({"x": x.tolist(), "y": y.tolist(), "eps": eps})
    return _report("smoothing-uniform", viols, wit, tol)


def run_suites(samples: int = 500, seed: int = 0, m: int = 5) -> list[SuiteReport]:
    """All standing suites for the scalar decay and the spectral heat semigroups."""
    out = [suite_phi_bound()]
    for name, S in (("scalar", SemigroupHandle.scalar_decay()), ("heat", SemigroupHandle.heat(1, m))):
        for fn in (suite_gradient_bound, suite_lipschitz, suite_directional, suite_clamp, suite_eps_uniform):
            rep = fn(S, samples=samples, seed=seed + zlib.crc32(fn.__name__.encode()) % 1000)
            rep.suite = f"{rep.suite}/{name}"
            out.append(rep)
    return out
