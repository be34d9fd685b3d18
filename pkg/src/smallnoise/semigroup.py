"""Log-moment semigroup estimates, control values, and 1-D Hamilton-Jacobi resolvents.

* :func:`vn_estimate`: Monte Carlo ``(1/n) log E[exp(n f(X_n(t)))]``.
* :func:`v_control`: ``sup{ f(x(t)) - action }`` over controlled paths, a certified lower
  bound on the limit semigroup value (Simpson action is exact for linear drift).
* :func:`resolvent_1d`: semi-Lagrangian value iteration for the discounted control problem
  ``R_alpha h``, with Howard policy-evaluation steps.
* :func:`semigroup_iterate`: ``R_{t/k}^k h``; :func:`rate_from_semigroup` turns it into a lower
  bound on the transition cost by sweeping a test-function family.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, sparse
from scipy.sparse.linalg import spsolve

from smallnoise import models
from smallnoise.models import ModelSpec
from smallnoise.rate import action, deterministic_flow, maximize_terminal_reward, minimize_action
from smallnoise.simulator import SimConfig, simulate_ensemble

FAMILIES = ("constant", "clipped-quadratic", "radial-gaussian")


@dataclass(frozen=True)
class TestFunctional:
    """Bounded test function on the state space.

    ``clipped-quadratic``: ``clip(f0 + <p, x - y> - c |x - y|^2, -L, L)`` (``c = 0`` gives the
    clipped linear family, ``p = 0`` the clipped quadratic well).
    ``radial-gaussian``: ``A exp(-|x - y|^2 / (2 w^2))``.
    ``constant``: ``f0``.
    """

    __test__ = False  # not a pytest class

    kind: str = "clipped-quadratic"
    p: tuple = (0.0,)
    y: tuple = (0.0,)
    c: float = 0.0
    f0: float = 0.0
    L: float = 1.0
    A: float = 1.0
    w: float = 1.0

    def __post_init__(self):
        if self.kind not in FAMILIES:
            raise ValueError(f"unknown test functional {self.kind!r}")
        object.__setattr__(self, "p", tuple(float(v) for v in np.atleast_1d(self.p)))
        object.__setattr__(self, "y", tuple(float(v) for v in np.atleast_1d(self.y)))
        if self.kind == "clipped-quadratic" and (self.L <= 0 or self.c < 0):
            raise ValueError("clipped-quadratic needs L > 0 and c >= 0")

    @classmethod
    def linear(cls, p, L: float, y=None) -> "TestFunctional":
        p = np.atleast_1d(np.asarray(p, dtype=float))
        return cls("clipped-quadratic", tuple(p), tuple(np.zeros_like(p) if y is None else np.atleast_1d(y)), 0.0, 0.0, L)

    @classmethod
    def quadratic(cls, c: float, y, L: float) -> "TestFunctional":
        y = np.atleast_1d(np.asarray(y, dtype=float))
        return cls("clipped-quadratic", tuple(np.zeros_like(y)), tuple(y), c, 0.0, L)

    @classmethod
    def constant(cls, value: float) -> "TestFunctional":
        return cls("constant", f0=value)

    @property
    def sup_norm(self) -> float:
        if self.kind == "constant":
            return abs(self.f0)
        if self.kind == "radial-gaussian":
            return abs(self.A)
        return self.L

    def _raw(self, x):
        x = np.asarray(x, dtype=float)
        d = x - np.asarray(self.y)
        return self.f0 + d @ np.asarray(self.p) - self.c * np.sum(d * d, axis=-1), d

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "constant":
            return np.full(x.shape[:-1], self.f0)
        if self.kind == "radial-gaussian":
            d = x - np.asarray(self.y)
            return self.A * np.exp(-np.sum(d * d, axis=-1) / (2 * self.w**2))
        raw, _ = self._raw(x)
        return np.clip(raw, -self.L, self.L)

    def grad(self, x) -> np.ndarray:
        """Gradient, taking the zero subgradient where the clip is active."""
        x = np.asarray(x, dtype=float)
        if self.kind == "constant":
            return np.zeros_like(x)
        d = x - np.asarray(self.y)
        if self.kind == "radial-gaussian":
            return -(self(x) / self.w**2)[..., None] * d
        raw, _ = self._raw(x)
        g = np.asarray(self.p) - 2 * self.c * d
        return np.where((np.abs(raw) < self.L)[..., None], g, 0.0)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "p": list(self.p), "y": list(self.y), "c": self.c, "f0": self.f0,
                "L": self.L, "A": self.A, "w": self.w}

    @classmethod
    def from_dict(cls, d: dict) -> "TestFunctional":
        return cls(**{**d, "p": tuple(d.get("p", (0.0,))), "y": tuple(d.get("y", (0.0,)))})


# --------------------------------------------------------------------------- Monte Carlo side


@dataclass
class VnEstimate:
    value: float
    std_error: float
    members: int
    aborted: int


def log_mean_exp(a: np.ndarray) -> float:
    """``log(mean(exp(a)))`` with the maximum subtracted."""
    a = np.asarray(a, dtype=float)
    top = float(np.max(a))
    return top + math.log(float(np.mean(np.exp(a - top))))


def vn_estimate(t: float, f: TestFunctional, x0, model: ModelSpec, ensemble: int, dt: float = 0.01,
                seed: int = 0, scheme: str = "semi-implicit-linear", blocks: int = 10) -> VnEstimate:
    """``(1/n) log`` of the ensemble mean of ``exp(n f(X_n(t)))`` with a block jackknife error."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if math.isinf(model.n):
        raise ValueError("vn_estimate needs a finite noise scale")
    if t == 0:
        return VnEstimate(float(f(x0)), 0.0, ensemble, 0)
    if ensemble < 2:
        raise ValueError("need at least two members for an error estimate")
    cfg = SimConfig(dt=dt, T=t, scheme=scheme, seed=seed, ensemble=ensemble)
    res = simulate_ensemble(x0, model, cfg, functional=lambda p: f(p.endpoint), endpoint_only=True)
    v = res.finite_values
    if v.size == 0:
        raise RuntimeError("every ensemble member aborted")
    n = model.n
    a = n * v
    value = log_mean_exp(a) / n
    blocks = min(blocks, v.size)
    parts = np.array_split(np.arange(v.size), blocks)
    loo = np.array([log_mean_exp(np.delete(a, idx)) / n for idx in parts])
    se = math.sqrt((blocks - 1) / blocks * float(np.sum((loo - loo.mean()) ** 2)))
    return VnEstimate(value, se, int(v.size), int(res.aborted.sum()))


# --------------------------------------------------------------------------- control side


@dataclass
class ControlValue:
    value: float
    path: object
    converged: bool
    iterations: int


def _reward_targets(f: TestFunctional, dim: int) -> list[np.ndarray]:
    """Points where ``f`` peaks, used to seed the path optimiser away from clipped plateaus."""
    if f.kind == "constant":
        return []
    y = np.broadcast_to(np.asarray(f.y), (dim,)).astype(float)
    if f.kind == "radial-gaussian":
        return [y]
    p = np.broadcast_to(np.asarray(f.p), (dim,)).astype(float)
    if f.c > 0:
        return [y, y + p / (2 * f.c)]
    pp = float(p @ p)
    if pp == 0:
        return [y]
    # where the unclipped linear part reaches the cap, and halfway there
    z = y + p * (f.L - f.f0) / pp
    return [y, 0.5 * (y + z), z]


def v_control(t: float, f: TestFunctional, x0, model: ModelSpec, slices: int = 64, tol: float = 1e-6,
              max_iter: int = 20000) -> ControlValue:
    """``max f(x(t)) - action`` over discretised controlled paths starting at ``x0``.

    The optimiser is started from the best of the deterministic flow and the minimum-action
    paths to the peak points of ``f``; the returned value is attained by an explicit path.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if t == 0:
        return ControlValue(float(f(x0)), None, True, 0)
    if f.kind == "constant":
        # zero control: the free flow costs nothing
        return ControlValue(float(f.f0), deterministic_flow(x0, model, np.linspace(0.0, t, slices + 1)), True, 0)

    def reward(x):
        return float(f(x)), f.grad(x)

    starts = [deterministic_flow(x0, model, np.linspace(0.0, t, slices + 1))]
    for z in _reward_targets(f, x0.size):
        starts.append(minimize_action(x0, z, t, model, slices, max_iter=2000)[0])
    scores = [float(f(p.states[-1])) - action(p, model).total for p in starts]
    init = starts[int(np.argmax(scores))]
    path, value, res = maximize_terminal_reward(x0, t, model, slices, reward, init=init, tol=tol,
                                                max_iter=max_iter)
    return ControlValue(value, path, res.converged, res.iterations)


# --------------------------------------------------------------------------- 1-D resolvent


@dataclass(frozen=True)
class Grid1D:
    a: float
    b: float
    points: int

    def __post_init__(self):
        if self.points < 16:
            raise ValueError("a grid needs at least 16 points")
        if not self.b > self.a:
            raise ValueError("grid interval must satisfy a < b")

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.a, self.b, self.points)

    @property
    def h(self) -> float:
        return (self.b - self.a) / (self.points - 1)


@dataclass
class ResolventResult:
    values: np.ndarray
    iterations: int
    residual: float
    controls: np.ndarray
    u_max: float
    boundary_hit: bool
    contraction: list = field(default_factory=list)


def _require_1d(model: ModelSpec):
    if model.family != "finite-dim-fw" or model.fw.d != 1:
        raise ValueError("resolvent_1d needs a one-dimensional finite-dim-fw model")


def _interp_weights(grid: Grid1D, z: np.ndarray):
    """Linear-interpolation neighbours and weights with constant extrapolation."""
    s = np.clip((z - grid.a) / grid.h, 0.0, grid.points - 1)
    i = np.minimum(np.floor(s).astype(int), grid.points - 2)
    w = s - i
    return i, w


class _Bellman:
    """Exact maximisation of the semi-Lagrangian objective over the control box."""

    def __init__(self, h: np.ndarray, alpha: float, model: ModelSpec, grid: Grid1D, ds: float,
                 u_max: float, samples: int):
        self.grid = grid
        self.x = grid.x
        self.gamma = math.exp(-ds / alpha)
        self.run_weight = alpha * (1.0 - self.gamma)  # integral of exp(-s/alpha) over one sub-step
        scale = alpha * math.expm1(ds / alpha)
        self.shift = scale * model.fw.b(self.x[:, None])[:, 0]
        self.kappa = scale * float(model.fw.sigma_matrix[0, 0])
        self.reward = (1.0 - self.gamma) * h
        self.u_max = u_max
        self.samples = np.linspace(-u_max, u_max, samples)

    def _candidates(self, f: np.ndarray) -> np.ndarray:
        grid, kappa = self.grid, self.kappa
        cands = [np.broadcast_to(self.samples, (self.x.size, self.samples.size))]
        if kappa == 0:
            return np.concatenate(cands + [np.zeros((self.x.size, 1))], axis=1)
        nodes = grid.x
        slopes = np.diff(f) / grid.h
        # segment j spans [z_{j-1}, z_j]; j = 0 and j = points are the flat extrapolations
        lo_z = np.concatenate([[-np.inf], nodes])
        hi_z = np.concatenate([nodes, [np.inf]])
        seg_slope = np.concatenate([[0.0], slopes, [0.0]])
        ustar = self.gamma * seg_slope * kappa / self.run_weight
        # only segments reachable from x_i inside the control box
        reach = abs(kappa) * self.u_max
        centre = self.x + self.shift
        first = np.floor((centre - reach - grid.a) / grid.h).astype(int)
        width = int(math.ceil(2 * reach / grid.h)) + 3
        j = np.clip(first[:, None] + np.arange(width)[None, :], 0, grid.points)
        a = (lo_z[j] - centre[:, None]) / kappa
        b = (hi_z[j] - centre[:, None]) / kappa
        ulo, uhi = np.minimum(a, b), np.maximum(a, b)
        u = np.clip(np.clip(ustar[j], ulo, uhi), -self.u_max, self.u_max)
        cands.append(u)
        return np.concatenate(cands, axis=1)

    def objective(self, f: np.ndarray, u: np.ndarray) -> np.ndarray:
        z = self.x[:, None] + self.shift[:, None] + self.kappa * u
        return (self.reward[:, None] - self.run_weight * 0.5 * u * u
                + self.gamma * np.interp(z, self.grid.x, f))

    def apply(self, f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        u = self._candidates(f)
        vals = self.objective(f, u)
        k = np.argmax(vals, axis=1)
        rows = np.arange(self.x.size)
        return vals[rows, k], u[rows, k]

    def evaluate_policy(self, u: np.ndarray) -> np.ndarray:
        """Solve ``f = r(u) + gamma P(u) f`` for a fixed feedback control."""
        z = self.x + self.shift + self.kappa * u
        i, w = _interp_weights(self.grid, z)
        n = self.x.size
        rows = np.concatenate([np.arange(n), np.arange(n)])
        cols = np.concatenate([i, i + 1])
        vals = np.concatenate([1.0 - w, w])
        P = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
        A = sparse.identity(n, format="csr") - self.gamma * P
        rhs = self.reward - self.run_weight * 0.5 * u * u
        return spsolve(A.tocsc(), rhs)


def resolvent_1d(h: np.ndarray, alpha: float, model: ModelSpec, grid: Grid1D, ds: float | None = None,
                 u_max: float = 8.0, samples: int = 129, tol: float = 1e-8, max_iter: int = 10000,
                 f0: np.ndarray | None = None, retry: bool = True) -> ResolventResult:
    """Fixed point of the discounted semi-Lagrangian Bellman operator for ``R_alpha h``."""
    _require_1d(model)
    h = np.asarray(h, dtype=float)
    if h.shape != (grid.points,):
        raise ValueError("h must hold one value per grid point")
    ds = alpha / 8.0 if ds is None else ds
    op = _Bellman(h, alpha, model, grid, ds, u_max, samples)
    f = h.copy() if f0 is None else np.asarray(f0, dtype=float).copy()
    contraction = []
    residual = math.inf
    it = 0
    for it in range(1, max_iter + 1):
        tf, u = op.apply(f)
        residual = float(np.max(np.abs(tf - f)))
        if residual <= tol:
            f = tf
            break
        # Howard step: value of the greedy feedback control, solved exactly
        fp = op.evaluate_policy(u)
        f = fp if np.all(np.isfinite(fp)) else tf
        contraction.append(residual)
    _, u = op.apply(f)
    boundary = bool(np.any(np.abs(u) >= u_max * (1 - 1e-12)))
    if boundary and retry:
        return resolvent_1d(h, alpha, model, grid, ds, 2 * u_max, samples, tol, max_iter, f, retry=False)
    return ResolventResult(f, it, residual, u, u_max, boundary, contraction)


def bellman_operator(h: np.ndarray, alpha: float, model: ModelSpec, grid: Grid1D, f: np.ndarray,
                     ds: float | None = None, u_max: float = 8.0, samples: int = 129) -> np.ndarray:
    """One application of the Bellman operator ``T_alpha`` (exposed for contraction checks)."""
    _require_1d(model)
    ds = alpha / 8.0 if ds is None else ds
    return _Bellman(np.asarray(h, dtype=float), alpha, model, grid, ds, u_max, samples).apply(np.asarray(f, dtype=float))[0]


@dataclass
class IterateResult:
    values: np.ndarray
    k: int
    flagged: bool


def semigroup_iterate(h: np.ndarray, t: float, k: int, model: ModelSpec, grid: Grid1D, **kw) -> IterateResult:
    """``(I - (t/k) H)^{-k} h`` by ``k`` successive resolvents."""
    f = np.asarray(h, dtype=float)
    flagged = False
    for _ in range(k):
        res = resolvent_1d(f, t / k, model, grid, f0=f, **kw)
        f = res.values
        flagged |= res.boundary_hit
    return IterateResult(f, k, flagged)


@dataclass
class DoublingReport:
    ks: list
    iterates: list
    differences: list
    extrapolated: np.ndarray

    @property
    def monotone(self) -> bool:
        d = self.differences
        return all(d[i + 1] < d[i] for i in range(len(d) - 1))


def semigroup_doubling(h: np.ndarray, t: float, ks, model: ModelSpec, grid: Grid1D, **kw) -> DoublingReport:
    """Iterates at each ``k`` plus sup-norm differences between successive ``k``."""
    ks = list(ks)
    its = [semigroup_iterate(h, t, k, model, grid, **kw).values for k in ks]
    diffs = [float(np.max(np.abs(its[i + 1] - its[i]))) for i in range(len(its) - 1)]
    extrap = 2 * its[-1] - its[-2] if len(its) > 1 else its[-1]
    return DoublingReport(ks, its, diffs, extrap)


# --------------------------------------------------------------------------- duality


RICHARDSON_WEIGHTS = {1: (1.0,), 2: (2.0, -1.0), 3: (8.0 / 3.0, -2.0, 1.0 / 3.0)}


def extrapolated_semigroup(f, t: float, k: int, model: ModelSpec, grid: Grid1D, k_levels: int = 3,
                           refine_grid: bool = True, **kw) -> np.ndarray:
    """``V(t) f`` on the nodes of ``grid`` with Richardson extrapolation.

    The monotone scheme has an error expansion in powers of ``1/k`` (resolvent iteration)
    and a first-order error in the grid spacing (interpolation acts like numerical viscosity
    when a sub-step moves less than one cell).  ``k_levels`` iterates at ``k, k/2, k/4, ...``
    are combined to cancel the ``1/k`` (and ``1/k^2``) terms; with ``refine_grid`` the same is
    done on the grid with halved spacing and combined as ``2 V_{h/2} - V_h``.
    """
    if k_levels not in RICHARDSON_WEIGHTS:
        raise ValueError(f"k_levels must be one of {sorted(RICHARDSON_WEIGHTS)}")
    if k % 2 ** (k_levels - 1):
        raise ValueError(f"k = {k} is not divisible by 2^{k_levels - 1}")

    def level(g: Grid1D) -> np.ndarray:
        h = np.asarray(f(g.x[:, None]), dtype=float)
        out = np.zeros(g.points)
        for j, w in enumerate(RICHARDSON_WEIGHTS[k_levels]):
            out += w * semigroup_iterate(h, t, k // 2**j, model, g, **kw).values
        return out

    coarse = level(grid)
    if not refine_grid:
        return coarse
    fine = level(Grid1D(grid.a, grid.b, 2 * grid.points - 1))[::2]
    return 2 * fine - coarse


@dataclass
class RateBound:
    value: float
    p: float
    c: float
    one_parameter_value: float
    evaluations: int

    def to_dict(self) -> dict:
        return {"value": self.value, "p": self.p, "c": self.c, "one_parameter_value": self.one_parameter_value,
                "evaluations": self.evaluations}


def rate_from_semigroup(t: float, y: float, x: float, model: ModelSpec, grid: Grid1D, k: int = 32,
                        L: float = 3.0, p_max: float = 8.0, c_max: float = 1.0, k_levels: int = 3,
                        refine_grid: bool = True, two_parameter: bool = True, samples: int = 0, max_evals: int = 30, **kw) -> RateBound:
    """Lower bound on the transition cost from ``x`` to ``y`` over clipped quadratic test functions.

    With ``f(z) = clip(p (z - y) - c (z - y)^2, -L, L)`` we have ``f(y) = 0``, so the bound is
    ``-V(t) f (x)``.  The slope ``p`` is optimised first (bounded Brent, ``c = 0``), then
    ``(p, c)`` jointly by Nelder-Mead started there; the better of the two is returned, so
    the richer family never lowers the bound.  The control maximisation inside each
    resolvent is exact segment by segment, so the sampled control set is off by default.
    """
    _require_1d(model)
    nodes = grid.x
    count = [0]

    def bound(p, c):
        count[0] += 1
        f = TestFunctional("clipped-quadratic", (p,), (y,), max(c, 0.0), 0.0, L)
        v = extrapolated_semigroup(f, t, k, model, grid, k_levels, refine_grid, samples=samples, **kw)
        return -float(np.interp(x, nodes, v))

    r1 = optimize.minimize_scalar(lambda p: -bound(p, 0.0), bounds=(-p_max, p_max), method="bounded",
                                  options={"xatol": 1e-3})
    best_p, best_c, best = float(r1.x), 0.0, -float(r1.fun)
    one = best
    if two_parameter:
        def neg(z):
            p, c = z
            if abs(p) > p_max or c < 0 or c > c_max:
                return 1e6
            return -bound(p, c)

        r2 = optimize.minimize(neg, np.array([best_p, 0.0]), method="Nelder-Mead",
                               options={"xatol": 1e-3, "fatol": 1e-6, "maxfev": max_evals,
                                        "initial_simplex": [[best_p, 0.0], [best_p + 0.2, 0.0], [best_p, 0.25]]})
        if -r2.fun > best:
            best, best_p, best_c = -float(r2.fun), float(r2.x[0]), float(r2.x[1])
    return RateBound(best, best_p, best_c, one, count[0])
