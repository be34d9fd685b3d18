"""Action functionals of small-noise diffusions and their numerical minimisation.

The running cost of a trajectory is ``1/2 |u|^2`` where the control ``u`` reconstructs the
path: ``xdot - b(x) = B(x) u``.  Two discretisations are provided.

``simpson`` (default)
    The path is piecewise linear between nodes.  On each slice the velocity is the chord
    slope and the cost is integrated by Simpson's rule at the two nodes and the midpoint.
    For linear drift with state-independent noise the integrand is quadratic in time, so
    the rule is exact: the value is the true action of an admissible path (hence an upper
    bound on the infimum) and refining N -> 2N can only lower the minimum.

``nodal``
    Centered differences at interior nodes, one-sided second-order differences at the
    ends, trapezoid rule in time.  This is the control reconstruction returned by
    :func:`control_residual`.

Spatial integrals are exact: Parseval for additive noise, collocation quadrature of
``(r / sigma)^2`` for multiplicative noise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import solve_banded

from smallnoise import models
from smallnoise.jsonio import dumps17
from smallnoise.models import ModelSpec
from smallnoise.simulator import Path

SIGMA_FLOOR = 1e-8
SIMPSON = np.array([1.0, 4.0, 1.0]) / 6.0


class SingularNoiseError(ValueError):
    """The noise coefficient is too small to reconstruct a control."""


@dataclass
class ActionReport:
    total: float
    per_interval: np.ndarray
    control: np.ndarray | None = None
    initial_cost: float = 0.0
    quadrature: str = "simpson"
    converged: bool = True
    iterations: int = 0
    grad_norm: float = 0.0

    def to_dict(self) -> dict:
        return {"total": self.total, "per_interval": np.asarray(self.per_interval).tolist(),
                "initial_cost": self.initial_cost, "quadrature": self.quadrature,
                "converged": self.converged, "iterations": self.iterations, "grad_norm": self.grad_norm}

    def to_json(self) -> str:
        return dumps17(self.to_dict())


# --------------------------------------------------------------------------- running cost


def _running_cost(x: np.ndarray, r: np.ndarray, spec: ModelSpec, need_grad: bool = True):
    """``c = 1/2 |B(x)^{-1} r|^2`` with gradients in ``r`` and (through sigma) in ``x``."""
    if spec.family == "finite-dim-fw":
        Si = spec.fw.sigma_inv
        u = np.einsum("ij,...j->...i", Si, r)
        c = 0.5 * np.sum(u * u, axis=-1)
        if not need_grad:
            return c, None, None
        return c, np.einsum("ji,...j->...i", Si, u), np.zeros_like(x)
    if spec.noise.kind == "additive-identity":
        c = 0.5 * np.sum(r * r, axis=-1)
        return c, (r if need_grad else None), (np.zeros_like(x) if need_grad else None)
    b = spec.basis
    sg = models.sigma_grid(x, spec)
    if np.min(sg) < SIGMA_FLOOR:
        raise SingularNoiseError(f"sigma drops to {np.min(sg):.3g} < {SIGMA_FLOOR}")
    rg = b.to_grid(r)
    ug = rg / sg
    c = 0.5 * np.mean(ug * ug, axis=-1)
    if not need_grad:
        return c, None, None
    dr = b.to_spectral(ug / sg)
    dx = -np.mean(ug * ug / sg, axis=-1)[..., None] * models.sigma_state_gradient(x, spec)
    return c, dr, dx


def control_residual(path: Path, model: ModelSpec) -> np.ndarray:
    """Control ``u(t_i)`` reconstructing the discrete path at every node."""
    x = path.states
    xdot = np.gradient(x, path.dt, axis=-2, edge_order=2)
    r = xdot - models.drift(x, model)
    if model.family == "finite-dim-fw":
        return np.einsum("ij,...j->...i", model.fw.sigma_inv, r)
    if model.noise.kind == "additive-identity":
        return r
    b = model.basis
    sg = models.sigma_grid(x, model)
    if np.min(sg) < SIGMA_FLOOR:
        raise SingularNoiseError(f"sigma drops to {np.min(sg):.3g} < {SIGMA_FLOOR}")
    return b.to_spectral(b.to_grid(r) / sg)


def _simpson_terms(x: np.ndarray, dt: float, spec: ModelSpec, need_grad: bool):
    """Per-slice Simpson costs and (optionally) the gradient in every node."""
    mid = 0.5 * (x[:-1] + x[1:])
    v = (x[1:] - x[:-1]) / dt
    bn = models.drift(x, spec)
    bm = models.drift(mid, spec)
    cl, grl, gxl = _running_cost(x[:-1], v - bn[:-1], spec, need_grad)
    cm, grm, gxm = _running_cost(mid, v - bm, spec, need_grad)
    cr, grr, gxr = _running_cost(x[1:], v - bn[1:], spec, need_grad)
    w0, w1, w2 = SIMPSON
    per = dt * (w0 * cl + w1 * cm + w2 * cr)
    if not need_grad:
        return per, None
    Jn = models.drift_jacobian(x, spec)
    Jm = models.drift_jacobian(mid, spec)
    gv = w0 * grl + w1 * grm + w2 * grr
    # d/dy of c(y, v - b(y)) = gx - J(y)^T gr
    hl = gxl - np.einsum("...ji,...j->...i", Jn[:-1], grl)
    hm = gxm - np.einsum("...ji,...j->...i", Jm, grm)
    hr = gxr - np.einsum("...ji,...j->...i", Jn[1:], grr)
    g = np.zeros_like(x)
    g[:-1] += -gv + dt * (w0 * hl + 0.5 * w1 * hm)
    g[1:] += gv + dt * (w2 * hr + 0.5 * w1 * hm)
    return per, g


def action(path: Path, model: ModelSpec, I0: Callable | None = None, quadrature: str = "simpson") -> ActionReport:
    """Discretised action of a path plus the optional initial cost ``I0(x(0))``."""
    x = path.states
    if x.ndim != 2:
        raise ValueError("action expects a single path")
    init = float(I0(x[0])) if I0 is not None else 0.0
    if quadrature == "simpson":
        per, _ = _simpson_terms(x, path.dt, model, need_grad=False)
        u = None
    elif quadrature == "nodal":
        u = control_residual(path, model)
        r = np.gradient(x, path.dt, axis=0, edge_order=2) - models.drift(x, model)
        c, _, _ = _running_cost(x, r, model, need_grad=False)
        per = 0.5 * path.dt * (c[:-1] + c[1:])
    else:
        raise ValueError(f"unknown quadrature {quadrature!r}")
    total = init + math.fsum(per.tolist())
    return ActionReport(total, per, u, init, quadrature)


def action_gradient(path: Path, model: ModelSpec) -> tuple[float, np.ndarray]:
    """Simpson action and its gradient with respect to every node."""
    per, g = _simpson_terms(path.states, path.dt, model, need_grad=True)
    return math.fsum(per.tolist()), g


def gradient_check(path: Path, model: ModelSpec, trials: int = 20, seed: int = 0, perturbation: float = 0.05,
                   h: float = 1e-5) -> float:
    """Worst relative mismatch between analytic and central-difference directional derivatives.

    Each trial perturbs the interior nodes of ``path`` randomly (so the check is not run at a
    stationary point) and compares along a random interior direction.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        x = path.states.copy()
        x[1:-1] += perturbation * rng.standard_normal(x[1:-1].shape)
        p = Path(path.times, x)
        _, g = action_gradient(p, model)
        d = rng.standard_normal(x.shape)
        d[0] = d[-1] = 0.0
        d /= np.linalg.norm(d)
        fp = action(Path(path.times, x + h * d), model).total
        fm = action(Path(path.times, x - h * d), model).total
        fd = (fp - fm) / (2 * h)
        an = float(np.sum(g * d))
        worst = max(worst, abs(fd - an) / max(abs(an), abs(fd), 1e-300))
    return worst


# --------------------------------------------------------------------------- optimiser


def deterministic_flow(x0, model: ModelSpec, times: np.ndarray, rtol: float = 1e-11, atol: float = 1e-13) -> Path:
    """Noise-free trajectory sampled at ``times`` (stiff implicit ODE solve)."""
    x0 = np.asarray(x0, dtype=float)
    sol = solve_ivp(lambda t, y: models.drift(y, model), (times[0], times[-1]), x0, method="Radau",
                    t_eval=times, rtol=rtol, atol=atol, jac=lambda t, y: models.drift_jacobian(y, model))
    if not sol.success:
        raise RuntimeError(f"deterministic flow failed: {sol.message}")
    return Path(times, sol.y.T)


def _mode_rates(model: ModelSpec, x0: np.ndarray) -> tuple[np.ndarray, float]:
    if model.family == "finite-dim-fw":
        rates = np.abs(np.diagonal(model.fw.b_jac(x0)))
        s = np.linalg.svd(model.fw.sigma_matrix, compute_uv=False)
        return rates, 1.0 / float(s.min()) ** 2
    scale = 1.0 if model.noise.kind == "additive-identity" else 1.0 / model.noise.sup_abs**2
    return models.linear_rates(model), scale


class _Preconditioner:
    """Per-mode exact Hessian of the Simpson action for the linear part: ``K/dt + rate^2 Mass``."""

    def __init__(self, rates: np.ndarray, scale: float, dt: float, size: int, free_end: bool):
        self.ab = []
        for lam in rates:
            main = np.full(size, 2.0 / dt + lam * lam * 4.0 * dt / 6.0)
            off = np.full(size, -1.0 / dt + lam * lam * dt / 6.0)
            if free_end:
                main[-1] = 1.0 / dt + lam * lam * 2.0 * dt / 6.0
            ab = np.zeros((3, size))
            ab[0, 1:] = off[1:]
            ab[1] = main
            ab[2, :-1] = off[:-1]
            self.ab.append(scale * ab)

    def solve(self, g: np.ndarray) -> np.ndarray:
        out = np.empty_like(g)
        for k, ab in enumerate(self.ab):
            out[:, k] = solve_banded((1, 1), ab, g[:, k])
        return out


@dataclass
class OptResult:
    x: np.ndarray
    value: float
    converged: bool
    iterations: int
    grad_norm: float
    history: list = field(default_factory=list)


def _bb_minimize(fun: Callable, x0: np.ndarray, precond: _Preconditioner, dt: float, tol: float,
                 max_iter: int, memory: int = 10) -> OptResult:
    """Preconditioned Barzilai-Borwein descent with a nonmonotone Armijo backtracking."""
    x = x0.copy()
    f, g = fun(x)
    hist = [f]
    step = 1.0
    gnorm = float(np.max(np.abs(g))) / dt
    it = 0
    for it in range(1, max_iter + 1):
        if gnorm <= tol:
            return OptResult(x, f, True, it - 1, gnorm, hist)
        d = -precond.solve(g)
        slope = float(np.sum(g * d))
        if slope >= 0:
            d, slope = -g, -float(np.sum(g * g))
        ref = max(hist[-memory:])
        a = step
        for _ in range(60):
            xn = x + a * d
            try:
                fn, gn = fun(xn)
            except (FloatingPointError, SingularNoiseError):
                fn = math.inf
            if np.isfinite(fn) and fn <= ref + 1e-4 * a * slope:
                break
            a *= 0.25
        else:
            return OptResult(x, f, False, it, gnorm, hist)
        s = xn - x
        y = gn - g
        x, f, g = xn, fn, gn
        hist.append(f)
        gnorm = float(np.max(np.abs(g))) / dt
        sy = float(np.sum(s * y))
        if sy > 0:
            step = float(np.clip(np.sum(s * precond_apply(precond, s)) / sy, 1e-6, 1e6))
        else:
            step = 1.0
    return OptResult(x, f, gnorm <= tol, it, gnorm, hist)


def precond_apply(precond: _Preconditioner, s: np.ndarray) -> np.ndarray:
    """Multiply by the banded preconditioner matrix."""
    out = np.empty_like(s)
    for k, ab in enumerate(precond.ab):
        col = s[:, k]
        v = ab[1] * col
        v[:-1] += ab[0, 1:] * col[1:]
        v[1:] += ab[2, :-1] * col[:-1]
        out[:, k] = v
    return out


def minimize_action(x0, x1, T: float, model: ModelSpec, slices: int, init: Path | None = None,
                    tol: float = 1e-6, max_iter: int = 20000) -> tuple[Path, ActionReport]:
    """Minimum-action path between pinned endpoints on ``slices`` uniform time slices."""
    if slices < 4:
        raise ValueError("need at least 4 time slices")
    x0 = np.asarray(x0, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    times = np.linspace(0.0, T, slices + 1)
    dt = T / slices
    start = init.states.copy() if init is not None else Path.linear(x0, x1, T, slices).states
    start[0], start[-1] = x0, x1
    rates, scale = _mode_rates(model, x0)
    pre = _Preconditioner(rates, scale, dt, slices - 1, free_end=False)

    def fun(z):
        xs = np.concatenate([x0[None], z, x1[None]])
        per, g = _simpson_terms(xs, dt, model, need_grad=True)
        return math.fsum(per.tolist()), g[1:-1]

    res = _bb_minimize(fun, start[1:-1], pre, dt, tol, max_iter)
    path = Path(times, np.concatenate([x0[None], res.x, x1[None]]))
    rep = action(path, model)
    rep.converged, rep.iterations, rep.grad_norm = res.converged, res.iterations, res.grad_norm
    return path, rep


def maximize_terminal_reward(x0, T: float, model: ModelSpec, slices: int,
                             reward: Callable[[np.ndarray], tuple[float, np.ndarray]],
                             init: Path | None = None, tol: float = 1e-6,
                             max_iter: int = 20000) -> tuple[Path, float, OptResult]:
    """Maximise ``reward(x(T)) - action`` over paths from ``x0`` with a free endpoint."""
    x0 = np.asarray(x0, dtype=float)
    times = np.linspace(0.0, T, slices + 1)
    dt = T / slices
    start = deterministic_flow(x0, model, times).states if init is None else init.states.copy()
    rates, scale = _mode_rates(model, x0)
    pre = _Preconditioner(rates, scale, dt, slices, free_end=True)

    def fun(z):
        xs = np.concatenate([x0[None], z])
        per, g = _simpson_terms(xs, dt, model, need_grad=True)
        rv, rg = reward(xs[-1])
        g = g[1:]
        g[-1] -= rg
        return math.fsum(per.tolist()) - rv, g

    res = _bb_minimize(fun, start[1:], pre, dt, tol, max_iter)
    path = Path(times, np.concatenate([x0[None], res.x]))
    value = reward(path.states[-1])[0] - action(path, model).total
    return path, float(value), res
