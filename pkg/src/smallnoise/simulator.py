"""Time stepping of the truncated SPDEs and finite-dimensional SDEs.

Two schemes are available:

* ``euler-maruyama``: ``x' = x + b(x) dt + n^{-1/2} B(x) dW``.
* ``semi-implicit-linear`` (default): the stiff diagonal linear part ``-lam x`` is advanced
  exactly, ``x' = exp(-lam dt) (x + dt N(x) + n^{-1/2} B(x) dW)`` with ``N = b + lam x``.
  For ``finite-dim-fw`` models ``lam = 0`` and the scheme coincides with Euler-Maruyama.

Gaussian increments come from the counter-based stream in :mod:`smallnoise.rng`: member
``i`` at step ``s`` uses normals ``s*K .. s*K + K - 1`` of its own stream, so ensembles are
reproducible independent of batching.
"""
from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from smallnoise import models
from smallnoise.jsonio import dumps17
from smallnoise.models import ModelSpec
from smallnoise.rng import RNG_ALGORITHM, member_keys, normals

SCHEMES = ("euler-maruyama", "semi-implicit-linear")
STABILITY_BUDGET = 2.0


class IntegrationError(RuntimeError):
    """The state became non-finite."""


@dataclass(frozen=True)
class SimConfig:
    dt: float
    T: float
    scheme: str = "semi-implicit-linear"
    seed: int = 0
    ensemble: int = 1

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.T < self.dt * (1 - 1e-12):
            raise ValueError("horizon T must be at least dt")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        if self.ensemble < 1:
            raise ValueError("ensemble size must be positive")
        steps = self.T / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ValueError(f"T/dt = {steps} is not an integer")

    @property
    def steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt

    def to_dict(self) -> dict:
        return {"dt": self.dt, "T": self.T, "scheme": self.scheme, "seed": self.seed, "ensemble": self.ensemble}

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        return cls(**d)


@dataclass
class Path:
    """Trajectory on a uniform time grid; ``states`` has shape ``(..., N+1, M)``."""

    times: np.ndarray
    states: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.times.ndim != 1 or self.times.size < 2:
            raise ValueError("a path needs at least two time points")
        steps = np.diff(self.times)
        if np.any(steps <= 0):
            raise ValueError("times must be strictly increasing")
        if np.max(np.abs(steps - steps[0])) > 1e-12 * max(1.0, abs(self.times[-1])):
            raise ValueError("times must be uniform")
        if self.states.ndim < 2 or self.states.shape[-2] != self.times.size:
            raise ValueError("states must have shape (..., len(times), M)")

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def T(self) -> float:
        return float(self.times[-1] - self.times[0])

    @property
    def slices(self) -> int:
        return self.times.size - 1

    @property
    def endpoint(self) -> np.ndarray:
        return self.states[..., -1, :]

    def to_csv(self, comments: tuple[str, ...] = ()) -> str:
        if self.states.ndim != 2:
            raise ValueError("only single paths can be archived")
        buf = io.StringIO()
        for line in comments:
            buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"coeff_{k + 1}" for k in range(self.states.shape[1])])
        for t, row in zip(self.times, self.states):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Path":
        rows = [r for r in csv.reader(line for line in text.splitlines() if not line.startswith("#"))]
        data = np.array([[float(v) for v in r] for r in rows[1:]])
        return cls(data[:, 0], data[:, 1:])

    def to_json(self) -> str:
        return dumps17({"times": self.times.tolist(), "states": self.states.tolist(), "meta": self.meta})

    @classmethod
    def from_json(cls, text: str) -> "Path":
        d = json.loads(text)
        return cls(np.asarray(d["times"]), np.asarray(d["states"]), d.get("meta", {}))

    @classmethod
    def linear(cls, x0, x1, T: float, slices: int) -> "Path":
        """Straight-line interpolation between two states."""
        s = np.linspace(0.0, 1.0, slices + 1)[:, None]
        x0 = np.asarray(x0, dtype=float)
        x1 = np.asarray(x1, dtype=float)
        return cls(np.linspace(0.0, T, slices + 1), (1 - s) * x0 + s * x1)


def _as_state(x, spec: ModelSpec) -> np.ndarray:
    c = x.coeffs if isinstance(x, models.SpectralField) else np.asarray(x, dtype=float)
    c = np.atleast_1d(c)
    if c.shape[-1] != spec.state_dim:
        raise ValueError(f"state has {c.shape[-1]} components, model needs {spec.state_dim}")
    return c


def check_stability(spec: ModelSpec, dt: float, scheme: str) -> float:
    """Return ``dt * stiffest rate`` and warn if an explicit step exceeds the budget."""
    rates = models.linear_rates(spec)
    stiff = float(dt * rates.max()) if rates.size else 0.0
    if scheme == "euler-maruyama" and stiff > STABILITY_BUDGET:
        warnings.warn(f"explicit step dt*lambda_max = {stiff:.3g} exceeds stability budget {STABILITY_BUDGET}",
                      RuntimeWarning, stacklevel=3)
    return stiff


class _Stepper:
    """Precomputed per-model constants for repeated steps."""

    def __init__(self, spec: ModelSpec, dt: float, scheme: str):
        self.spec = spec
        self.dt = dt
        self.scheme = scheme
        self.rates = models.linear_rates(spec)
        self.decay = np.exp(-self.rates * dt)
        self.noise_scale = spec.noise_factor
        self.semi = scheme == "semi-implicit-linear" and spec.is_spde

    def __call__(self, x: np.ndarray, dW: np.ndarray | None) -> np.ndarray:
        b = models.drift(x, self.spec)
        if self.semi:
            y = x + self.dt * (b + self.rates * x)
        else:
            y = x + self.dt * b
        if dW is not None and self.noise_scale > 0:
            y = y + self.noise_scale * models.diffusion_apply(x, dW, self.spec)
        return self.decay * y if self.semi else y


def step(x, model: ModelSpec, dt: float, dW=None, scheme: str = "semi-implicit-linear") -> np.ndarray:
    """Advance one step; ``dW`` holds one ``N(0, dt)`` draw per retained mode (or ``None``)."""
    c = _as_state(x, model)
    out = _Stepper(model, dt, scheme)(c, None if dW is None else np.asarray(dW, dtype=float))
    if not np.all(np.isfinite(out)):
        raise IntegrationError("non-finite state after one step")
    return out


def _integrate(x0: np.ndarray, spec: ModelSpec, cfg: SimConfig, keys: np.ndarray | None,
               record: bool) -> tuple[np.ndarray, np.ndarray]:
    """Integrate a batch; returns states ``(B, N+1, M)`` (or ``(B, 1, M)``) and a finite mask."""
    B = keys.shape[0] if keys is not None else 1
    M = spec.state_dim
    stepper = _Stepper(spec, cfg.dt, cfg.scheme)
    x = np.broadcast_to(x0, (B, M)).copy()
    N = cfg.steps
    out = np.empty((B, N + 1 if record else 1, M))
    out[:, 0] = x
    ok = np.ones(B, dtype=bool)
    noisy = keys is not None and stepper.noise_scale > 0
    block = max(1, min(N, 4_000_000 // max(B * M, 1)))
    sq = math.sqrt(cfg.dt)
    z = None
    for s in range(N):
        if noisy and s % block == 0:
            cnt = min(block, N - s)
            z = normals(keys, s * M, cnt * M).reshape(B, cnt, M)
        dW = sq * z[:, s % block] if noisy else None
        x = stepper(x, dW)
        bad = ~np.all(np.isfinite(x), axis=-1)
        if bad.any():
            ok &= ~bad
            x[bad] = 0.0
        if record:
            out[:, s + 1] = x
    if not record:
        out[:, 0] = x
    out[~ok] = np.nan
    return out, ok


def simulate_path(x0, model: ModelSpec, cfg: SimConfig, member: int = 0) -> Path:
    """Single trajectory driven by ensemble member ``member`` of ``cfg.seed``."""
    c = _as_state(x0, model)
    check_stability(model, cfg.dt, cfg.scheme)
    keys = member_keys(cfg.seed, [member])
    states, ok = _integrate(c, model, cfg, keys, record=True)
    if not ok[0]:
        raise IntegrationError(f"member {member}: state became non-finite")
    return Path(cfg.times, states[0], {"seed": cfg.seed, "member": member, "rng": RNG_ALGORITHM})


@dataclass
class EnsembleResult:
    values: np.ndarray
    members: np.ndarray
    member_seeds: np.ndarray
    aborted: np.ndarray

    @property
    def finite_values(self) -> np.ndarray:
        return self.values[~self.aborted]

    def mean(self) -> float:
        v = self.finite_values
        return float(math.fsum(v.tolist()) / v.size)

    def std_error(self) -> float:
        v = self.finite_values
        return float(np.std(v, ddof=1) / math.sqrt(v.size))

    def to_csv(self, comments: tuple[str, ...] = ()) -> str:
        buf = io.StringIO()
        for line in comments:
            buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["member", "seed", "value", "aborted"])
        for i, s, v, a in zip(self.members, self.member_seeds, self.values, self.aborted):
            w.writerow([int(i), int(s), repr(float(v)), int(a)])
        return buf.getvalue()


def endpoint(path: Path) -> np.ndarray:
    """Functional returning the final state (batched)."""
    return path.endpoint


def simulate_ensemble(x0, model: ModelSpec, cfg: SimConfig, functional: Callable[[Path], np.ndarray] = None,
                      members=None, chunk: int | None = None, endpoint_only: bool = False) -> EnsembleResult:
    """Evaluate ``functional`` on every member's path.

    ``functional`` receives a batched :class:`Path` (states ``(B, N+1, M)``) and returns one
    value per member (or ``(B, k)``).  With ``endpoint_only`` the path holds only the two
    states at ``t = 0`` and ``t = T``, which saves memory for terminal functionals.
    Members whose state turns non-finite get NaN and are flagged in ``aborted``.
    """
    c = _as_state(x0, model)
    check_stability(model, cfg.dt, cfg.scheme)
    members = np.arange(cfg.ensemble, dtype=np.int64) if members is None else np.asarray(members, dtype=np.int64)
    functional = functional or (lambda p: p.endpoint[..., 0])
    M = model.state_dim
    rows = 2 if endpoint_only else cfg.steps + 1
    if chunk is None:
        chunk = max(1, min(members.size, 8_000_000 // (rows * M)))
    values, aborted = [], []
    keys_all = member_keys(cfg.seed, members)
    times = np.array([0.0, cfg.T]) if endpoint_only else cfg.times
    for lo in range(0, members.size, chunk):
        keys = keys_all[lo:lo + chunk]
        states, ok = _integrate(c, model, cfg, keys, record=not endpoint_only)
        if endpoint_only:
            states = np.concatenate([np.broadcast_to(c, (keys.shape[0], 1, M)), states], axis=1)
        v = np.asarray(functional(Path(times, states)), dtype=float)
        v = np.where(ok.reshape((-1,) + (1,) * (v.ndim - 1)), v, np.nan)
        values.append(v)
        aborted.append(~ok)
    seeds = keys_all[:, 0] | (keys_all[:, 1] << np.uint64(32))
    return EnsembleResult(np.concatenate(values), members, seeds, np.concatenate(aborted))
