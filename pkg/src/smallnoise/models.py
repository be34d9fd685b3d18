"""Drift and noise operators for the truncated SPDE families and finite-dimensional SDEs.

States are coefficient arrays with a trailing axis of length ``m**dim`` (SPDE families)
or ``d`` (``finite-dim-fw``); every operator accepts an arbitrary leading batch shape.
Nonlinear terms are evaluated by collocation: ``to_grid -> pointwise map -> to_spectral``,
which realises ``P_m g(P_m x)`` literally.

The simulated drift is always the *unshifted* one.  The omega-shifted operator ``C_m``
only exists for the dissipativity check (:func:`shifted_operator`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Any, Callable

import numpy as np

from smallnoise.spectral import SpectralBasis, SpectralField, get_basis

FAMILIES = ("allen-cahn", "cahn-hilliard", "quasilinear", "finite-dim-fw")


class ConditionError(ValueError):
    """A structural condition on the model data is violated."""


# --------------------------------------------------------------------------- potentials


@dataclass(frozen=True)
class Potential:
    """Named built-in potential ``V`` with declared bounds.

    ``sup_d2`` bounds ``|V''|``, ``sup_d3`` bounds ``|V'''|``, and ``V(r) >= c1 + c2 r^2``.
    """

    name: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in _POTENTIALS:
            raise ValueError(f"unknown potential {self.name!r}; choose from {sorted(_POTENTIALS)}")
        object.__setattr__(self, "params", {**_POTENTIALS[self.name]["defaults"], **self.params})

    def V(self, r):
        return _POTENTIALS[self.name]["fns"](self.params, np.asarray(r, dtype=float))[0]

    def dV(self, r):
        return _POTENTIALS[self.name]["fns"](self.params, np.asarray(r, dtype=float))[1]

    def d2V(self, r):
        return _POTENTIALS[self.name]["fns"](self.params, np.asarray(r, dtype=float))[2]

    def d3V(self, r):
        return _POTENTIALS[self.name]["fns"](self.params, np.asarray(r, dtype=float))[3]

    @property
    def sup_d2(self) -> float:
        return _POTENTIALS[self.name]["bounds"](self.params)["sup_d2"]

    @property
    def sup_d3(self) -> float:
        return _POTENTIALS[self.name]["bounds"](self.params)["sup_d3"]

    @property
    def c1(self) -> float:
        return _POTENTIALS[self.name]["bounds"](self.params)["c1"]

    @property
    def c2(self) -> float:
        return _POTENTIALS[self.name]["bounds"](self.params)["c2"]

    def to_dict(self) -> dict:
        return {"name": self.name, **self.params}

    @classmethod
    def from_dict(cls, d: dict) -> "Potential":
        d = dict(d)
        return cls(d.pop("name"), d)


def _double_well_blend(p, r):
    # (r^2-1)^2/4 inside |r| <= R, quadratic continuation with matched V, V', V'' outside
    R, v0 = p["R"], p["v0"]
    a = np.abs(r)
    s = np.sign(r)
    inside = a <= R
    VR = (R * R - 1.0) ** 2 / 4.0
    dVR = R**3 - R
    d2VR = 3.0 * R * R - 1.0
    e = a - R
    V = np.where(inside, (r * r - 1.0) ** 2 / 4.0, VR + dVR * e + 0.5 * d2VR * e * e) + v0
    dV = np.where(inside, r**3 - r, s * (dVR + d2VR * e))
    d2V = np.where(inside, 3.0 * r * r - 1.0, d2VR)
    d3V = np.where(inside, 6.0 * r, 0.0)
    return V, dV, d2V, d3V


def _double_well_blend_bounds(p):
    R = p["R"]
    return {"sup_d2": max(3.0 * R * R - 1.0, 1.0), "sup_d3": 6.0 * R, "c1": p["c1"] + p["v0"], "c2": p["c2"]}


def _quadratic(p, r):
    a, v0 = p["a"], p["v0"]
    return a * r * r / 2.0 + v0, a * r, a * np.ones_like(r), np.zeros_like(r)


def _quadratic_bounds(p):
    return {"sup_d2": abs(p["a"]), "sup_d3": 0.0, "c1": p["v0"], "c2": p["a"] / 2.0}


_POTENTIALS: dict[str, dict[str, Any]] = {
    "double-well-blend": {
        "defaults": {"R": 2.0, "v0": 0.0, "c1": -1.0, "c2": 0.5},
        "fns": _double_well_blend,
        "bounds": _double_well_blend_bounds,
    },
    "quadratic": {"defaults": {"a": 1.0, "v0": 0.0}, "fns": _quadratic, "bounds": _quadratic_bounds},
}


def validate_potential(pot: Potential, cahn_hilliard: bool = False, r_max: float = 50.0,
                       points: int = 200001) -> None:
    """Sampled check of the potential conditions on ``[-r_max, r_max]``."""
    r = np.linspace(-r_max, r_max, points)
    tol = 1e-9
    d2 = np.abs(pot.d2V(r))
    bad = np.nonzero(d2 > pot.sup_d2 * (1 + tol) + tol)[0]
    if bad.size:
        raise ConditionError(f"Condition 1.3(1): sup|V''| exceeded at r = {r[bad[0]]:.6g}")
    if cahn_hilliard:
        d3 = np.abs(pot.d3V(r))
        bad = np.nonzero(d3 > pot.sup_d3 * (1 + tol) + tol)[0]
        if bad.size:
            raise ConditionError(f"Condition 1.6(1): sup|V'''| exceeded at r = {r[bad[0]]:.6g}")
    if pot.c2 <= 0:
        raise ConditionError(f"Condition 1.3(2): c2 must be positive, got {pot.c2}")
    gap = pot.V(r) - (pot.c1 + pot.c2 * r * r)
    bad = np.nonzero(gap < -tol)[0]
    if bad.size:
        raise ConditionError(f"Condition 1.3(2): V(r) < c1 + c2 r^2 at r = {r[bad[0]]:.6g}")


# --------------------------------------------------------------------------- fluxes


@dataclass(frozen=True)
class Flux:
    """Named built-in flux for the quasilinear family; ``sup_d1`` bounds ``|phi'|``."""

    name: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        defaults = {"smoothed-burgers": {"R": 2.0}, "linear": {"c": 1.0}, "constant": {"c": 0.0}}
        if self.name not in defaults:
            raise ValueError(f"unknown flux {self.name!r}")
        object.__setattr__(self, "params", {**defaults[self.name], **self.params})

    def phi(self, r):
        r = np.asarray(r, dtype=float)
        if self.name == "smoothed-burgers":
            R = self.params["R"]
            a = np.abs(r)
            return np.where(a <= R, 0.5 * r * r, 0.5 * R * R + R * (a - R))
        if self.name == "linear":
            return self.params["c"] * r
        return np.full_like(r, self.params["c"])

    def dphi(self, r):
        r = np.asarray(r, dtype=float)
        if self.name == "smoothed-burgers":
            R = self.params["R"]
            return np.clip(r, -R, R)
        if self.name == "linear":
            return np.full_like(r, self.params["c"])
        return np.zeros_like(r)

    @property
    def sup_d1(self) -> float:
        if self.name == "smoothed-burgers":
            return self.params["R"]
        if self.name == "linear":
            return abs(self.params["c"])
        return 0.0

    def to_dict(self) -> dict:
        return {"name": self.name, **self.params}

    @classmethod
    def from_dict(cls, d: dict) -> "Flux":
        d = dict(d)
        return cls(d.pop("name"), d)


# --------------------------------------------------------------------------- noise


@dataclass(frozen=True)
class NoiseSpec:
    """Noise operator.

    ``additive-identity``: ``B = P_m`` (one Brownian motion per retained mode).
    ``multiplicative-AC``: ``(B(x)u)(theta) = sigma(theta; x) u(theta)`` with
    ``sigma = a + b tanh(<x, xi_1> + ... + <x, xi_K>) + c sin(2 pi theta_1)``.
    """

    kind: str = "additive-identity"
    a: float = 1.0
    b: float = 0.0
    c: float = 0.0
    probes: tuple = ()

    def __post_init__(self):
        if self.kind not in ("additive-identity", "multiplicative-AC"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        object.__setattr__(self, "probes", tuple(tuple(float(v) for v in p) for p in self.probes))

    @property
    def sup_abs(self) -> float:
        """Declared ``M = sup |sigma|``."""
        if self.kind == "additive-identity":
            return 1.0
        return abs(self.a) + abs(self.b) + abs(self.c)

    @property
    def inf_sigma(self) -> float:
        if self.kind == "additive-identity":
            return 1.0
        return self.a - abs(self.b) - abs(self.c)

    @property
    def lipschitz(self) -> float:
        """Lipschitz constant of ``phi`` in ``(r_1, ..., r_K)`` (Euclidean)."""
        if self.kind == "additive-identity":
            return 0.0
        return abs(self.b) * math.sqrt(max(len(self.probes), 1))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "a": self.a, "b": self.b, "c": self.c, "probes": [list(p) for p in self.probes]}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSpec":
        d = dict(d)
        d["probes"] = tuple(tuple(p) for p in d.get("probes", ()))
        return cls(**d)


# --------------------------------------------------------------------------- finite-dim SDEs


@dataclass(frozen=True)
class FWSpec:
    """Finite-dimensional ``dX = b(X) dt + n^{-1/2} sigma dW`` with constant ``sigma``.

    Built-ins: ``ou`` (``b = -theta x``), ``linear`` (``b = A x``) and ``gradient``
    (``b = -V'(x)`` componentwise for a named :class:`Potential`).
    """

    name: str = "ou"
    d: int = 1
    theta: float = 1.0
    A: tuple | None = None
    sigma: tuple | float = 1.0
    potential: Potential | None = None

    def __post_init__(self):
        if self.name not in ("ou", "linear", "gradient"):
            raise ValueError(f"unknown finite-dim model {self.name!r}")
        if self.name == "linear":
            if self.A is None:
                raise ValueError("linear model needs a drift matrix A")
            A = np.asarray(self.A, dtype=float)
            if A.shape != (self.d, self.d):
                raise ValueError(f"A must be {self.d}x{self.d}")
            object.__setattr__(self, "A", tuple(map(tuple, A.tolist())))
        if self.name == "gradient" and self.potential is None:
            object.__setattr__(self, "potential", Potential("quadratic"))
        s = np.asarray(self.sigma, dtype=float)
        if s.ndim == 2:
            if s.shape != (self.d, self.d):
                raise ValueError(f"sigma must be {self.d}x{self.d}")
            object.__setattr__(self, "sigma", tuple(map(tuple, s.tolist())))
        else:
            object.__setattr__(self, "sigma", float(s))

    @cached_property
    def sigma_matrix(self) -> np.ndarray:
        s = np.asarray(self.sigma, dtype=float)
        return s if s.ndim == 2 else s * np.eye(self.d)

    @cached_property
    def sigma_inv(self) -> np.ndarray:
        return np.linalg.inv(self.sigma_matrix)

    def b(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.d:
            raise ValueError(f"state dimension {x.shape[-1]} != {self.d}")
        if self.name == "ou":
            return -self.theta * x
        if self.name == "linear":
            return np.einsum("...i,ji->...j", x, np.asarray(self.A))
        return -self.potential.dV(x)

    def b_jac(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        eye = np.eye(self.d)
        if self.name == "ou":
            return np.broadcast_to(-self.theta * eye, x.shape[:-1] + (self.d, self.d)).copy()
        if self.name == "linear":
            return np.broadcast_to(np.asarray(self.A), x.shape[:-1] + (self.d, self.d)).copy()
        return -self.potential.d2V(x)[..., :, None] * eye

    @property
    def lipschitz(self) -> float:
        if self.name == "ou":
            return abs(self.theta)
        if self.name == "linear":
            return float(np.linalg.norm(np.asarray(self.A), 2))
        return self.potential.sup_d2

    def to_dict(self) -> dict:
        out = {"name": self.name, "d": self.d, "theta": self.theta, "sigma": self.sigma}
        if self.A is not None:
            out["A"] = [list(r) for r in self.A]
        if self.potential is not None and self.name == "gradient":
            out["potential"] = self.potential.to_dict()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "FWSpec":
        d = dict(d)
        if "potential" in d and d["potential"] is not None:
            d["potential"] = Potential.from_dict(d["potential"])
        if isinstance(d.get("sigma"), list):
            d["sigma"] = tuple(tuple(r) for r in d["sigma"])
        if d.get("A") is not None:
            d["A"] = tuple(tuple(r) for r in d["A"])
        return cls(**d)


# --------------------------------------------------------------------------- model spec


@dataclass(frozen=True)
class ModelSpec:
    """Immutable description of one small-noise diffusion.

    ``n`` is the noise scale (``n = inf`` switches the noise off).  ``m`` is the per-axis
    spectral truncation for SPDE families and is ignored by ``finite-dim-fw``.
    """

    family: str
    dim: int = 1
    m: int = 5
    n: float = 64.0
    potential: Potential | None = None
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    flux: Flux | None = None
    alpha: float = 1.0
    fw: FWSpec | None = None
    q: int | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; choose from {FAMILIES}")
        if self.n <= 0:
            raise ValueError("noise scale n must be positive")
        if self.family in ("allen-cahn", "cahn-hilliard") and self.potential is None:
            object.__setattr__(self, "potential", Potential("double-well-blend"))
        if self.family == "cahn-hilliard" and self.noise.kind != "additive-identity":
            raise ValueError("cahn-hilliard uses additive identity noise")
        if self.family == "quasilinear":
            if self.dim != 1:
                raise ValueError("quasilinear family is one-dimensional")
            if self.noise.kind != "additive-identity":
                raise ValueError("quasilinear uses additive identity noise")
            if self.flux is None:
                object.__setattr__(self, "flux", Flux("smoothed-burgers"))
            if self.alpha <= 0:
                raise ValueError("viscosity alpha must be positive")
        if self.family == "finite-dim-fw" and self.fw is None:
            object.__setattr__(self, "fw", FWSpec())
        if self.noise.kind == "multiplicative-AC":
            for p in self.noise.probes:
                if len(p) != self.m**self.dim:
                    raise ValueError("noise probe length must equal m**dim")

    @property
    def is_spde(self) -> bool:
        return self.family != "finite-dim-fw"

    @cached_property
    def basis(self) -> SpectralBasis:
        return get_basis(self.dim, self.m, self.q)

    @property
    def state_dim(self) -> int:
        return self.m**self.dim if self.is_spde else self.fw.d

    @property
    def noise_dim(self) -> int:
        return self.state_dim

    @property
    def noise_factor(self) -> float:
        return 0.0 if math.isinf(self.n) else 1.0 / math.sqrt(self.n)

    def with_n(self, n: float) -> "ModelSpec":
        return replace(self, n=n)

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"family": self.family, "dim": self.dim, "m": self.m,
                               "n": "inf" if math.isinf(self.n) else self.n}
        if self.potential is not None:
            out["potential"] = self.potential.to_dict()
        out["noise"] = self.noise.to_dict()
        if self.flux is not None:
            out["flux"] = self.flux.to_dict()
        if self.family == "quasilinear":
            out["alpha"] = self.alpha
        if self.fw is not None:
            out["fw"] = self.fw.to_dict()
        if self.q is not None:
            out["q"] = self.q
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        n = d.get("n", 64.0)
        d["n"] = math.inf if n in ("inf", "Infinity", None) else float(n)
        if "potential" in d:
            d["potential"] = Potential.from_dict(d["potential"])
        if "noise" in d:
            d["noise"] = NoiseSpec.from_dict(d["noise"])
        if "flux" in d:
            d["flux"] = Flux.from_dict(d["flux"])
        if "fw" in d:
            d["fw"] = FWSpec.from_dict(d["fw"])
        return cls(**d)


def allen_cahn(dim=1, m=5, n=64.0, potential=None, noise=None, q=None) -> ModelSpec:
    return ModelSpec("allen-cahn", dim, m, n, potential, noise or NoiseSpec(), q=q)


def cahn_hilliard(dim=1, m=5, n=64.0, potential=None, q=None) -> ModelSpec:
    return ModelSpec("cahn-hilliard", dim, m, n, potential, q=q)


def quasilinear(m=5, n=64.0, flux=None, alpha=1.0, q=None) -> ModelSpec:
    return ModelSpec("quasilinear", 1, m, n, flux=flux, alpha=alpha, q=q)


def ou(d=1, n=64.0, theta=1.0, sigma=1.0) -> ModelSpec:
    return ModelSpec("finite-dim-fw", n=n, fw=FWSpec("ou", d=d, theta=theta, sigma=sigma))


# --------------------------------------------------------------------------- operators


def _unwrap(x):
    if isinstance(x, SpectralField):
        return x.coeffs, x
    return np.asarray(x, dtype=float), None


def _rewrap(arr, like):
    if like is None:
        return arr
    return SpectralField(like.dim, like.m, arr)


def _require(spec: ModelSpec, family: str):
    if spec.family != family:
        raise ValueError(f"operator needs family {family!r}, model is {spec.family!r}")


def drift_allen_cahn(x, spec: ModelSpec):
    """``Laplacian(x) - P V'(x)``."""
    _require(spec, "allen-cahn")
    c, like = _unwrap(x)
    b = spec.basis
    out = b.laplacian(c) - b.to_spectral(spec.potential.dV(b.to_grid(c)))
    return _rewrap(out, like)


def drift_cahn_hilliard(x, spec: ModelSpec):
    """``Laplacian(-Laplacian(x) + P V'(x))``; the constant mode of the result is 0."""
    _require(spec, "cahn-hilliard")
    c, like = _unwrap(x)
    b = spec.basis
    out = b.laplacian(-b.laplacian(c) + b.to_spectral(spec.potential.dV(b.to_grid(c))))
    return _rewrap(out, like)


def drift_quasilinear(x, spec: ModelSpec):
    """``alpha Laplacian(x) - P d_theta phi(x)``."""
    _require(spec, "quasilinear")
    c, like = _unwrap(x)
    b = spec.basis
    out = spec.alpha * b.laplacian(c) - b.d_theta(b.to_spectral(spec.flux.phi(b.to_grid(c))))
    return _rewrap(out, like)


def fw_drift_diffusion(x, spec: ModelSpec) -> tuple[np.ndarray, np.ndarray]:
    _require(spec, "finite-dim-fw")
    x = np.asarray(x, dtype=float)
    b = spec.fw.b(x)
    return b, np.broadcast_to(spec.fw.sigma_matrix, x.shape[:-1] + (spec.fw.d, spec.fw.d))


def drift(x, spec: ModelSpec):
    if spec.family == "allen-cahn":
        return drift_allen_cahn(x, spec)
    if spec.family == "cahn-hilliard":
        return drift_cahn_hilliard(x, spec)
    if spec.family == "quasilinear":
        return drift_quasilinear(x, spec)
    c, like = _unwrap(x)
    return spec.fw.b(c)


def drift_jacobian(x, spec: ModelSpec) -> np.ndarray:
    """Jacobian of :func:`drift` in coefficient space, shape ``(..., M, M)``."""
    c, _ = _unwrap(x)
    if spec.family == "finite-dim-fw":
        return spec.fw.b_jac(c)
    b = spec.basis
    G = b.grid_matrix()
    g = b.to_grid(c)
    lam = b.lam_sum
    if spec.family == "allen-cahn":
        w = spec.potential.d2V(g)
        return -np.diag(lam) - np.einsum("qi,...q,qj->...ij", G, w, G) / b.grid_size
    if spec.family == "cahn-hilliard":
        w = spec.potential.d2V(g)
        inner = np.einsum("qi,...q,qj->...ij", G, w, G) / b.grid_size
        return -np.diag(lam * lam) - lam[:, None] * inner
    w = spec.flux.dphi(g)
    inner = np.einsum("qi,...q,qj->...ij", G, w, G) / b.grid_size
    return -spec.alpha * np.diag(lam) - b.d1 @ inner


def linear_rates(spec: ModelSpec) -> np.ndarray:
    """Per-mode decay rates of the stiff linear part used by the semi-implicit scheme."""
    if spec.family == "finite-dim-fw":
        return np.zeros(spec.state_dim)
    lam = spec.basis.lam_sum
    if spec.family == "allen-cahn":
        return lam.copy()
    if spec.family == "cahn-hilliard":
        return lam * lam
    return spec.alpha * lam


def sigma_grid(x, spec: ModelSpec) -> np.ndarray:
    """Collocation values of ``sigma(theta; x)``, shape ``(..., q**dim)``."""
    c, _ = _unwrap(x)
    b = spec.basis
    batch = c.shape[:-1]
    noise = spec.noise
    if noise.kind == "additive-identity":
        return np.ones(batch + (b.grid_size,))
    s = np.zeros(batch)
    for p in noise.probes:
        s = s + np.einsum("...i,i->...", c, np.asarray(p))
    theta1 = b.grid_points()[:, 0]
    return noise.a + noise.b * np.tanh(s)[..., None] + noise.c * np.sin(2 * math.pi * theta1)


def sigma_state_gradient(x, spec: ModelSpec) -> np.ndarray:
    """``d sigma(theta; x) / dx``; theta-independent here, shape ``(..., M)``."""
    c, _ = _unwrap(x)
    noise = spec.noise
    if noise.kind == "additive-identity" or not noise.probes or noise.b == 0:
        return np.zeros(c.shape)
    P = np.asarray(noise.probes)
    s = c @ P.sum(axis=0)
    return (noise.b / np.cosh(s) ** 2)[..., None] * P.sum(axis=0)


def diffusion_apply(x, u, spec: ModelSpec):
    """``B_m(x) u``: collocation product with ``sigma(.; x)`` then projection."""
    c, like = _unwrap(x)
    uc, ulike = _unwrap(u)
    if spec.family == "finite-dim-fw":
        return np.einsum("...i,ji->...j", uc, spec.fw.sigma_matrix)
    b = spec.basis
    if spec.noise.kind == "additive-identity":
        return _rewrap(np.broadcast_to(uc, np.broadcast_shapes(uc.shape, c.shape)).copy(), ulike or like)
    out = b.to_spectral(sigma_grid(c, spec) * b.to_grid(uc))
    return _rewrap(out, ulike or like)


def diffusion_matrix(x, spec: ModelSpec) -> np.ndarray:
    """Matrix of ``B_m(x)`` in coefficient space, shape ``(..., M, M)``."""
    c, _ = _unwrap(x)
    M = spec.state_dim
    if spec.family == "finite-dim-fw":
        return np.broadcast_to(spec.fw.sigma_matrix, c.shape[:-1] + (M, M)).copy()
    if spec.noise.kind == "additive-identity":
        return np.broadcast_to(np.eye(M), c.shape[:-1] + (M, M)).copy()
    b = spec.basis
    G = b.grid_matrix()
    return np.einsum("qi,...q,qj->...ij", G, sigma_grid(c, spec), G) / b.grid_size


def shift_constant(spec: ModelSpec) -> float:
    """The omega making ``C_m = drift - omega I (+ const)`` dissipative."""
    if spec.family == "allen-cahn":
        return spec.potential.sup_d2
    if spec.family == "cahn-hilliard":
        return 0.25 * spec.potential.sup_d2**2
    if spec.family == "quasilinear":
        return spec.flux.sup_d1**2 / (4.0 * spec.alpha)
    raise ValueError("no shifted operator for finite-dim-fw")


def shifted_operator(x, spec: ModelSpec):
    """``C_m x``: unshifted drift with ``F_m`` removed, so that ``C_m 0 = 0``."""
    c, like = _unwrap(x)
    out = drift(c, spec) - shift_constant(spec) * c
    if spec.family == "allen-cahn":
        b = spec.basis
        out = out + b.to_spectral(spec.potential.dV(np.zeros(b.grid_size)))
    return _rewrap(out, like)


@dataclass
class DissipativityReport:
    family: str
    trials: int
    max_value: float
    tol: float
    witness: tuple | None

    @property
    def passed(self) -> bool:
        return self.max_value <= self.tol

    def to_dict(self) -> dict:
        out = {"family": self.family, "trials": self.trials, "max_value": self.max_value,
               "tol": self.tol, "pass": self.passed}
        if self.witness is not None and not self.passed:
            out["witness"] = [w.tolist() for w in self.witness]
        return out


def dissipativity_check(spec: ModelSpec, trials: int = 500, seed: int = 0, scale: float = 2.0,
                        tol: float = 1e-9) -> DissipativityReport:
    """Max of ``<C_m x - C_m y, x - y>`` over random pairs (should be <= 0)."""
    rng = np.random.default_rng(seed)
    M = spec.state_dim
    decay = 1.0 / (1.0 + np.sqrt(spec.basis.lam_sum) / (2 * math.pi))
    best, witness = -math.inf, None
    for _ in range(trials):
        x = scale * rng.standard_normal(M) * decay
        y = scale * rng.standard_normal(M) * decay
        v = float(np.dot(shifted_operator(x, spec) - shifted_operator(y, spec), x - y))
        if v > best:
            best, witness = v, (x, y)
    return DissipativityReport(spec.family, trials, best, tol, witness)


@dataclass(frozen=True)
class ScalingResult:
    family: str
    ratio: float
    budget: float

    @property
    def passed(self) -> bool:
        return self.ratio <= self.budget

    @property
    def margin(self) -> float:
        return self.budget - self.ratio


def scaling_check(family: str, m: int, n: float, dim: int = 1, budget: float = 1.0) -> ScalingResult:
    """Truncation/noise balance: AC ``m^(4d)/n``, CH ``m^(3d)/n``, quasilinear ``m^3/n``."""
    if family == "allen-cahn":
        ratio = m ** (4 * dim) / n
    elif family == "cahn-hilliard":
        ratio = m ** (3 * dim) / n
    elif family == "quasilinear":
        ratio = m**3 / n
    elif family == "finite-dim-fw":
        ratio = 0.0
    else:
        raise ValueError(f"unknown family {family!r}")
    return ScalingResult(family, float(ratio), float(budget))


def lipschitz_ratio(fn: Callable, sampler: Callable, pairs: int = 10_000, seed: int = 0) -> float:
    """Largest sampled ``|fn(x) - fn(y)| / |x - y|``."""
    rng = np.random.default_rng(seed)
    x = sampler(rng, pairs)
    y = sampler(rng, pairs)
    num = np.linalg.norm(np.atleast_2d(fn(x) - fn(y)).reshape(pairs, -1), axis=-1)
    den = np.linalg.norm(np.atleast_2d(x - y).reshape(pairs, -1), axis=-1)
    return float(np.max(num / den))


def validate_model(spec: ModelSpec, budget: float = 1.0) -> None:
    """Raise :class:`ConditionError` naming the first violated structural condition."""
    if spec.family in ("allen-cahn", "cahn-hilliard"):
        validate_potential(spec.potential, cahn_hilliard=spec.family == "cahn-hilliard")
    if spec.noise.kind == "multiplicative-AC":
        validate_noise(spec)
    if spec.is_spde and not math.isinf(spec.n):
        res = scaling_check(spec.family, spec.m, spec.n, spec.dim, budget)
        if not res.passed:
            raise ConditionError(f"scaling check failed for {spec.family}: ratio {res.ratio:.6g} > budget {budget}")


def validate_noise(spec: ModelSpec, samples: int = 2000, seed: int = 0) -> None:
    rng = np.random.default_rng(seed)
    x = 10.0 * rng.standard_normal((samples, spec.state_dim))
    s = sigma_grid(x, spec)
    if np.max(np.abs(s)) > spec.noise.sup_abs * (1 + 1e-12):
        raise ConditionError("Condition 1.3(3): |phi| exceeds its declared bound M")
