"""Versioned experiment configurations and the named built-in defaults."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

from smallnoise.jsonio import config_hash
from smallnoise.models import ModelSpec, validate_model
from smallnoise.simulator import SimConfig

SCHEMA_VERSION = 1
SPEC_VERSION = "smallnoise-1.0"

EXPERIMENTS = ("simulate", "ldp-slope", "map", "semigroup-compare", "resolvent-iterate", "containment",
               "tataru-suite", "dissipativity-suite")

_OU = {"family": "finite-dim-fw", "n": 64.0,
       "fw": {"name": "ou", "d": 1, "theta": 1.0, "sigma": 1.0}}
_AC4 = {"family": "allen-cahn", "dim": 1, "m": 4, "n": 64.0}
_AC5 = {"family": "allen-cahn", "dim": 1, "m": 5, "n": "inf"}

BUILTINS: dict[str, dict] = {
    "simulate": {
        "model": {"family": "allen-cahn", "dim": 1, "m": 5, "n": 256.0},
        "sim": {"dt": 1e-3, "T": 0.5, "scheme": "semi-implicit-linear", "ensemble": 64},
        "params": {"x0": [1.0, 0.0, 0.0, 0.0, 0.0], "functional": "endpoint-norm", "budget": 4.0},
    },
    "ldp-slope": {
        "model": _OU,
        "sim": {"dt": 0.05, "T": 1.0, "scheme": "euler-maruyama", "ensemble": 1},
        "params": {"x0": [0.0], "x1": [1.0], "delta": 0.2, "n_list": [4.0, 16.0, 64.0],
                   "ensembles": [1_000_000, 30_000_000, 1_000_000], "net_points": 9, "slices": 64,
                   "batch": 2_000_000, "min_count": 5, "rel_tol": 0.15},
    },
    "map": {
        "model": _AC5,
        "sim": {"dt": 0.125, "T": 2.0},
        "params": {"x0": [-0.9, 0.0, 0.05, 0.0, 0.0], "x1": [0.9, 0.05, 0.0, 0.0, 0.0],
                   "slices": [16, 32, 64], "gradient_trials": 20, "grad_tol": 1e-5},
    },
    "semigroup-compare": {
        "model": _OU,
        "sim": {"dt": 0.01, "T": 1.0, "scheme": "semi-implicit-linear", "ensemble": 200_000},
        "params": {
            "functionals": [
                {"f": {"kind": "clipped-quadratic", "p": [0.5], "y": [0.0], "c": 0.0, "L": 1.0}, "x0": [1.0]},
                {"f": {"kind": "clipped-quadratic", "p": [-0.25], "y": [0.0], "c": 0.0, "L": 1.0}, "x0": [1.5]},
                {"f": {"kind": "clipped-quadratic", "p": [0.0], "y": [0.0], "c": 0.5, "L": 2.0}, "x0": [1.5]},
                {"f": {"kind": "clipped-quadratic", "p": [0.0], "y": [-1.0], "c": 0.25, "L": 1.0}, "x0": [1.0]},
                {"f": {"kind": "clipped-quadratic", "p": [0.3], "y": [0.5], "c": 0.3, "f0": 0.2, "L": 1.0},
                 "x0": [-1.0]},
            ],
            "pairs": [[0.0, 1.0], [1.0, 0.36787944117144233], [0.5, -0.5], [-1.0, 0.5], [0.0, -1.5]],
            "grid": [-3.0, 3.0, 481], "k": 32, "c_max": 1.0, "slices": 64,
            "vn_rel_tol": 0.10, "duality_tol": 1e-3,
        },
    },
    "resolvent-iterate": {
        "model": _OU,
        "sim": {"T": 1.0},
        "params": {"h": {"kind": "clipped-quadratic", "p": [0.5], "y": [0.0], "c": 0.0, "L": 1.0},
                   "grid": [-3.0, 3.0, 241], "ks": [8, 16, 32, 64],
                   "check_points": [0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0],
                   "rel_tol": 0.05, "slices": 64},
    },
    "containment": {
        "model": _AC4,
        "sim": {"dt": 1e-3, "T": 1.0, "scheme": "semi-implicit-linear", "ensemble": 4000},
        "params": {"x0": [1.0, 0.0, 0.0, 0.0], "C1": [0.04, 0.08], "n_list": [64.0, 128.0, 256.0],
                   "budget": 4.0},
    },
    "tataru-suite": {
        "model": _OU,
        "sim": {},
        "params": {"samples": 500, "heat_m": 5},
    },
    "dissipativity-suite": {
        "model": {"family": "allen-cahn", "dim": 1, "m": 9, "n": "inf"},
        "sim": {"dt": 1e-3, "T": 0.05, "scheme": "semi-implicit-linear", "ensemble": 8},
        "params": {"trials": 500, "m": 9, "bound_m": 16, "poincare_fields": 500, "tol": 1e-9},
    },
}


@dataclass
class ExperimentConfig:
    experiment: str
    model: dict
    sim: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    seed: int = 0
    schema: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        if self.schema != SCHEMA_VERSION:
            raise ValueError(f"config schema {self.schema} is not supported (expected {SCHEMA_VERSION})")

    def to_dict(self) -> dict:
        return {"schema": self.schema, "experiment": self.experiment, "seed": self.seed,
                "model": self.model, "sim": self.sim, "params": self.params}

    @property
    def hash(self) -> str:
        return config_hash(self.to_dict())

    def model_spec(self, validate: bool = True) -> ModelSpec:
        spec = ModelSpec.from_dict(self.model)
        if validate:
            validate_model(spec, budget=float(self.params.get("budget", 1.0)))
        return spec

    def sim_config(self, **override) -> SimConfig:
        d = {"scheme": "semi-implicit-linear", "ensemble": 1, **self.sim, "seed": self.seed, **override}
        return SimConfig.from_dict(d)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        unknown = set(d) - {"schema", "experiment", "seed", "model", "sim", "params"}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        base = builtin(d["experiment"]).to_dict()
        for key in ("model", "sim"):
            if key in d:
                base[key] = d[key]
        base["params"] = {**base["params"], **d.get("params", {})}
        base["seed"] = int(d.get("seed", base["seed"]))
        base["schema"] = int(d.get("schema", SCHEMA_VERSION))
        return cls(**base)


def builtin(experiment: str) -> ExperimentConfig:
    if experiment not in BUILTINS:
        raise ValueError(f"unknown experiment {experiment!r}; choose from {EXPERIMENTS}")
    d = copy.deepcopy(BUILTINS[experiment])
    return ExperimentConfig(experiment, d["model"], d["sim"], d["params"])


def load(path: str, experiment: str | None = None) -> ExperimentConfig:
    with open(path) as fh:
        d = json.load(fh)
    if experiment is not None:
        if d.setdefault("experiment", experiment) != experiment:
            raise ValueError(f"config is for {d['experiment']!r}, not {experiment!r}")
    return ExperimentConfig.from_dict(d)
