"""The canned experiments behind each CLI subcommand.

Each ``run_*`` takes an :class:`ExperimentConfig` and returns an :class:`Outcome`; nothing is
written here.  Outputs carry no timings or host details so reruns are byte-identical.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.linalg import solve_banded

from smallnoise import hamiltonians, models, spectral, tataru
from smallnoise.harness.config import ExperimentConfig
from smallnoise.harness.io import Outcome, Table
from smallnoise.rate import action, deterministic_flow, gradient_check, minimize_action
from smallnoise.semigroup import (Grid1D, TestFunctional, rate_from_semigroup, semigroup_doubling,
                                  v_control, vn_estimate)
from smallnoise.simulator import Path, simulate_ensemble, simulate_path


# --------------------------------------------------------------------------- OU oracles


def ou_transition_cost(x0: float, a: float, T: float, theta: float = 1.0, sigma: float = 1.0) -> float:
    """Minimum of ``1/2 int |(x' + theta x) / sigma|^2`` from ``x0`` to ``a`` in time ``T``."""
    gap = a - x0 * math.exp(-theta * T)
    return theta * gap * gap / (sigma * sigma * -math.expm1(-2 * theta * T))


def ou_quadratic_program(x0: float, a: float, T: float, slices: int, theta: float = 1.0,
                         sigma: float = 1.0) -> float:
    """Discrete OU action minimised by solving its tridiagonal normal equations.

    Uses forward differences and midpoint drift on every slice, so the discrete problem is
    a strictly convex quadratic in the interior nodes.
    """
    dt = T / slices
    # residual on slice i: (x_{i+1} - x_i)/dt + theta (x_i + x_{i+1})/2 = A x_{i+1} - B x_i
    A = 1.0 / dt + 0.5 * theta
    B = 1.0 / dt - 0.5 * theta
    n = slices - 1
    diag = np.full(n, A * A + B * B)
    off = np.full(n, -A * B)
    rhs = np.zeros(n)
    rhs[0] += A * B * x0
    rhs[-1] += A * B * a
    ab = np.zeros((3, n))
    ab[0, 1:] = off[:-1]
    ab[1] = diag
    ab[2, :-1] = off[:-1]
    z = solve_banded((1, 1), ab, rhs)
    x = np.concatenate([[x0], z, [a]])
    r = A * x[1:] - B * x[:-1]
    return float(0.5 * dt * np.sum(r * r) / sigma**2)


# --------------------------------------------------------------------------- simulate


def _functional(name: str, spec: models.ModelSpec):
    if name == "endpoint-norm":
        return lambda p: np.linalg.norm(p.endpoint, axis=-1)
    if name == "endpoint-first":
        return lambda p: p.endpoint[..., 0]
    if name == "max-free-energy":
        return hamiltonians.max_free_energy(spec)
    raise ValueError(f"unknown functional {name!r}")


def run_simulate(cfg: ExperimentConfig) -> Outcome:
    spec = cfg.model_spec()
    sim = cfg.sim_config()
    x0 = np.asarray(cfg.params["x0"], dtype=float)
    path = simulate_path(x0, spec, sim, member=0)
    ens = simulate_ensemble(x0, spec, sim, functional=_functional(cfg.params["functional"], spec))
    table = Table(["member", "seed", "value", "aborted"])
    for i, s, v, a in zip(ens.members, ens.member_seeds, ens.values, ens.aborted):
        table.add(int(i), int(s), float(v), bool(a))
    n_abort = int(ens.aborted.sum())
    summary = {"members": int(ens.members.size), "aborted": n_abort,
               "mean": ens.mean() if n_abort < ens.members.size else None,
               "std_error": ens.std_error() if ens.members.size - n_abort > 1 else None}
    return Outcome(n_abort == 0, summary, {"ensemble": table}, {"path": path})


# --------------------------------------------------------------------------- ldp-slope


def _ball_net(x0: np.ndarray, x1: np.ndarray, delta: float, points: int) -> list[np.ndarray]:
    """Points of the target ball along the line through ``x0`` and ``x1`` (effective 1-D net)."""
    d = x1 - x0
    u = d / np.linalg.norm(d) if np.linalg.norm(d) > 0 else np.eye(x1.size)[0]
    return [x1 + s * delta * u for s in np.linspace(-1.0, 1.0, points)]


def ball_hits(x0, x1, delta: float, spec: models.ModelSpec, sim, count: int, batch: int) -> tuple[int, int, int]:
    """``(hits, finite members, aborted)`` for ``|X(T) - x1| <= delta`` over ``count`` members."""
    x1 = np.asarray(x1, dtype=float)
    hits = aborted = 0
    for lo in range(0, count, batch):
        members = np.arange(lo, min(count, lo + batch), dtype=np.int64)
        res = simulate_ensemble(x0, spec, sim, members=members, endpoint_only=True,
                                functional=lambda p: np.linalg.norm(p.endpoint - x1, axis=-1) <= delta)
        ok = ~res.aborted
        hits += int(np.sum(res.values[ok] > 0.5))
        aborted += int(res.aborted.sum())
    return hits, count - aborted, aborted


def run_ldp_slope(cfg: ExperimentConfig) -> Outcome:
    spec = cfg.model_spec()
    p = cfg.params
    x0 = np.asarray(p["x0"], dtype=float)
    x1 = np.asarray(p["x1"], dtype=float)
    delta, T = float(p["delta"]), float(cfg.sim["T"])
    cells = Table(["n", "trials", "hits", "aborted", "frequency", "censored", "upper_bound", "neg_log_freq_over_n"])
    counts, trials = [], []
    for n, count in zip(p["n_list"], p["ensembles"]):
        sim = cfg.sim_config(ensemble=int(count))
        hits, good, aborted = ball_hits(x0, x1, delta, spec.with_n(float(n)), sim, int(count), int(p["batch"]))
        counts.append(hits)
        trials.append(good)
        freq = hits / good
        rate = -math.log(freq) / n if hits else None
        cells.add(float(n), good, hits, aborted, freq, hits == 0, max(hits, 1) / good,
                  "" if rate is None else rate)
    fit = hamiltonians.fit_log_frequency(p["n_list"], counts, trials, min_count=int(p["min_count"]))

    net = Table(["point", "action", "converged"])
    best = math.inf
    for z in _ball_net(x0, x1, delta, int(p["net_points"])):
        _, rep = minimize_action(x0, z, T, spec, int(p["slices"]))
        net.add(*[float(v) for v in z], rep.total, rep.converged)
        best = min(best, rep.total)
    net.header = [f"x_{k + 1}" for k in range(x1.size)] + ["action", "converged"]

    summary = {"fit": fit.to_dict(), "action_infimum": best, "censored_n": [float(n) for n, c in zip(p["n_list"], counts) if c == 0]}
    if spec.family == "finite-dim-fw" and spec.fw.name == "ou" and spec.fw.d == 1:
        theta, sigma = spec.fw.theta, float(spec.fw.sigma_matrix[0, 0])
        closed = ou_transition_cost(float(x0[0]), float(x1[0]), T, theta, sigma)
        qp = ou_quadratic_program(float(x0[0]), float(x1[0]), T, 4096, theta, sigma)
        summary["ou_closed_form"] = closed
        summary["ou_quadratic_program"] = qp
        summary["oracles_agree"] = abs(closed - qp) <= 1e-4
    if all(c == 0 for c in counts):
        return Outcome(False, summary, {"cells": cells, "net": net}, status="inconclusive")
    if fit.slope is None:
        return Outcome(False, summary, {"cells": cells, "net": net}, status="inconclusive")
    err = abs(-fit.slope - best)
    summary["relative_error"] = err / best if best > 0 else None
    passed = err <= float(p["rel_tol"]) * max(best, 0.1) and summary.get("oracles_agree", True)
    return Outcome(bool(passed), summary, {"cells": cells, "net": net})


# --------------------------------------------------------------------------- map


def run_map(cfg: ExperimentConfig) -> Outcome:
    spec = cfg.model_spec()
    p = cfg.params
    x0 = np.asarray(p["x0"], dtype=float)
    x1 = np.asarray(p["x1"], dtype=float)
    T = float(cfg.sim["T"])
    table = Table(["slices", "action", "converged", "iterations", "grad_norm"])
    values, init, path, rep = [], None, None, None
    ok = True
    for N in p["slices"]:
        if init is not None:
            t_new = np.linspace(0.0, T, N + 1)
            init = Path(t_new, np.stack([np.interp(t_new, init.times, init.states[:, j])
                                         for j in range(x0.size)], axis=1))
        path, rep = minimize_action(x0, x1, T, spec, int(N), init=init)
        init = path
        values.append(rep.total)
        table.add(int(N), rep.total, rep.converged, rep.iterations, rep.grad_norm)
        ok &= rep.converged
    decreasing = all(values[i + 1] <= values[i] + 1e-8 for i in range(len(values) - 1))
    grad_err = gradient_check(path, spec, trials=int(p["gradient_trials"]), seed=cfg.seed)
    flow = deterministic_flow(x0 if p.get("flow_from") != "x1" else x1, spec,
                              np.linspace(0.0, T, int(round(T / 1e-3)) + 1))
    flow_action = action(flow, spec).total
    summary = {"actions": values, "decreasing": decreasing, "gradient_mismatch": grad_err,
               "flow_action": flow_action, "report": rep.to_dict()}
    passed = ok and decreasing and grad_err <= float(p["grad_tol"]) and flow_action <= 1e-5
    return Outcome(bool(passed), summary, {"refinement": table}, {"instanton": path})


# --------------------------------------------------------------------------- semigroup-compare


def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(abs(b), 1e-300)


def run_semigroup_compare(cfg: ExperimentConfig) -> Outcome:
    spec = cfg.model_spec()
    p = cfg.params
    T = float(cfg.sim["T"])
    sim = cfg.sim_config()
    vt = Table(["index", "x0", "v_control", "vn", "vn_std_error", "relative_error", "pass"])
    ok_vn = True
    worst_rel = 0.0
    for i, item in enumerate(p["functionals"]):
        f = TestFunctional.from_dict(item["f"])
        x0 = np.asarray(item["x0"], dtype=float)
        vc = v_control(T, f, x0, spec, int(p["slices"])).value
        vn = vn_estimate(T, f, x0, spec, sim.ensemble, dt=sim.dt, seed=cfg.seed + i, scheme=sim.scheme)
        rel = _rel(vn.value, vc)
        good = rel <= float(p["vn_rel_tol"])
        ok_vn &= good
        worst_rel = max(worst_rel, rel)
        vt.add(i, float(x0[0]), vc, vn.value, vn.std_error, rel, good)

    g = Grid1D(*p["grid"][:2], int(p["grid"][2]))
    dt_ = Table(["x", "y", "lower_bound", "p", "c", "one_parameter", "action", "gap", "pass"])
    ok_dual = True
    excess = -math.inf
    for x, y in p["pairs"]:
        rb = rate_from_semigroup(T, float(y), float(x), spec, g, k=int(p["k"]), c_max=float(p["c_max"]))
        _, rep = minimize_action([x], [y], T, spec, int(p["slices"]))
        good = rb.value <= rep.total + float(p["duality_tol"]) and rb.value >= rb.one_parameter_value
        ok_dual &= good
        excess = max(excess, rb.value - rep.total)
        dt_.add(float(x), float(y), rb.value, rb.p, rb.c, rb.one_parameter_value, rep.total, rep.total - rb.value, good)
    summary = {"vn_within_tolerance": ok_vn, "max_vn_relative_error": worst_rel, "weak_duality": ok_dual,
               "max_bound_minus_action": excess}
    return Outcome(bool(ok_vn and ok_dual), summary, {"functionals": vt, "duality": dt_})


# --------------------------------------------------------------------------- resolvent-iterate


def run_resolvent_iterate(cfg: ExperimentConfig) -> Outcome:
    spec = cfg.model_spec()
    p = cfg.params
    T = float(cfg.sim["T"])
    g = Grid1D(*p["grid"][:2], int(p["grid"][2]))
    f = TestFunctional.from_dict(p["h"])
    h = np.asarray(f(g.x[:, None]), dtype=float)
    rep = semigroup_doubling(h, T, p["ks"], spec, g)
    it = Table(["x"] + [f"k_{k}" for k in rep.ks])
    for j, x in enumerate(g.x):
        it.add(float(x), *[float(v[j]) for v in rep.iterates])
    chk = Table(["x", "iterate", "v_control", "relative_error", "pass"])
    ok = True
    for x in p["check_points"]:
        j = int(np.argmin(np.abs(g.x - x)))
        xi = float(g.x[j])
        vc = v_control(T, f, [xi], spec, int(p["slices"])).value
        val = float(rep.iterates[-1][j])
        rel = _rel(val, vc)
        good = rel <= float(p["rel_tol"])
        ok &= good
        chk.add(xi, val, vc, rel, good)
    summary = {"ks": rep.ks, "differences": rep.differences, "monotone": rep.monotone, "matches_control": ok}
    return Outcome(bool(rep.monotone and ok), summary, {"iterates": it, "check": chk})


# --------------------------------------------------------------------------- containment


def run_containment(cfg: ExperimentConfig) -> Outcome:
    p = cfg.params
    spec = cfg.model_spec()
    sim = cfg.sim_config()
    reps = hamiltonians.containment_experiment(spec, np.asarray(p["x0"], dtype=float), p["C1"], sim.T,
                                               p["n_list"], sim.ensemble, dt=sim.dt, seed=cfg.seed,
                                               budget=float(p["budget"]), scheme=sim.scheme)
    table = Table(["C1", "n", "trials", "exceed", "aborted", "frequency", "censored", "upper_bound"])
    for r in reps:
        for c in r.cells:
            table.add(r.C1, c.n, c.trials, c.exceed, c.aborted, c.frequency, c.censored, c.upper_bound)
    nested = all(a.exceed >= b.exceed for r1, r2 in zip(reps, reps[1:]) for a, b in zip(r1.cells, r2.cells))
    primary = reps[0]
    passed = primary.strictly_decreasing and primary.fit.slope is not None and primary.fit.slope < 0 and nested
    summary = {"C0": primary.C0, "reports": [r.to_dict() for r in reps], "nested_levels": nested}
    return Outcome(bool(passed), summary, {"exceedance": table})


# --------------------------------------------------------------------------- tataru-suite


def run_tataru_suite(cfg: ExperimentConfig) -> Outcome:
    p = cfg.params
    reps = tataru.run_suites(samples=int(p["samples"]), seed=cfg.seed, m=int(p["heat_m"]))
    table = Table(["suite", "samples", "max_violation", "pass"])
    for r in reps:
        table.add(r.suite, r.samples, r.max_violation, r.passed)
    return Outcome(all(r.passed for r in reps), {"suites": [r.to_dict() for r in reps]}, {"suites": table})


# --------------------------------------------------------------------------- dissipativity-suite


def structural_checks(m: int = 9, trials: int = 500, bound_m: int = 16, fields: int = 500, seed: int = 0,
                      tol: float = 1e-9) -> list[dict]:
    """Dissipativity, eigenvalue-sum bound, Poincare, Parseval, determinism and CH mass checks."""
    rng = np.random.default_rng(seed)
    out = []
    for spec in (models.allen_cahn(1, m, math.inf), models.allen_cahn(1, m, math.inf, models.Potential("quadratic")),
                 models.cahn_hilliard(1, m, math.inf)):
        r = models.dissipativity_check(spec, trials=trials, seed=seed, tol=tol)
        name = f"dissipativity/{spec.family}/{spec.potential.name}"
        out.append({"check": name, "value": r.max_value, "pass": r.passed})

    worst = -math.inf
    for d in (1, 2, 3):
        for mm in range(1, bound_m + 1):
            total, bound = spectral.eigen_sum_bound(mm, d)
            worst = max(worst, total - bound)
    out.append({"check": "eigenvalue-sum-bound", "value": worst, "pass": worst <= 0})

    basis = spectral.get_basis(1, m)
    worst = 0.0
    ratio = math.inf
    for _ in range(fields):
        c = rng.standard_normal(m) / (1 + np.arange(m))
        lhs, rhs = hamiltonians.poincare_check(c, 1, m)
        worst = max(worst, lhs - rhs)
        if lhs > 0:
            ratio = min(ratio, rhs / lhs)
    lhs, rhs = hamiltonians.poincare_check(spectral.SpectralField.mode(1, m, (2,)).coeffs, 1, m)
    sharp = abs(lhs - rhs) <= 1e-12
    out.append({"check": "poincare", "value": worst, "min_ratio": ratio, "sharp": sharp,
                "pass": worst <= 1e-12 and sharp and ratio >= 1 - 1e-12})

    G = basis.grid_matrix()
    gram = G.T @ G / basis.grid_size
    orth = float(np.max(np.abs(gram - np.eye(basis.size))))
    c = rng.standard_normal((100, basis.size))
    pars = float(np.max(np.abs(np.sqrt(basis.grid_mean(basis.to_grid(c) ** 2)) - np.linalg.norm(c, axis=1))))
    out.append({"check": "orthonormality", "value": orth, "pass": orth <= 1e-10})
    out.append({"check": "parseval", "value": pars, "pass": pars <= 1e-10})

    from smallnoise.simulator import SimConfig
    spec = models.allen_cahn(1, 5, 256.0)
    sim = SimConfig(dt=1e-3, T=0.05, seed=seed, ensemble=4)
    x0 = np.array([0.5, 0.1, 0.0, 0.0, 0.0])
    a = simulate_path(x0, spec, sim).states
    b = simulate_path(x0, spec, sim).states
    out.append({"check": "determinism", "value": float(np.max(np.abs(a - b))), "pass": a.tobytes() == b.tobytes()})

    ch = models.cahn_hilliard(1, m, math.inf)
    x = 2.0 * rng.standard_normal((100, ch.state_dim))
    mass = float(np.max(np.abs(models.drift(x, ch)[:, 0])))
    out.append({"check": "cahn-hilliard-mass", "value": mass, "pass": mass == 0.0})
    return out


def run_dissipativity_suite(cfg: ExperimentConfig) -> Outcome:
    p = cfg.params
    checks = structural_checks(int(p["m"]), int(p["trials"]), int(p["bound_m"]), int(p["poincare_fields"]),
                               cfg.seed, float(p["tol"]))
    table = Table(["check", "value", "pass"])
    for c in checks:
        table.add(c["check"], float(c["value"]), c["pass"])
    return Outcome(all(c["pass"] for c in checks), {"checks": checks}, {"checks": table})


RUNNERS = {
    "simulate": run_simulate,
    "ldp-slope": run_ldp_slope,
    "map": run_map,
    "semigroup-compare": run_semigroup_compare,
    "resolvent-iterate": run_resolvent_iterate,
    "containment": run_containment,
    "tataru-suite": run_tataru_suite,
    "dissipativity-suite": run_dissipativity_suite,
}


def run(cfg: ExperimentConfig) -> Outcome:
    return RUNNERS[cfg.experiment](cfg)
