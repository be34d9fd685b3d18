"""End-to-end acceptance criteria at their stated tolerances and time budgets.

Each test records one ``PASS``/``FAIL`` line; ``conftest.py`` prints them after the run.
``python3 tests/test_acceptance.py`` runs them directly.
"""
import math
import time

import numpy as np
import pytest

from smallnoise import hamiltonians as hm
from smallnoise import models
from smallnoise.harness import config as configs
from smallnoise.harness.experiments import ou_quadratic_program, ou_transition_cost, run

from oracles import generator_by_differences

LINES: list[str] = []


def record(number: int, name: str, passed: bool, detail: str, seconds: float, budget: float) -> bool:
    ok = bool(passed) and seconds <= budget
    LINES.append(f"criterion {number} {name}: {'PASS' if ok else 'FAIL'} ({detail}; {seconds:.1f} s of {budget:.0f} s)")
    print(LINES[-1])
    return ok


def timed(experiment: str):
    start = time.perf_counter()
    outcome = run(configs.builtin(experiment))
    return outcome, time.perf_counter() - start


@pytest.mark.acceptance
def test_criterion_1_ou_slope():
    closed = ou_transition_cost(0.0, 1.0, 1.0)
    qp = ou_quadratic_program(0.0, 1.0, 1.0, 4096)
    cfg = configs.builtin("ldp-slope")
    assert min(cfg.params["ensembles"]) >= 100_000
    out, sec = timed("ldp-slope")
    r = out.summary
    slope = r["fit"]["slope"]
    detail = (f"-slope {-slope:.4f} vs action inf {r['action_infimum']:.4f}, rel err {r['relative_error']:.3f}; "
              f"closed form {closed:.10f} vs QP {qp:.10f}" if slope is not None else f"status {out.status}")
    assert record(1, "OU large-deviation slope", out.passed and abs(closed - qp) <= 1e-4, detail, sec, 300)


@pytest.mark.acceptance
def test_criterion_2_duality():
    out, sec = timed("semigroup-compare")
    r = out.summary
    detail = (f"worst vn/v_control rel err {r['max_vn_relative_error']:.4f}; "
              f"max bound - action {r['max_bound_minus_action']:.2e}")
    assert record(2, "semigroup duality bracket", out.passed, detail, sec, 600)


@pytest.mark.acceptance
def test_criterion_3_resolvent():
    out, sec = timed("resolvent-iterate")
    r = out.summary
    worst = max(row[3] for row in out.tables["check"].rows)
    detail = f"differences {', '.join(f'{d:.4f}' for d in r['differences'])}; worst rel err {worst:.4f}"
    assert record(3, "resolvent iteration", out.passed, detail, sec, 300)


@pytest.mark.acceptance
def test_criterion_4_instanton():
    out, sec = timed("map")
    r = out.summary
    detail = (f"flow action {r['flow_action']:.2e}; actions {', '.join(f'{a:.5f}' for a in r['actions'])}; "
              f"gradient mismatch {r['gradient_mismatch']:.1e}")
    assert record(4, "Allen-Cahn zero action and instanton", out.passed, detail, sec, 600)


@pytest.mark.acceptance
def test_criterion_5_tataru():
    out, sec = timed("tataru-suite")
    suites = out.summary["suites"]
    enough = all(s["samples"] >= 500 for s in suites)
    worst = max(s["max_violation"] for s in suites)
    kinds = {s["suite"].split("/")[-1] for s in suites if "/" in s["suite"]}
    detail = f"{len(suites)} suites, worst violation {worst:.1e}"
    assert record(5, "Tataru suite", out.passed and enough and worst <= 1e-8 and kinds == {"scalar", "heat"},
                  detail, sec, 120)


@pytest.mark.acceptance
def test_criterion_6_lyapunov():
    start = time.perf_counter()
    s = models.allen_cahn(1, 4, 512.0)
    rng = np.random.default_rng(6)
    bound = 4 * math.pi**2 * 5**4 / (6 * 512) + 4**3 / 512 * s.potential.sup_d2
    worst_ly = -math.inf
    for _ in range(1000):
        chk = hm.lyapunov_bound_check(2 * rng.standard_normal(4), s, tol=1e-8)
        assert chk.bound == pytest.approx(bound, rel=1e-14)
        worst_ly = max(worst_ly, chk.value - chk.bound)
    f = hm.RadialTestFn.for_model(s)
    worst_gen = 0.0
    for _ in range(50):
        x = 0.3 * rng.standard_normal(4)
        ref = generator_by_differences(f, x, s)
        worst_gen = max(worst_gen, abs(hm.transformed_generator(f, x, s).total - ref) / abs(ref))
    sec = time.perf_counter() - start
    detail = f"max H f - bound {worst_ly:.3f}; generator rel err {worst_gen:.1e}"
    assert record(6, "Lyapunov bound", worst_ly <= 1e-8 and worst_gen <= 1e-8, detail, sec, 120)


@pytest.mark.acceptance
def test_criterion_7_containment():
    out, sec = timed("containment")
    primary = out.summary["reports"][0]
    counts = [c["exceed"] for c in primary["cells"]]
    detail = f"C1 {primary['C1']}: exceedances {counts} of 4000, slope {primary['fit']['slope']:.4f}"
    assert record(7, "containment", out.passed, detail, sec, 600)


@pytest.mark.acceptance
def test_criterion_8_structural():
    out, sec = timed("dissipativity-suite")
    failed = [c["check"] for c in out.summary["checks"] if not c["pass"]]
    detail = f"{len(out.summary['checks'])} checks" + (f", failed {failed}" if failed else "")
    assert record(8, "structural suites", out.passed, detail, sec, 60)


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q", "-s"]))
