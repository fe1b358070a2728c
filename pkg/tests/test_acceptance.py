"""Acceptance suite: one verdict line per criterion, listed in the terminal summary.

The full-resolution PD run (362 segments, about 7 minutes) is included by
default; set RISWPT_SKIP_FULL_PD=1 to leave it out of quick local runs.
"""

import math
import os
import time

import numpy as np
import pytest

from riswpt import cone
from riswpt.orchestrate import run_pd
from riswpt.phase_opt import (MmOptions, QuadraticStack, SensorQuadratic, curvature_matrix, h_value, h_values,
                              minorizer_params, optimize_phases, smooth_objective, surrogate_value)
from riswpt.power import check_rotor_checksum, expectation_oracle_suite, mr_speed
from riswpt.scenario import RotorParams, default_scenario

SKIP_FULL_PD = os.environ.get("RISWPT_SKIP_FULL_PD", "") not in ("", "0")
REQ = 2e-4


def _stack(rng, K, L, M):
    return QuadraticStack(rng.uniform(0.1, 1.0, (K, L)), rng.uniform(0.0, 1.0, (K, L)),
                          np.exp(1j * rng.uniform(0, 2 * np.pi, (K, L, M))), rng.uniform(0.1, 1.0, K))


def _unit(rng, *shape):
    return np.exp(1j * rng.uniform(0, 2 * np.pi, shape))


def test_c01_mean_power_oracle(default_cfg, criterion):
    with criterion(1, "closed-form mean power vs 1e6-draw sampling, 20 cases, < 1%") as c:
        t0 = time.perf_counter()
        cases = expectation_oracle_suite(default_cfg, n_cases=20, n_samples=1_000_000, seed=42)
        elapsed = time.perf_counter() - t0
        worst = max(x.rel_error for x in cases)
        c.note(f"max rel err {worst:.3e}, {elapsed:.1f} s")
        assert len(cases) == 20 and {x.elements for x in cases} <= {1, 2, 4, 8}
        assert worst < 0.01
        assert elapsed < 120


def test_c02_rotor_checksum(criterion):
    with criterion(2, "maximum-range speed 18.3 +/- 0.2 m/s") as c:
        t0 = time.perf_counter()
        v = mr_speed(RotorParams())
        c.note(f"v_mr {v:.4f} m/s")
        assert abs(v - 18.3) <= 0.2
        assert check_rotor_checksum() == v
        assert time.perf_counter() - t0 < 1.0


def test_c03_smoothing_sandwich(criterion):
    with criterion(3, "0 <= min_k h_k - f <= log(K)/mu on 100 instances") as c:
        rng = np.random.default_rng(3)
        t0 = time.perf_counter()
        worst_lo, worst_hi = np.inf, -np.inf
        for _ in range(100):
            K, L, M = int(rng.integers(1, 6)), int(rng.integers(1, 5)), int(rng.integers(1, 9))
            mu = float(rng.choice([1.0, 10.0, 100.0, 1000.0]))
            stk = _stack(rng, K, L, M)
            phi = _unit(rng, L * M)
            gap = h_values(phi, stk).min() - smooth_objective(phi, stk, mu)
            worst_lo = min(worst_lo, gap)
            worst_hi = max(worst_hi, gap - math.log(K) / mu)
            assert -1e-9 <= gap <= math.log(K) / mu + 1e-9
        c.note(f"min gap {worst_lo:.2e}, max excess {worst_hi:.2e}")
        assert time.perf_counter() - t0 < 10


def test_c04_minorizer_validity(criterion):
    with criterion(4, "minorizer dominates, touches, and alpha <= lambda_min on 100 instances") as c:
        rng = np.random.default_rng(4)
        t0 = time.perf_counter()
        worst_dom, worst_tan, worst_curv = -np.inf, 0.0, np.inf
        for _ in range(100):
            L = int(rng.integers(1, 5))
            M = int(rng.integers(1, 16 // L + 1))
            K = int(rng.integers(1, 5))
            mu = float(rng.choice([1.0, 10.0, 100.0, 1000.0]))
            stk = _stack(rng, K, L, M)
            pr = _unit(rng, L * M)
            p = minorizer_params(pr, stk, mu)
            tan = abs(surrogate_value(pr, p) - smooth_objective(pr, stk, mu))
            worst_tan = max(worst_tan, tan)
            assert tan <= 1e-9
            for phi in _unit(rng, 1000, L * M):
                d = surrogate_value(phi, p) - smooth_objective(phi, stk, mu)
                worst_dom = max(worst_dom, d)
                assert d <= 1e-9
            for _ in range(10):
                lam = np.linalg.eigvalsh(curvature_matrix(pr, _unit(rng, L * M), rng.uniform(), stk, mu)).min()
                worst_curv = min(worst_curv, lam - p.alpha)
                assert p.alpha <= lam + 1e-9
        elapsed = time.perf_counter() - t0
        c.note(f"max surrogate excess {worst_dom:.2e}, tangency {worst_tan:.1e}, "
               f"min lambda_min - alpha {worst_curv:.2e}, {elapsed:.1f} s")
        assert elapsed < 120


def test_c05_mm_ascent_and_grid(criterion):
    with criterion(5, "MM objective non-decreasing; single element matches 0.001 rad grid to 1e-6") as c:
        rng = np.random.default_rng(5)
        t0 = time.perf_counter()
        for _ in range(30):
            K, L, M = int(rng.integers(1, 6)), int(rng.integers(1, 6)), int(rng.integers(1, 9))
            stk = _stack(rng, K, L, M)
            _, rep = optimize_phases(stk, None, _unit(rng, L * M), float(rng.choice([10.0, 100.0, 1000.0])),
                                     MmOptions(eps=1e-9, r_max=50))
            assert np.all(np.diff(rep.f_trace) >= 0)
        q = SensorQuadratic(np.array([0.8]), np.array([0.3]), np.array([[np.exp(0.9j)]]), 0.2)
        plan, rep = optimize_phases(QuadraticStack.from_list([q]), None, np.ones(1), 100.0,
                                    MmOptions(eps=1e-12, r_max=50))
        assert np.all(np.diff(rep.f_trace) >= 0)
        grid = np.arange(0, 2 * np.pi, 0.001)
        best = max(h_value(np.array([np.exp(1j * g)]), q) for g in grid)
        got = h_value(plan.phi.reshape(-1), q)
        c.note(f"grid gap {best - got:.1e}")
        assert got == pytest.approx(best, abs=1e-6)
        assert time.perf_counter() - t0 < 30


def _check_surrogate_rows(rep):
    assert rep.rows
    for r in rep.rows:
        assert max(r["ref_residual"], r["ref_cone_violation"]) <= 1e-9, r["iter"]
        assert r["solved_objective_J"] <= r["ref_objective_J"] * (1 + 1e-7), r["iter"]
    return len(rep.rows), rep.max_reference_residual()


@pytest.mark.parametrize("protocol", ["fhb", "pd"])
def test_c06_surrogate_every_iteration(runs, protocol, criterion):
    label = "FHB full" if protocol == "fhb" else "PD reduced"
    with criterion(6, "reference iterate feasible to 1e-9 and solved <= reference, every iteration") as c:
        n, res = _check_surrogate_rows(runs.run(protocol, 8))
        c.note(f"{label}: {n} iterations, max ref residual {res:.1e}")


@pytest.fixture(scope="module")
def full_pd():
    if SKIP_FULL_PD:
        pytest.skip("RISWPT_SKIP_FULL_PD set")
    t0 = time.perf_counter()
    rep = run_pd(default_scenario())
    return rep, time.perf_counter() - t0


def test_c06_surrogate_full_pd(full_pd, criterion):
    with criterion(6, "reference iterate feasible to 1e-9 and solved <= reference, every iteration") as c:
        n, res = _check_surrogate_rows(full_pd[0])
        c.note(f"PD full (362 segments): {n} iterations, max ref residual {res:.1e}")


@pytest.mark.parametrize("protocol", ["fhb", "pd"])
def test_c07_end_to_end_feasibility(runs, protocol, criterion):
    label = "FHB full" if protocol == "fhb" else "PD reduced"
    with criterion(7, "final harvested energy >= 0.2 mJ (1 - 1e-6) per sensor, M = 8") as c:
        rep = runs.run(protocol, 8)
        assert rep.ok, rep.message
        worst = float(np.min(rep.harvested))
        c.note(f"{label}: min harvested {worst * 1e3:.6f} mJ, {rep.wall_clock:.0f} s")
        assert np.all(rep.harvested >= REQ * (1 - 1e-6))
        assert rep.wall_clock < (180 if protocol == "fhb" else 600)


def test_c07_full_pd_feasibility(full_pd, criterion):
    with criterion(7, "final harvested energy >= 0.2 mJ (1 - 1e-6) per sensor, M = 8") as c:
        rep, elapsed = full_pd
        assert rep.ok, rep.message
        c.note(f"PD full: min harvested {np.min(rep.harvested) * 1e3:.6f} mJ, {elapsed:.0f} s")
        assert np.all(rep.harvested >= REQ * (1 - 1e-6))


def test_c08_trends(runs, criterion):
    with criterion(8, "PD < FHB at M = 8; E(16) < E(8) < E(0); converged within 60 iterations") as c:
        t0 = time.perf_counter()
        E = {(p, m): runs.run(p, m).energy for p in ("fhb", "pd") for m in (0, 8, 16)}
        c.note(", ".join(f"{p.upper()} M={m}: {E[(p, m)]:.1f} J" for p, m in E))
        assert E[("pd", 8)] < E[("fhb", 8)]
        for p in ("fhb", "pd"):
            assert E[(p, 16)] < E[(p, 8)] < E[(p, 0)], p
        for (p, m) in E:
            rep = runs.run(p, m)
            assert rep.ok and rep.feasible, (p, m)
            assert len(rep.rows) <= 60 and rep.converged(window=5, rtol=1e-3), (p, m)
        assert time.perf_counter() - t0 < 1800


@pytest.mark.parametrize("protocol", ["fhb", "pd"])
def test_c09_two_bit_baseline(runs, protocol, criterion):
    with criterion(9, "2-bit quantized run feasible and costs at least the continuous run") as c:
        qr = runs.quantized(protocol, 2)
        c.note(f"{protocol.upper()} ratio {qr.ratio:.6f}")
        print(f"{protocol.upper()} 2-bit / continuous energy ratio: {qr.ratio:.8f}")
        assert qr.quantized.ok and qr.quantized.feasible
        assert qr.baseline.ok and qr.baseline.feasible
        assert qr.quantized.energy >= qr.baseline.energy


def _lp():
    return cone.ConeProgram.create(2, [1.0, 0.0], [({0: 1.0, 1: -1.0}, 3.0)], nonneg_vars=[1])


def _soc():
    return cone.ConeProgram.create(3, [1.0, 0.0, 0.0], [({1: 1.0}, 1.0), ({2: 1.0}, 1.0)], soc_blocks=[(0, 1, 2)])


def _rsoc():
    return cone.ConeProgram.create(3, [1.0, 0.0, 0.0], [({2: 1.0}, 2.0), ({1: 1.0}, 1.0)], rsoc_blocks=[(0, 1, 2)])


def test_c10_cone_contract(cone_audit, criterion):
    """Runs last: by now every solve in the session has passed through the audit."""
    with criterion(10, "every Optimal passes substitution at 10 tol; trivial cone problems to 1e-8") as c:
        for make, value in ((_lp, 3.0), (_soc, math.sqrt(2.0)), (_rsoc, 2.0)):
            sol = cone.solve(make(), tol=1e-8)
            assert sol.status is cone.Status.OPTIMAL
            assert sol.objective_value == pytest.approx(value, abs=1e-8)
        c.note(f"{cone_audit['optimal']} Optimal solves audited, worst residual/tol {cone_audit['max_ratio']:.2f}")
        assert not cone_audit["failures"]
        assert cone_audit["optimal"] > 3
