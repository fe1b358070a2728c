import re

import numpy as np
import pytest
import scipy.sparse as sp
from dataclasses import replace

from riswpt import cone
from riswpt.orchestrate import init_fhb, init_pd, run_fhb, SolverOptions
from riswpt.power import (PhasePlan, Trajectory, fhb_total_energy, mr_power, mr_speed, pd_total_energy,
                          power_terms_arrays)
from riswpt.sca import (DELTA_BAR_FLOOR, FhbIterate, PdIterate, build_fhb_subproblem, build_pd_subproblem,
                        energy_coefficients, extract, pd_slack_reference, pd_surrogate_energy, pull_in_segments,
                        reference_scale, taylor_beta_d, taylor_beta_t)
from riswpt.scenario import default_scenario, reduced_profile


@pytest.fixture(scope="module")
def fhb_sub(default_cfg):
    traj, plan = init_fhb(default_cfg)
    traj, _ = reference_scale(traj, plan, default_cfg)
    return traj, plan, build_fhb_subproblem(FhbIterate(traj, plan), default_cfg)


@pytest.fixture(scope="module")
def pd_sub(reduced_cfg):
    traj, plan = init_pd(reduced_cfg)
    traj, _ = reference_scale(traj, plan, reduced_cfg)
    return traj, plan, build_pd_subproblem(PdIterate(traj, plan), reduced_cfg)


def test_fhb_reference_feasible(fhb_sub):
    _, _, sub = fhb_sub
    pres, viol = sub.reference_residuals()
    assert pres <= 1e-9 and viol <= 1e-9
    assert cone.validate(sub.program) == []


def test_pd_reference_feasible(pd_sub):
    _, _, sub = pd_sub
    pres, viol = sub.reference_residuals()
    assert pres <= 1e-9 and viol <= 1e-9


def test_fhb_reference_objective_is_exact_energy(fhb_sub, default_cfg):
    traj, _, sub = fhb_sub
    assert sub.reference_objective() == pytest.approx(fhb_total_energy(traj, default_cfg), rel=1e-9)


def test_pd_reference_objective_is_exact_energy(pd_sub, reduced_cfg):
    traj, _, sub = pd_sub
    assert traj.segment_lengths.min() >= DELTA_BAR_FLOOR
    assert sub.reference_objective() == pytest.approx(pd_total_energy(traj, reduced_cfg), rel=1e-9)


def test_pd_surrogate_tight_at_equality(reduced_cfg):
    rng = np.random.default_rng(0)
    rotor = reduced_cfg.rotor
    d = rng.uniform(0.05, 2.0, 50)
    t = d / rng.uniform(1.0, 30.0, 50)
    tr = Trajectory("PD", np.concatenate([[0], np.cumsum(d)]).astype(complex), t)
    cfg = reduced_cfg.with_updates(start=0j, finish=complex(d.sum()))
    assert pd_surrogate_energy(d, t, rotor, cfg.radiated_power) == pytest.approx(pd_total_energy(tr, cfg), rel=1e-9)


def test_pd_slacks_hold_equalities(reduced_cfg):
    rotor = reduced_cfg.rotor
    d, t = np.array([0.3, 1.5, 0.0]), np.array([0.05, 0.1, 2.0])
    x, dbar, z = pd_slack_reference(d, t, rotor)
    v0 = rotor.mean_induced_velocity
    # x^4 + (d / v0)^2 x^2 = t^4
    assert t**4 / x**2 == pytest.approx(x**2 + d**2 / v0**2, rel=1e-12)
    assert dbar == pytest.approx(np.maximum(d, DELTA_BAR_FLOOR))
    assert z == pytest.approx(dbar**2 / t)


def test_surrogate_descent_fhb(fhb_sub, default_cfg):
    traj, _, sub = fhb_sub
    sol = cone.solve(sub.program)
    assert sol.ok
    assert sub.objective_joules(sol.x) <= sub.reference_objective() * (1 + 1e-9)
    nxt = extract(sol, sub, default_cfg)
    assert nxt.waypoints[0] == default_cfg.start and nxt.waypoints[-1] == default_cfg.finish


def test_pd_solution_respects_limits(pd_sub, reduced_cfg):
    traj, _, sub = pd_sub
    sol = cone.solve(sub.program)
    assert sol.ok
    assert sub.objective_joules(sol.x) <= sub.reference_objective() * (1 + 1e-7)
    nxt = extract(sol, sub, reduced_cfg)
    assert nxt.segment_lengths.max() <= reduced_cfg.max_segment_length + 1e-6
    assert nxt.speeds.max() <= reduced_cfg.uav_max_speed * (1 + 1e-9)


def test_taylor_bounds_are_lower_bounds(default_cfg):
    rng = np.random.default_rng(1)
    qn = 3.0 - 4.0j
    r = 50 * np.sqrt(rng.uniform(size=1000))
    q = qn + r * np.exp(2j * np.pi * rng.uniform(size=1000))
    a = power_terms_arrays(q, default_cfg)
    assert np.all(taylor_beta_t(q, qn, default_cfg) <= a["beta_t"] * (1 + 1e-12))
    for k, s in enumerate(default_cfg.sensors):
        assert np.all(taylor_beta_d(q, qn, s, default_cfg) <= a["beta_d"][:, k] * (1 + 1e-12))
    # tight at the expansion point
    a0 = power_terms_arrays(qn, default_cfg)
    assert taylor_beta_t(qn, qn, default_cfg) == pytest.approx(a0["beta_t"], rel=1e-14)


def test_energy_coefficients_sum_to_rate(default_cfg):
    traj, plan = init_fhb(default_cfg)
    rng = np.random.default_rng(2)
    phis = np.exp(1j * rng.uniform(0, 2 * np.pi, (5, 8)))
    coef = energy_coefficients(traj.radiating_positions, phis, default_cfg)
    from riswpt.power import received_power_matrix
    P = received_power_matrix(traj.radiating_positions, phis, default_cfg)
    assert coef.rate == pytest.approx(0.6 * P / 2e-4, rel=1e-12)


def _nested_program():
    """a^2 <= 2 b s and s^2 <= 2 r half with half = 1/2, r = rhs / 4."""
    B = cone.ProgramBuilder()
    a, b = B.var("a"), B.var("b")
    s = B.var("s", nonneg=True)
    r, half = B.var("r"), B.var("half")
    B.rsoc(b, s, [a])
    B.rsoc(r, half, [s])
    return B.build()


def test_nested_cone_lowering_equivalence():
    """p^4/q^2 <= c iff the two-cone lifting has a completion s."""
    prog = _nested_program()
    p, q, c = (g.ravel() for g in np.meshgrid(np.geomspace(0.1, 3.0, 9), np.geomspace(0.1, 3.0, 9),
                                              np.geomspace(0.01, 100.0, 9), indexing="ij"))
    exact = p**4 / q**2 <= c
    keep = np.abs(p**4 / q**2 - c) >= 0.05 * c  # leave out the band where the grid resolution decides
    grid = np.concatenate([[0.0], np.geomspace(1e-4, 1e4, 4001)])
    S = grid[None, :]
    first = p[:, None] ** 2 <= 2 * q[:, None] * S
    second = S**2 <= c[:, None] / 4
    has_completion = np.any(first & second, axis=1)
    assert np.array_equal(has_completion[keep], exact[keep])
    assert keep.sum() > 500
    # the cone module agrees at the smallest admissible s
    for i in np.flatnonzero(keep & exact):
        s = grid[np.argmax(first[i] & second[i])]
        assert cone.residuals(prog, [p[i], q[i], s, c[i] / 4, 0.5])[1] == 0.0


def test_zero_requirement_limit():
    cfg = default_scenario(sensor_energy_req=(1e-10,) * 5)
    rep = run_fhb(cfg, SolverOptions(n_max=30))
    straight = mr_power(cfg.rotor) * 70.0 / mr_speed(cfg.rotor)
    assert rep.status == "ok"
    assert rep.energy == pytest.approx(straight, rel=1e-3)
    assert rep.trajectory.durations.max() < 1e-3
    assert np.abs(rep.trajectory.waypoints.imag).max() < 0.5


def test_excess_over_straight_line_is_linear_in_requirement():
    straight = mr_power(default_scenario().rotor) * 70.0 / mr_speed(default_scenario().rotor)
    excess = []
    for e in (1e-9, 1e-8):
        rep = run_fhb(default_scenario(sensor_energy_req=(e,) * 5), SolverOptions(n_max=30))
        excess.append(rep.energy - straight)
    assert excess[1] / excess[0] == pytest.approx(10.0, rel=0.05)


def test_overprovisioned_hover_shrinks():
    cfg = default_scenario(sensors=(0j,), sensor_energy_req=(2e-4,), ris_elements=4)
    traj = Trajectory("FHB", np.array([-35, 0, 35], dtype=complex), [5000.0])
    plan = PhasePlan.zeros(1, 4)
    sub = build_fhb_subproblem(FhbIterate(traj, plan), cfg)
    sol = cone.solve(sub.program)
    assert sol.ok
    assert extract(sol, sub, cfg).durations[0] < 5000.0


def test_pinned_program_extracts_reference(fhb_sub, default_cfg):
    traj, _, sub = fhb_sub
    prog = sub.program
    pin = np.concatenate([sub.vmap["X"], sub.vmap["Y"], sub.vmap["t"]])
    rows = sp.csr_matrix((np.ones(pin.size), (np.arange(pin.size), pin)), shape=(pin.size, prog.num_vars))
    pinned = replace(prog, eq_matrix=sp.vstack([prog.eq_matrix, rows]).tocsr(),
                     eq_rhs=np.concatenate([prog.eq_rhs, sub.reference[pin]]))
    sol = cone.solve(pinned)
    assert sol.ok
    back = extract(sol, sub, default_cfg)
    assert back.waypoints == pytest.approx(traj.waypoints, abs=1e-6)
    assert back.durations == pytest.approx(traj.durations, rel=1e-6)


_KNOWN = {"qx", "qy", "dx", "dy", "delta", "t", "half_rho", "rho", "yt", "yd", "ya", "sh", "e", "slack",
          "cap_t", "cap_d", "esum", "half_pd", "tfloor", "dmax", "vmax", "gh", "x", "sig", "r4", "dbar", "dbar_ge",
          "dbar_floor", "pi", "z", "rz4", "wh"}


@pytest.mark.parametrize("which", ["fhb", "pd"])
def test_every_variable_is_named(which, fhb_sub, pd_sub):
    sub = (fhb_sub if which == "fhb" else pd_sub)[2]
    stems = {re.sub(r"\[.*$", "", n) for n in sub.program.var_names}
    assert stems <= _KNOWN


def test_builders_reject_wrong_protocol(fhb_sub, pd_sub, default_cfg):
    with pytest.raises(ValueError):
        build_pd_subproblem(PdIterate(fhb_sub[0], fhb_sub[1]), default_cfg)
    with pytest.raises(ValueError):
        build_fhb_subproblem(FhbIterate(pd_sub[0], pd_sub[1]), default_cfg)


def test_degenerate_iterate_rejected(default_cfg):
    traj = Trajectory("FHB", init_fhb(default_cfg)[0].waypoints, np.zeros(5))
    with pytest.raises(ValueError, match="degenerate"):
        reference_scale(traj, PhasePlan.zeros(5, 8), default_cfg)


def test_extract_refuses_failed_solution(fhb_sub, default_cfg):
    _, _, sub = fhb_sub
    bad = cone.ConeSolution(cone.Status.MAX_ITER, np.zeros(sub.program.num_vars), np.nan, 1.0, 1.0)
    with pytest.raises(RuntimeError):
        extract(bad, sub, default_cfg)


def test_pull_in_segments_restores_cap():
    # five segments at the cap plus round-off, one slack segment in the middle
    d = np.array([0.5 + 2e-9, 0.5 + 1e-9, 0.5, 0.3, 0.5, 0.5 + 2e-9])
    q = np.concatenate([[0], np.cumsum(d)]).astype(complex)
    out = pull_in_segments(q, 0.5)
    assert out[0] == q[0] and out[-1] == q[-1]
    assert np.abs(np.diff(out)).max() <= 0.5
    assert np.abs(out - q).max() < 1e-8


def test_pull_in_segments_noop_and_impossible():
    q = np.array([0, 0.2, 0.4j], dtype=complex)
    assert np.array_equal(pull_in_segments(q, 0.5), q)
    with pytest.raises(ValueError):
        pull_in_segments(np.array([0, 1.0], dtype=complex), 0.5)
