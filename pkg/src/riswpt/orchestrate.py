"""Outer alternating loops, baselines and post-run feasibility repair.

Each outer iteration solves the convex trajectory/time subproblem with the
phases frozen, then re-optimizes the phases with the trajectory frozen. The
smoothing parameter of the phase stage grows geometrically up to a cap.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import cone
from .phase_opt import MmOptions, assemble_quadratics, h_values, optimize_phases
from .power import (PhasePlan, Trajectory, harvested_energy, mr_speed, total_energy)
from .scenario import ScenarioConfig, visit_order
from .sca import (FhbIterate, PdIterate, build_fhb_subproblem, build_pd_subproblem, extract,
                  reference_scale, T_FLOOR)

__all__ = [
    "SolverOptions",
    "RunReport",
    "init_fhb",
    "init_pd",
    "run_fhb",
    "run_pd",
    "run_protocol",
    "run_noris",
    "quantize_plan",
    "run_quantized",
    "feasibility_repair",
    "QuantizedResult",
]


@dataclass(frozen=True)
class SolverOptions:
    n_max: int = 60
    mm_eps: float = 1e-6
    mm_rmax: int = 10
    mu0: float = 100.0
    mu_max: float = 1000.0
    mu_growth: float = 1.07
    cone_tol: float = 1e-8
    cone_tol_max: float = 1e-6  # a NumericalError is retried at 10x looser tolerance up to this
    cone_max_iter: int = 200
    t_floor: float = T_FLOOR
    outer_rel_stop: float = 1e-4
    stop_window: int = 5
    mu_schedule: str = "capped"  # "jump" moves straight to max(mu^growth, mu_max)
    curvature: str = "safe"
    pd_init_divisor: float = 1.8

    def validate(self) -> "SolverOptions":
        for name in ("mm_eps", "mu0", "mu_max", "mu_growth", "cone_tol", "t_floor", "outer_rel_stop"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.n_max < 1 or self.mm_rmax < 1 or self.stop_window < 1:
            raise ValueError("iteration limits must be >= 1")
        if self.cone_tol_max < self.cone_tol:
            raise ValueError("cone_tol_max must be >= cone_tol")
        if self.mu0 > self.mu_max:
            raise ValueError("mu0 must not exceed mu_max")
        if self.mu_schedule not in ("capped", "jump"):
            raise ValueError("mu_schedule must be 'capped' or 'jump'")
        return self

    def next_mu(self, mu: float) -> float:
        grown = mu**self.mu_growth
        if self.mu_schedule == "jump":
            return max(grown, self.mu_max)
        return min(grown, self.mu_max)

    def mm_options(self) -> MmOptions:
        return MmOptions(eps=self.mm_eps, r_max=self.mm_rmax, curvature=self.curvature)


@dataclass
class RunReport:
    protocol: str
    ris_elements: int
    rows: list = field(default_factory=list)
    trajectory: Trajectory | None = None
    plan: PhasePlan | None = None
    harvested: np.ndarray | None = None
    energy_req: np.ndarray | None = None
    energy: float = float("nan")
    repair_factor: float = 1.0
    wall_clock: float = 0.0
    status: str = "ok"
    message: str = ""
    best_iter: int = 0  # outer iteration whose iterate was kept (0 = starting point)

    COLUMNS = ("iter", "E_U_J", "E_U_raw_J", "min_hk", "mu", "status", "cone_tol", "mm_iters", "ref_residual",
               "ref_cone_violation", "ref_objective_J", "solved_objective_J", "solution_residual",
               "solution_cone_violation", "prestretch", "solve_time_s")

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    @property
    def energy_trace(self) -> np.ndarray:
        return np.array([r["E_U_J"] for r in self.rows])

    @property
    def feasible(self) -> bool:
        if self.harvested is None:
            return False
        return bool(np.all(self.harvested >= self.energy_req * (1 - 1e-6)))

    def max_reference_residual(self) -> float:
        if not self.rows:
            return float("nan")
        return max(max(r["ref_residual"], r["ref_cone_violation"]) for r in self.rows)

    def descent_violations(self, rtol: float = 1e-7) -> int:
        """Iterations where the solved objective exceeded the reference objective."""
        bad = 0
        for r in self.rows:
            if r["solved_objective_J"] > r["ref_objective_J"] * (1 + rtol) + 1e-9:
                bad += 1
        return bad

    def converged(self, window: int = 5, rtol: float = 1e-3) -> bool:
        e = self.energy_trace
        if e.size < window + 1:
            return False
        tail = e[-(window + 1):]
        return bool(np.all(np.abs(np.diff(tail)) / tail[:-1] < rtol))


# ---------------------------------------------------------------------------
# initialization


def _tour(cfg: ScenarioConfig) -> np.ndarray:
    order = visit_order(cfg)
    return np.array([cfg.start] + [cfg.sensors[i] for i in order] + [cfg.finish], dtype=complex)


def init_fhb(cfg: ScenarioConfig) -> tuple[Trajectory, PhasePlan]:
    """Hover above every sensor in sweep order, equal hover times, zero phases."""
    wp = _tour(cfg)
    n_hover = wp.size - 2
    ch = cfg.channel
    beta_near = ch.beta0_ref_gain / cfg.uav_height**ch.pathloss_direct
    total = cfg.energy_req_array.max() * cfg.num_sensors / (cfg.conversion_efficiency * cfg.radiated_power * beta_near)
    t = np.full(n_hover, total / n_hover)
    return Trajectory("FHB", wp, t), PhasePlan.zeros(n_hover, cfg.ris_elements)


def init_pd(cfg: ScenarioConfig, divisor: float = 1.8) -> tuple[Trajectory, PhasePlan]:
    """Subdivide the hover tour into equal portions no longer than max_segment_length/divisor at MR speed."""
    tour = _tour(cfg)
    cap = cfg.max_segment_length / divisor
    pts = [tour[0]]
    for a, b in zip(tour[:-1], tour[1:]):
        n = max(1, math.ceil(abs(b - a) / cap - 1e-9))
        pts.extend(a + (b - a) * np.arange(1, n + 1) / n)
    wp = np.array(pts, dtype=complex)
    t = np.abs(np.diff(wp)) / mr_speed(cfg.rotor)
    return Trajectory("PD", wp, t), PhasePlan.zeros(wp.size - 1, cfg.ris_elements)


# ---------------------------------------------------------------------------
# repair


def feasibility_repair(traj: Trajectory, plan: PhasePlan | None, cfg: ScenarioConfig) -> tuple[Trajectory, float]:
    """Scale radiating durations by the smallest common factor that meets every requirement.

    Harvested energy is linear in the durations at fixed waypoints, so
    rho = max_k E_k / harvested_k. FHB scales hover times; PD scales all
    segment times (speeds only drop, so the speed limit stays satisfied).
    """
    got = harvested_energy(traj, plan, cfg)
    need = cfg.energy_req_array
    if np.any(got <= 0):
        raise RuntimeError("repair impossible: a sensor harvests no energy")
    rho = float(np.max(need / got))
    if rho <= 1.0:
        return traj, 1.0
    t = traj.durations * rho
    new = traj.with_durations(t)
    if np.any(harvested_energy(new, plan, cfg) < need):
        new = traj.with_durations(t * (1 + 1e-12))
    if traj.protocol == "PD" and np.any(new.speeds > cfg.uav_max_speed * (1 + 1e-9)):
        raise RuntimeError("repair violates the speed limit")
    return new, rho


# ---------------------------------------------------------------------------
# main loop


def _min_h(traj, plan, cfg) -> float:
    return float(np.min(harvested_energy(traj, plan, cfg) / cfg.energy_req_array))


def _feasible_energy(traj, plan, cfg, min_h=None) -> float:
    """Energy after stretching radiating durations until every requirement holds."""
    min_h = _min_h(traj, plan, cfg) if min_h is None else min_h
    if min_h >= 1:
        return total_energy(traj, cfg)
    return total_energy(traj.with_durations(traj.durations / min_h), cfg)


def _solve_escalating(program, opts: SolverOptions):
    """Solve at cone_tol; on NumericalError retry at 10x looser tolerances up to cone_tol_max.

    Near-hover PD segments put cones close to their apex, where interior-point
    accuracy can stall slightly above 1e-8.
    """
    tol = opts.cone_tol
    while True:
        sol = cone.solve(program, tol=tol, max_iter=opts.cone_max_iter)
        if sol.status is not cone.Status.NUMERICAL_ERROR or tol * 10 > opts.cone_tol_max * (1 + 1e-12):
            return sol, tol
        tol *= 10


def _loop(cfg: ScenarioConfig, opts: SolverOptions, traj: Trajectory, plan: PhasePlan | None,
          optimize_phase: bool, report: RunReport) -> tuple[Trajectory, PhasePlan | None]:
    builder = build_fhb_subproblem if traj.protocol == "FHB" else build_pd_subproblem
    Iter = FhbIterate if traj.protocol == "FHB" else PdIterate
    has_ris = cfg.ris_elements > 0
    mu = opts.mu0
    streak = 0
    prev = None
    # keep the cheapest iterate once scaled to exact feasibility; the frozen
    # steering vectors in the surrogate mean the last one is not always best
    best = (_feasible_energy(traj, plan, cfg), traj, plan)
    report.best_iter = 0
    for n in range(1, opts.n_max + 1):
        t0 = time.perf_counter()
        traj, stretch = reference_scale(traj, plan, cfg)
        if traj.protocol == "PD":
            sub = builder(Iter(traj, plan), cfg, t_floor=opts.t_floor)
        else:
            sub = builder(Iter(traj, plan), cfg)
        ref_res, ref_viol = sub.reference_residuals()
        ref_obj = sub.reference_objective()
        sol, tol = _solve_escalating(sub.program, opts)
        row = {"iter": n, "mu": mu, "status": sol.status.value, "cone_tol": tol, "ref_residual": ref_res,
               "ref_cone_violation": ref_viol, "ref_objective_J": ref_obj, "prestretch": stretch,
               "solution_residual": sol.primal_residual, "solution_cone_violation": sol.cone_violation}
        if not sol.ok:
            row.update({"E_U_J": float("nan"), "E_U_raw_J": float("nan"), "min_hk": float("nan"),
                        "mm_iters": 0, "solved_objective_J": float("nan"),
                        "solve_time_s": time.perf_counter() - t0})
            report.rows.append(row)
            report.status = "failed"
            report.message = f"cone solver returned {sol.status.value} at outer iteration {n}"
            break
        row["solved_objective_J"] = sub.objective_joules(sol.x)
        traj = extract(sol, sub, cfg, t_floor=opts.t_floor)
        mm_iters = 0
        if optimize_phase and has_ris:
            plan, mm = optimize_phases(assemble_quadratics(traj, cfg), None, plan, mu, opts.mm_options())
            mm_iters = mm.iterations
        raw = total_energy(traj, cfg)
        min_h = _min_h(traj, plan, cfg)
        feas = _feasible_energy(traj, plan, cfg, min_h)
        if feas < best[0]:
            best = (feas, traj, plan)
            report.best_iter = n
        row.update({"E_U_J": feas, "E_U_raw_J": raw, "min_hk": min_h, "mm_iters": mm_iters,
                    "solve_time_s": time.perf_counter() - t0})
        report.rows.append(row)
        mu = opts.next_mu(mu)
        if prev is not None and abs(feas - prev) / prev < opts.outer_rel_stop:
            streak += 1
        else:
            streak = 0
        prev = feas
        if streak >= opts.stop_window or n - report.best_iter >= 2 * opts.stop_window:
            break
    return best[1], best[2]


def _finalize(report: RunReport, traj, plan, cfg: ScenarioConfig, t_start: float) -> RunReport:
    traj, rho = feasibility_repair(traj, plan, cfg)
    report.trajectory = traj
    report.plan = plan
    report.repair_factor = rho
    report.harvested = harvested_energy(traj, plan, cfg)
    report.energy_req = cfg.energy_req_array
    report.energy = total_energy(traj, cfg)
    report.wall_clock = time.perf_counter() - t_start
    if report.ok and not report.feasible:
        report.status = "infeasible"
        report.message = "final harvested energy below requirement after repair"
    return report


def run_protocol(cfg: ScenarioConfig, opts: SolverOptions | None = None, protocol: str = "fhb",
                 init: tuple | None = None, optimize_phase: bool = True) -> RunReport:
    opts = (opts or SolverOptions()).validate()
    cfg = cfg.validate()
    protocol = protocol.upper()
    t_start = time.perf_counter()
    if init is None:
        init = init_fhb(cfg) if protocol == "FHB" else init_pd(cfg, opts.pd_init_divisor)
    traj, plan = init
    if cfg.ris_elements == 0:
        plan = PhasePlan.zeros(traj.radiating_positions.size, 0)
    report = RunReport(protocol, cfg.ris_elements)
    traj, plan = _loop(cfg, opts, traj, plan, optimize_phase, report)
    return _finalize(report, traj, plan, cfg, t_start)


def run_fhb(cfg: ScenarioConfig, opts: SolverOptions | None = None) -> RunReport:
    """Alternating trajectory/hover-time and phase optimization, fly-hover-broadcast."""
    return run_protocol(cfg, opts, "fhb")


def run_pd(cfg: ScenarioConfig, opts: SolverOptions | None = None) -> RunReport:
    """Alternating trajectory/flight-time and phase optimization, path discretization."""
    return run_protocol(cfg, opts, "pd")


def run_noris(cfg: ScenarioConfig, opts: SolverOptions | None = None, protocol: str = "fhb") -> RunReport:
    """Same loop without a reflecting surface (direct link only)."""
    return run_protocol(replace(cfg, ris_elements=0), opts, protocol)


# ---------------------------------------------------------------------------
# quantization baseline


def quantize_plan(plan: PhasePlan, bits: int) -> PhasePlan:
    """Round each angle to the nearest of 2^bits uniform levels on [0, 2pi); ties go to the lower level."""
    if bits < 1:
        raise ValueError("bits must be >= 1")
    levels = 2**bits
    step = 2 * np.pi / levels
    x = np.mod(plan.theta, 2 * np.pi) / step
    k = np.mod(np.ceil(x - 0.5), levels)
    return PhasePlan(k * step)


@dataclass
class QuantizedResult:
    continuous: RunReport
    baseline: RunReport
    quantized: RunReport
    bits: int

    @property
    def ratio(self) -> float:
        """Quantized energy over the continuous baseline energy."""
        return self.quantized.energy / self.baseline.energy


def run_quantized(cfg: ScenarioConfig, opts: SolverOptions | None = None, bits: int = 2,
                  protocol: str = "fhb", continuous: RunReport | None = None) -> QuantizedResult:
    """Quantize a converged plan, then re-optimize trajectory and times with phases frozen.

    The continuous plan is re-polished by the same frozen-phase loop so that
    both energies come from identical procedures.
    """
    opts = (opts or SolverOptions()).validate()
    if continuous is None:
        continuous = run_protocol(cfg, opts, protocol)
    if not continuous.ok:
        raise RuntimeError("continuous run failed: " + continuous.message)
    traj = continuous.trajectory
    qplan = quantize_plan(continuous.plan, bits)
    base = run_protocol(cfg, opts, protocol, init=(traj, continuous.plan), optimize_phase=False)
    quant = run_protocol(cfg, opts, protocol, init=(traj, qplan), optimize_phase=False)
    return QuantizedResult(continuous, base, quant, bits)
