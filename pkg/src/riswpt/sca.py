"""Convex subproblems of the trajectory/time update.

Given the current iterate (waypoints, durations, reflection phases), each
builder returns a second-order cone program whose optimum is the next
iterate. The programs are conservative inner approximations around the
current point: the current point itself (with every slack at equality) is
feasible, so the solved objective never exceeds the reference objective.

Shared energy block, per radiating position l and sensor k::

    t_l * S_kl >= e_kl^2                       (rotated cone)
    S_kl = c1 yt_l + c2 sqrt(yt_l yd_kl) + c3 yd_kl
    yt_l <= linearized beta_t(q_l) / beta_t(q_l^n)
    yd_kl <= linearized beta_d(q_l) / beta_d(q_l^n)
    sum_l (2 e^n_kl e_kl - (e^n_kl)^2) >= 1

``yt`` and ``yd`` are the large-scale gains normalized by their values at the
expansion point, so they equal 1 at the reference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cone import ConeProgram, ConeSolution, ProgramBuilder, residuals
from .power import (PhasePlan, Trajectory, hover_power, mr_power, mr_speed, power_terms_arrays)
from .scenario import ScenarioConfig

__all__ = [
    "EnergyCoefficients",
    "energy_coefficients",
    "FhbIterate",
    "PdIterate",
    "Subproblem",
    "build_fhb_subproblem",
    "build_pd_subproblem",
    "extract",
    "taylor_beta_t",
    "taylor_beta_d",
    "pd_slack_reference",
    "pd_surrogate_energy",
    "reference_scale",
    "pull_in_segments",
    "T_FLOOR",
    "DELTA_BAR_FLOOR",
]

T_FLOOR = 1e-6
DELTA_BAR_FLOOR = 1e-2  # metres; keeps the parasite cones away from their apex


# ---------------------------------------------------------------------------
# coefficients


@dataclass(frozen=True)
class EnergyCoefficients:
    """Per (radiating position l, sensor k) quantities at the expansion point.

    ``U1``, ``U2``, ``U3`` split the expected power as
    P_t((U1 + U3) beta_t + U2 sqrt(beta_d beta_t) + beta_d).
    ``c1``, ``c2``, ``c3`` are the matching weights of the normalized gains,
    pre-multiplied by eta / E_k, so that c1 + c2 + c3 = eta P_hat / E_k.
    """

    U1: np.ndarray
    U2: np.ndarray
    U3: np.ndarray
    c1: np.ndarray
    c2: np.ndarray
    c3: np.ndarray
    beta_t: np.ndarray
    beta_d: np.ndarray

    @property
    def rate(self) -> np.ndarray:
        """eta P_hat_{k,l} / E_k, shape (L, K)."""
        return self.c1 + self.c2 + self.c3


def energy_coefficients(positions, phis, cfg: ScenarioConfig) -> EnergyCoefficients:
    positions = np.asarray(positions, dtype=complex)
    a = power_terms_arrays(positions, cfg)
    Pt = cfg.radiated_power
    scale = cfg.conversion_efficiency / cfg.energy_req_array[None, :]
    bt = a["beta_t"][:, None]
    bd = a["beta_d"]
    if cfg.ris_elements > 0:
        s = np.einsum("lkm,lm->lk", a["psi"].conj(), np.asarray(phis, dtype=complex))
        ris_quad = a["quad"] * np.abs(s) ** 2 + (a["const"] - Pt * bd)
        ris_cross = a["cross"] * s.real
    else:
        ris_quad = np.zeros_like(bd)
        ris_cross = np.zeros_like(bd)
    with np.errstate(divide="ignore", invalid="ignore"):
        U13 = np.where(Pt > 0, ris_quad / (Pt * bt), 0.0)
        U2 = np.where(Pt > 0, ris_cross / (Pt * np.sqrt(bt * bd)), 0.0)
    ch = cfg.channel
    if ch.los_only:
        scat = 0.0
    else:
        scat = (ch.rician_ris_sensor + ch.rician_uav_ris + 1) / ((ch.rician_ris_sensor + 1) * (ch.rician_uav_ris + 1))
    U3 = cfg.ris_elements * scat * a["beta_r"]
    U1 = U13 - U3
    return EnergyCoefficients(
        U1=U1, U2=U2, U3=np.broadcast_to(U3, U1.shape).copy(),
        c1=scale * ris_quad, c2=scale * ris_cross, c3=scale * Pt * bd,
        beta_t=a["beta_t"], beta_d=bd,
    )


def taylor_beta_t(q, q_ref, cfg: ScenarioConfig):
    """First-order lower bound of beta_t(q) in the squared horizontal distance, expanded at q_ref."""
    ch = cfg.channel
    dh2 = (cfg.uav_height - cfg.ris_height) ** 2
    Dn = np.abs(np.asarray(q_ref) - cfg.ris_position) ** 2 + dh2
    b = ch.beta0_ref_gain / Dn ** (ch.pathloss_uav_ris / 2)
    d2 = np.abs(np.asarray(q) - cfg.ris_position) ** 2 + dh2
    return b - ch.pathloss_uav_ris * b * (d2 - Dn) / (2 * Dn)


def taylor_beta_d(q, q_ref, sensor: complex, cfg: ScenarioConfig):
    ch = cfg.channel
    h2 = cfg.uav_height**2
    Dn = np.abs(np.asarray(q_ref) - sensor) ** 2 + h2
    b = ch.beta0_ref_gain / Dn ** (ch.pathloss_direct / 2)
    d2 = np.abs(np.asarray(q) - sensor) ** 2 + h2
    return b - ch.pathloss_direct * b * (d2 - Dn) / (2 * Dn)


# ---------------------------------------------------------------------------
# iterates and the built program


@dataclass(frozen=True)
class FhbIterate:
    traj: Trajectory
    plan: PhasePlan | None

    def coefficients(self, cfg: ScenarioConfig) -> EnergyCoefficients:
        return energy_coefficients(self.traj.radiating_positions, _phis(self.plan, self.traj, cfg), cfg)


@dataclass(frozen=True)
class PdIterate:
    traj: Trajectory
    plan: PhasePlan | None

    def coefficients(self, cfg: ScenarioConfig) -> EnergyCoefficients:
        return energy_coefficients(self.traj.radiating_positions, _phis(self.plan, self.traj, cfg), cfg)


def _phis(plan, traj, cfg):
    n = traj.radiating_positions.size
    if cfg.ris_elements == 0 or plan is None:
        return np.zeros((n, cfg.ris_elements), dtype=complex) if cfg.ris_elements == 0 else np.ones((n, cfg.ris_elements))
    return plan.phi


@dataclass
class Subproblem:
    protocol: str
    program: ConeProgram
    vmap: dict
    reference: np.ndarray
    objective_scale: float
    e_ref: np.ndarray = field(repr=False, default=None)

    def reference_residuals(self) -> tuple[float, float]:
        return residuals(self.program, self.reference)

    def reference_objective(self) -> float:
        """Reference objective in joules."""
        return self.program.objective_value(self.reference) * self.objective_scale

    def objective_joules(self, x) -> float:
        return self.program.objective_value(x) * self.objective_scale


def _energy_block(B: ProgramBuilder, X, Y, rho, t_idx, q_ref, t_ref, coef: EnergyCoefficients,
                  cfg: ScenarioConfig, rho_scale: float = 1.0):
    """Add the energy-requirement constraints; returns the e reference matrix (L, K).

    ``rho[l]`` holds |q_l|^2 / rho_scale. Each e variable is stored divided
    by its scale ``es`` (about its reference value) so the cone members are O(1).
    """
    L = q_ref.size
    K = cfg.num_sensors
    ch = cfg.channel
    contrib = t_ref[:, None] * coef.rate  # (L, K)
    h = contrib.sum(axis=0)
    if np.any(h <= 0):
        raise ValueError("degenerate iterate: some sensor receives no energy at the reference point")
    e_ref = np.sqrt(np.maximum(contrib, 0.0) / h[None, :])
    es = np.maximum(e_ref, 1e-3 * e_ref.max(axis=0, keepdims=True))
    qR = cfg.ris_position
    dh2 = (cfg.uav_height - cfg.ris_height) ** 2
    sensors = cfg.sensor_array
    ris_active = np.any(coef.c1 != 0) or np.any(coef.c2 != 0)
    e_idx = np.zeros((L, K), dtype=int)
    for l in range(L):
        x, y, r = X[l], Y[l], rho[l]
        qn = q_ref[l]
        yt = -1
        if ris_active:
            Dn = abs(qn - qR) ** 2 + dh2
            ct = ch.pathloss_uav_ris / (2 * Dn)
            yt = B.var(f"yt[{l}]", nonneg=True, ref=1.0)
            B.le({yt: 1.0, r: ct * rho_scale, x: -2 * ct * qR.real, y: -2 * ct * qR.imag},
                 1.0 + ct * (abs(qn - qR) ** 2 - abs(qR) ** 2), name=f"cap_t[{l}]")
        for k in range(K):
            qs = sensors[k]
            Dn = abs(qn - qs) ** 2 + cfg.uav_height**2
            cd = ch.pathloss_direct / (2 * Dn)
            yd = B.var(f"yd[{k},{l}]", nonneg=True, ref=1.0)
            B.le({yd: 1.0, r: cd * rho_scale, x: -2 * cd * qs.real, y: -2 * cd * qs.imag},
                 1.0 + cd * (abs(qn - qs) ** 2 - abs(qs) ** 2), name=f"cap_d[{k},{l}]")
            c1, c2, c3 = coef.c1[l, k], coef.c2[l, k], coef.c3[l, k]
            terms = {yd: 0.5 * c3}
            if ris_active:
                terms[yt] = terms.get(yt, 0.0) + 0.5 * c1
                if c2 > 0:
                    ya = B.var(f"ya[{k},{l}]", nonneg=True, ref=math.sqrt(2.0))
                    B.rsoc(yt, yd, [ya])
                    terms[ya] = 0.5 * c2 / math.sqrt(2.0)
                elif c2 < 0:
                    # sqrt(yt yd) <= (yt + yd)/2, tight at the reference
                    terms[yt] += 0.25 * c2
                    terms[yd] += 0.25 * c2
            # (e/es)^2 <= 2 t (sh/es^2)
            w2 = 1.0 / es[l, k] ** 2
            sh = B.affine(f"sh[{k},{l}]", {i: c * w2 for i, c in terms.items()}, nonneg=True)
            e = B.var(f"e[{k},{l}]", ref=e_ref[l, k] / es[l, k])
            B.rsoc(t_idx[l], sh, [e])
            e_idx[l, k] = e
    for k in range(K):
        row = {int(e_idx[l, k]): 2 * e_ref[l, k] * es[l, k] for l in range(L) if e_ref[l, k] > 0}
        if not row:
            raise ValueError("degenerate iterate: all e references vanish")
        B.ge(row, 1.0 + float(np.sum(e_ref[:, k] ** 2)), name=f"esum[{k}]")
    return e_ref, e_idx


def _positions(B: ProgramBuilder, q_ref, free_mask, prefix="q"):
    X = np.zeros(q_ref.size, dtype=int)
    Y = np.zeros(q_ref.size, dtype=int)
    for i, (q, free) in enumerate(zip(q_ref, free_mask)):
        if free:
            X[i] = B.var(f"{prefix}x[{i}]", ref=q.real)
            Y[i] = B.var(f"{prefix}y[{i}]", ref=q.imag)
        else:
            X[i] = B.fixed(f"{prefix}x[{i}]", q.real)
            Y[i] = B.fixed(f"{prefix}y[{i}]", q.imag)
    return X, Y


def _norm_epigraphs(B: ProgramBuilder, X, Y, rad_idx, q_ref):
    """sigma * rho_l >= |q_l|^2 for the radiating waypoints; returns (rho, sigma).

    sigma = max(1, max |q|) keeps rho on the scale of the coordinates rather
    than their squares.
    """
    sigma = max(1.0, float(np.max(np.abs(q_ref))))
    half = B.fixed("half_rho", 0.5 * sigma)
    rho = np.zeros(len(rad_idx), dtype=int)
    for j, i in enumerate(rad_idx):
        rho[j] = B.var(f"rho[{i}]", nonneg=True, ref=abs(q_ref[i]) ** 2 / sigma)
        B.rsoc(rho[j], half, [X[i], Y[i]])
    return rho, sigma


def _segment_lengths(B: ProgramBuilder, X, Y, q_ref, cost=0.0):
    L = q_ref.size - 1
    D = np.zeros(L, dtype=int)
    for l in range(L):
        dx = B.affine(f"dx[{l}]", {X[l + 1]: 1.0, X[l]: -1.0})
        dy = B.affine(f"dy[{l}]", {Y[l + 1]: 1.0, Y[l]: -1.0})
        D[l] = B.var(f"delta[{l}]", cost=cost, nonneg=True, ref=abs(q_ref[l + 1] - q_ref[l]))
        B.soc(D[l], [dx, dy])
    return D


def reference_scale(traj: Trajectory, plan, cfg: ScenarioConfig) -> tuple[Trajectory, float]:
    """Stretch radiating durations so every sensor meets its requirement at the reference.

    The energy block's reference point is feasible only if min_k h_k >= 1.
    Harvested energy is linear in the durations at fixed waypoints, so one
    common factor 1/min_k h_k suffices. Returns the (possibly) rescaled
    trajectory and the factor applied (1.0 when nothing changed).
    """
    coef = energy_coefficients(traj.radiating_positions, _phis(plan, traj, cfg), cfg)
    h = traj.durations @ coef.rate
    hmin = float(np.min(h))
    if hmin <= 0:
        raise ValueError("degenerate iterate: some sensor receives no energy")
    if hmin >= 1.0:
        return traj, 1.0
    factor = 1.0 / hmin
    # guard the last ulp so that min h >= 1 holds after the multiplication
    t_new = traj.durations * factor
    h_new = t_new @ coef.rate
    if h_new.min() < 1.0:
        t_new = t_new * (1.0 + 4 * np.finfo(float).eps)
    return traj.with_durations(t_new), factor


# ---------------------------------------------------------------------------
# FHB


def build_fhb_subproblem(it: FhbIterate, cfg: ScenarioConfig) -> Subproblem:
    """Convex trajectory/hover-time update for fly-hover-broadcast.

    Objective (scaled by 1 / (P_hov + P_t)): flight energy at MR speed over
    path-length epigraphs plus hover-and-radiate energy.
    """
    traj = it.traj
    if traj.protocol != "FHB":
        raise ValueError("FHB builder needs an FHB trajectory")
    q_ref = traj.waypoints
    n_wp = q_ref.size
    rotor = cfg.rotor
    p_hov = hover_power(rotor) + cfg.radiated_power
    scale = p_hov
    fly_cost = mr_power(rotor) / mr_speed(rotor) / scale

    B = ProgramBuilder()
    free = np.ones(n_wp, dtype=bool)
    free[0] = free[-1] = False
    X, Y = _positions(B, q_ref, free)
    D = _segment_lengths(B, X, Y, q_ref, cost=fly_cost)
    rad = np.arange(1, n_wp - 1)
    t_ref = traj.durations
    T = np.array([B.var(f"t[{l}]", cost=p_hov / scale, nonneg=True, ref=t_ref[j]) for j, l in enumerate(rad)],
                 dtype=int)
    rho, sigma = _norm_epigraphs(B, X, Y, rad, q_ref)
    coef = it.coefficients(cfg)
    e_ref, e_idx = _energy_block(B, X[rad], Y[rad], rho, T, q_ref[rad], t_ref, coef, cfg, sigma)
    prog = B.build()
    vmap = {"X": X, "Y": Y, "delta": D, "t": T, "rho": rho, "e": e_idx}
    return Subproblem("FHB", prog, vmap, B.reference, scale, e_ref)


# ---------------------------------------------------------------------------
# PD


def pd_slack_reference(delta, t, rotor, delta_bar_floor: float = DELTA_BAR_FLOOR):
    """Slack values that make every lifted PD constraint hold with equality.

    Returns ``x`` (induced-power slack), ``delta_bar`` and ``z``.
    """
    delta = np.asarray(delta, dtype=float)
    t = np.asarray(t, dtype=float)
    v0 = rotor.mean_induced_velocity
    a = delta**2 / (2 * v0**2)
    # sqrt(t^4 + a^2) - a written without cancellation
    x2 = t**4 / (np.sqrt(t**4 + a**2) + a)
    x = np.sqrt(x2)
    dbar = np.maximum(delta, delta_bar_floor)
    z = dbar**2 / t
    return x, dbar, z


def pd_surrogate_energy(delta, t, rotor, radiated_power, x=None, dbar=None):
    """Lifted PD energy with slacks at equality (equals the exact energy up to the delta-bar floor)."""
    delta = np.asarray(delta, dtype=float)
    t = np.asarray(t, dtype=float)
    if x is None or dbar is None:
        x, dbar, _ = pd_slack_reference(delta, t, rotor)
    return float(np.sum((radiated_power + rotor.p0_hover_blade_power) * t
                        + rotor.p_induced_hover * x
                        + rotor.p0_hover_blade_power * 3 * delta**2 / (rotor.tip_speed**2 * t)
                        + rotor.parasite_coeff * dbar**3 / t**2))


def build_pd_subproblem(it: PdIterate, cfg: ScenarioConfig, t_floor: float = T_FLOOR) -> Subproblem:
    """Convex trajectory/flight-time update for path discretization.

    Energy surrogate per segment (scaled by 1 / (P_hov + P_t))::

        (P_t + P0) t + P_i x + P0 (3/U^2) (delta^2/t) + c_par w

    with t^4/x^2 <= 2x^n x - x^n^2 + (2/v0^2) Re{conj(dq^n) dq} - delta^n^2/v0^2,
    delta <= delta_bar, delta_bar^4/t^2 <= 2 z^n z - z^n^2, z^2/delta_bar <= w.
    """
    traj = it.traj
    if traj.protocol != "PD":
        raise ValueError("PD builder needs a PD trajectory")
    t_ref = np.asarray(traj.durations, dtype=float)
    if np.any(t_ref <= 0):
        raise ValueError("PD iterate needs strictly positive segment times")
    q_ref = traj.waypoints
    n_wp = q_ref.size
    L = n_wp - 1
    rotor = cfg.rotor
    Pt = cfg.radiated_power
    scale = hover_power(rotor) + Pt
    v0sq = rotor.mean_induced_velocity**2
    blade_c = rotor.p0_hover_blade_power * 3 / rotor.tip_speed**2
    dq_ref = np.diff(q_ref)
    d_ref = np.abs(dq_ref)
    x_ref, dbar_ref, z_ref = pd_slack_reference(d_ref, t_ref, rotor)

    B = ProgramBuilder()
    free = np.ones(n_wp, dtype=bool)
    free[0] = free[-1] = False
    X, Y = _positions(B, q_ref, free)
    D = _segment_lengths(B, X, Y, q_ref)
    half = B.fixed("half_pd", 0.5)
    T = np.zeros(L, dtype=int)
    for l in range(L):
        T[l] = B.var(f"t[{l}]", cost=(Pt + rotor.p0_hover_blade_power) / scale, ref=t_ref[l])
        B.ge({T[l]: 1.0}, t_floor, name=f"tfloor[{l}]")
        B.le({D[l]: 1.0}, cfg.max_segment_length, name=f"dmax[{l}]")
        B.le({D[l]: 1.0 / cfg.uav_max_speed, T[l]: -1.0}, 0.0, name=f"vmax[{l}]")
        # blade profile: delta^2 / t <= 2 gh
        gh = B.var(f"gh[{l}]", cost=2 * blade_c / scale, nonneg=True, ref=d_ref[l] ** 2 / (2 * t_ref[l]))
        B.rsoc(T[l], gh, [D[l]])
        # induced power
        xv = B.var(f"x[{l}]", cost=rotor.p_induced_hover / scale, nonneg=True, ref=x_ref[l])
        sig = B.var(f"sig[{l}]", nonneg=True, ref=t_ref[l] ** 2 / (2 * x_ref[l]))
        B.rsoc(xv, sig, [T[l]])
        dqn = dq_ref[l]
        r4_terms = {xv: 2 * x_ref[l] / 4}
        if d_ref[l] > 0:
            # (2/v0^2) Re{conj(dq^n) dq} / 4, linear in the endpoint coordinates
            cx, cy = 2 * dqn.real / v0sq / 4, 2 * dqn.imag / v0sq / 4
            for idx, c in ((X[l + 1], cx), (X[l], -cx), (Y[l + 1], cy), (Y[l], -cy)):
                r4_terms[idx] = r4_terms.get(idx, 0.0) + c
        r4 = B.affine(f"r4[{l}]", r4_terms, const=(-x_ref[l] ** 2 - d_ref[l] ** 2 / v0sq) / 4, nonneg=True)
        B.rsoc(r4, half, [sig])
        # parasite power
        db = B.var(f"dbar[{l}]", nonneg=True, ref=dbar_ref[l])
        B.ge({db: 1.0, D[l]: -1.0}, 0.0, name=f"dbar_ge[{l}]")
        B.ge({db: 1.0}, DELTA_BAR_FLOOR, name=f"dbar_floor[{l}]")
        pi_ = B.var(f"pi[{l}]", nonneg=True, ref=dbar_ref[l] ** 2 / (2 * t_ref[l]))
        B.rsoc(T[l], pi_, [db])
        zv = B.var(f"z[{l}]", nonneg=True, ref=z_ref[l])
        rz4 = B.affine(f"rz4[{l}]", {zv: 2 * z_ref[l] / 4}, const=-z_ref[l] ** 2 / 4, nonneg=True)
        B.rsoc(rz4, half, [pi_])
        wh = B.var(f"wh[{l}]", cost=2 * rotor.parasite_coeff / scale, nonneg=True,
                   ref=z_ref[l] ** 2 / (2 * dbar_ref[l]))
        B.rsoc(db, wh, [zv])

    rad = np.arange(1, n_wp)
    rho, sigma = _norm_epigraphs(B, X, Y, rad, q_ref)
    coef = it.coefficients(cfg)
    e_ref, e_idx = _energy_block(B, X[rad], Y[rad], rho, T, q_ref[rad], t_ref, coef, cfg, sigma)
    prog = B.build()
    vmap = {"X": X, "Y": Y, "delta": D, "t": T, "rho": rho, "e": e_idx}
    return Subproblem("PD", prog, vmap, B.reference, scale, e_ref)


# ---------------------------------------------------------------------------
# extraction


def pull_in_segments(q, cap: float, max_sweeps: int = 10_000) -> np.ndarray:
    """Shorten segments that exceed ``cap`` by round-off, keeping both end points fixed.

    Each segment longer than ``cap`` is cut back to just below it, giving the
    excess to its free end points (half each, or all to the single free one)
    along the segment. A neighbour that grows past the cap is fixed on the
    next sweep, so the excess drains toward segments with slack.
    """
    q = np.array(q, dtype=complex)
    target = cap * (1 - 1e-12)
    n = q.size
    for _ in range(max_sweeps):
        dq = np.diff(q)
        d = np.abs(dq)
        over = np.flatnonzero(d > cap)
        if over.size == 0:
            return q
        for l in over:
            dq = q[l + 1] - q[l]
            dl = abs(dq)
            if dl <= cap:
                continue
            u = dq / dl
            excess = dl - target
            free_a, free_b = l > 0, l + 1 < n - 1
            if free_a and free_b:
                q[l] += u * excess / 2
                q[l + 1] -= u * excess / 2
            elif free_b:
                q[l + 1] -= u * excess
            elif free_a:
                q[l] += u * excess
            else:
                raise ValueError("a single segment between fixed end points is longer than the cap")
    raise RuntimeError("segment cap could not be restored")


def extract(sol: ConeSolution, sub: Subproblem, cfg: ScenarioConfig, t_floor: float = T_FLOOR) -> Trajectory:
    """Read the next trajectory back from a solved subproblem."""
    if not sol.ok:
        raise RuntimeError(f"cannot extract from a {sol.status.value} solution")
    x = sol.x
    q = x[sub.vmap["X"]] + 1j * x[sub.vmap["Y"]]
    q[0], q[-1] = cfg.start, cfg.finish
    t = x[sub.vmap["t"]]
    if sub.protocol == "FHB":
        t = np.maximum(t, 0.0)
        return Trajectory("FHB", q, t)
    t = np.maximum(t, t_floor)
    d = np.abs(np.diff(q))
    limit = np.minimum(cfg.max_segment_length, cfg.uav_max_speed * t)
    tol = 1e-6 * np.maximum(1.0, limit)
    if np.any(d > limit + tol):
        raise RuntimeError("extracted PD segment violates the length/speed limit")
    # absorb solver round-off so the next reference point is exactly feasible
    q = pull_in_segments(q, cfg.max_segment_length)
    d = np.abs(np.diff(q))
    t = np.maximum(t, d / cfg.uav_max_speed)
    return Trajectory("PD", q, t)
