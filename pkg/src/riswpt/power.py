"""Propulsion and received-power models plus energy accounting.

Expected received power at a sensor is a quadratic form in the reflection
vector ``phi``::

    P(phi) = quad * |psi^H phi|^2 + cross * Re{psi^H phi} + constant

Every consumer (energy accounting, phase optimizer, SCA builder) goes through
:func:`power_terms_arrays` so the formula lives in one place.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.optimize import minimize_scalar

from .channel import geometry_arrays, psi_arrays, sample_realizations, ChannelRealization
from .scenario import RotorParams, ScenarioConfig

__all__ = [
    "propulsion_power",
    "propulsion_power_segment",
    "mr_speed",
    "hover_power",
    "mr_power",
    "check_rotor_checksum",
    "ExpectedPowerTerms",
    "expected_power_terms",
    "expected_power",
    "power_terms_arrays",
    "received_power_matrix",
    "instantaneous_power",
    "monte_carlo_power",
    "OracleCase",
    "expectation_oracle_suite",
    "Trajectory",
    "PhasePlan",
    "fhb_total_energy",
    "pd_total_energy",
    "total_energy",
    "harvested_energy",
]

MR_SPEED_REFERENCE = 18.3
MR_SPEED_TOL = 0.2


# ---------------------------------------------------------------------------
# propulsion

def propulsion_power(speed, rotor: RotorParams):
    """Rotary-wing propulsion power at constant level speed (W).

    Accepts scalars or arrays.
    """
    v = np.asarray(speed, dtype=float)
    if np.any(v < 0):
        raise ValueError("speed must be >= 0")
    v2 = v * v
    v0sq = rotor.mean_induced_velocity**2
    blade = rotor.p0_hover_blade_power * (1.0 + 3.0 * v2 / rotor.tip_speed**2)
    induced = rotor.p_induced_hover * np.sqrt(np.sqrt(1.0 + v2 * v2 / (4 * v0sq * v0sq)) - v2 / (2 * v0sq))
    parasite = rotor.parasite_coeff * v2 * v
    out = blade + induced + parasite
    return float(out) if out.ndim == 0 else out


def propulsion_power_segment(delta, t, rotor: RotorParams):
    """Propulsion power on a straight segment of length ``delta`` flown in time ``t``."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ValueError("segment duration must be > 0")
    return propulsion_power(np.asarray(delta, dtype=float) / t, rotor)


def _rotor_key(rotor: RotorParams) -> tuple:
    return tuple(getattr(rotor, f) for f in rotor.__dataclass_fields__)


@lru_cache(maxsize=64)
def _mr_speed_cached(key: tuple) -> float:
    rotor = RotorParams(*key)

    def per_meter(v):
        return propulsion_power(v, rotor) / v

    # coarse grid to bracket, then bounded Brent to ~1e-6
    grid = np.linspace(0.5, 4 * rotor.tip_speed, 4000)
    vals = propulsion_power(grid, rotor) / grid
    i = int(np.argmin(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    res = minimize_scalar(per_meter, bounds=(lo, hi), method="bounded", options={"xatol": 1e-7})
    return float(res.x)


def mr_speed(rotor: RotorParams) -> float:
    """Maximum-range speed: argmin over v > 0 of P_p(v)/v."""
    return _mr_speed_cached(_rotor_key(rotor))


def hover_power(rotor: RotorParams) -> float:
    return rotor.p0_hover_blade_power + rotor.p_induced_hover


def mr_power(rotor: RotorParams) -> float:
    return propulsion_power(mr_speed(rotor), rotor)


def check_rotor_checksum(rotor: RotorParams | None = None) -> float:
    """Fail fast if the rotor constants do not reproduce the reference MR speed."""
    rotor = rotor or RotorParams()
    v = mr_speed(rotor)
    if abs(v - MR_SPEED_REFERENCE) > MR_SPEED_TOL:
        raise RuntimeError(f"rotor constants give v_mr={v:.4f} m/s, expected {MR_SPEED_REFERENCE}±{MR_SPEED_TOL}")
    return v


# ---------------------------------------------------------------------------
# expected received power

@dataclass(frozen=True)
class ExpectedPowerTerms:
    quad_coeff: float
    cross_coeff: float
    constant: float
    psi: np.ndarray = field(repr=False)

    def evaluate(self, phi) -> float:
        s = np.vdot(self.psi, np.asarray(phi, dtype=complex)) if self.psi.size else 0j
        return float(self.quad_coeff * abs(s) ** 2 + self.cross_coeff * s.real + self.constant)


def power_terms_arrays(q, cfg: ScenarioConfig) -> dict[str, np.ndarray]:
    """Coefficients of the expected-power quadratic for a batch of UAV positions.

    Returns arrays ``quad``, ``cross``, ``const`` of shape S + (K,), ``psi`` of
    shape S + (K, M), plus the large-scale gains ``beta_t`` (S), ``beta_r``,
    ``beta_d`` (S + (K,)) for reuse by the SCA builder.
    """
    ch = cfg.channel
    geo = geometry_arrays(q, cfg)
    b0 = ch.beta0_ref_gain
    beta_t = b0 / geo["d_t"] ** ch.pathloss_uav_ris
    beta_r = b0 / geo["d_r"] ** ch.pathloss_ris_sensor
    beta_d = b0 / geo["d_d"] ** ch.pathloss_direct
    kt, kr, kd = ch.rician_uav_ris, ch.rician_ris_sensor, ch.rician_direct
    M = cfg.ris_elements
    Pt = cfg.radiated_power
    bt = beta_t[..., None]
    if ch.los_only:
        wt = wr = wd = 1.0
        scat = 0.0
    else:
        wt, wr, wd = kt / (kt + 1), kr / (kr + 1), kd / (kd + 1)
        scat = (kr + kt + 1) / ((kr + 1) * (kt + 1))
    quad = Pt * wr * wt * beta_r * bt
    cross = 2 * Pt * np.sqrt(wd * wr * wt * beta_d * beta_r * bt)
    const = Pt * (beta_d + M * scat * beta_r * bt)
    if M > 0:
        psi = psi_arrays(q, cfg, geo)
    else:
        psi = np.zeros(beta_d.shape + (0,), dtype=complex)
    return {
        "quad": quad,
        "cross": cross,
        "const": const,
        "psi": psi,
        "beta_t": beta_t,
        "beta_r": beta_r,
        "beta_d": beta_d,
    }


def expected_power_terms(q_uav: complex, sensor_index: int, cfg: ScenarioConfig) -> ExpectedPowerTerms:
    a = power_terms_arrays(complex(q_uav), cfg)
    k = sensor_index
    if cfg.ris_elements == 0:
        return ExpectedPowerTerms(0.0, 0.0, float(a["const"][k]), a["psi"][k])
    return ExpectedPowerTerms(float(a["quad"][k]), float(a["cross"][k]), float(a["const"][k]), a["psi"][k])


def expected_power(q_uav: complex, phi_vector, sensor_index: int, cfg: ScenarioConfig) -> float:
    """Mean received power (W) at one sensor for UAV position ``q_uav``."""
    return expected_power_terms(q_uav, sensor_index, cfg).evaluate(phi_vector)


def received_power_matrix(positions, phis, cfg: ScenarioConfig) -> np.ndarray:
    """Expected received power for each (position l, sensor k); shape (L, K).

    ``phis`` has shape (L, M).
    """
    positions = np.asarray(positions, dtype=complex)
    a = power_terms_arrays(positions, cfg)
    if cfg.ris_elements == 0:
        return a["const"]
    phis = np.asarray(phis, dtype=complex)
    s = np.einsum("lkm,lm->lk", a["psi"].conj(), phis)
    return a["quad"] * np.abs(s) ** 2 + a["cross"] * s.real + a["const"]


# ---------------------------------------------------------------------------
# instantaneous power / Monte-Carlo

def instantaneous_power(realization: ChannelRealization, phi_vector, radiated_power: float = 1.0) -> float:
    """Received power for one channel draw: P_t |g_d + g_r^H diag(phi) g_t|^2."""
    phi = np.asarray(phi_vector, dtype=complex)
    g_t = np.asarray(realization.g_uav_ris, dtype=complex)
    g_r = np.asarray(realization.g_ris_sensor, dtype=complex)
    if not (phi.shape == g_t.shape == g_r.shape):
        raise ValueError("dimension mismatch between phase vector and channel")
    amp = realization.g_direct + np.sum(g_r.conj() * phi * g_t)
    return float(radiated_power * abs(amp) ** 2)


def monte_carlo_power(q_uav: complex, phi_vector, sensor_index: int, cfg: ScenarioConfig,
                      n_samples: int = 1_000_000, rng=None, chunk: int = 200_000) -> tuple[float, float]:
    """Sample mean and standard error of the instantaneous received power.

    Draws are made in fixed-size chunks from a single generator so the result
    only depends on the seed.
    """
    rng = np.random.default_rng(rng)
    phi = np.asarray(phi_vector, dtype=complex)
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < n_samples:
        n = min(chunk, n_samples - done)
        g_d, g_t, g_r = sample_realizations(q_uav, sensor_index, cfg, rng, n)
        amp = g_d + np.einsum("nm,nm->n", g_r.conj(), g_t * phi) if phi.size else g_d
        p = cfg.radiated_power * np.abs(amp) ** 2
        total += p.sum()
        total_sq += (p * p).sum()
        done += n
    mean = total / n_samples
    var = max(total_sq / n_samples - mean * mean, 0.0)
    return float(mean), float(np.sqrt(var / n_samples))


@dataclass(frozen=True)
class OracleCase:
    """One randomized closed-form vs Monte-Carlo comparison."""

    elements: int
    position: complex
    sensor: int
    theta: np.ndarray = field(repr=False)
    analytic: float
    sampled: float
    std_error: float

    @property
    def rel_error(self) -> float:
        return abs(self.sampled - self.analytic) / self.analytic


def expectation_oracle_suite(cfg: ScenarioConfig, n_cases: int = 20, n_samples: int = 1_000_000,
                             seed: int = 42, element_choices=(1, 2, 4, 8)) -> list[OracleCase]:
    """Compare the closed-form mean power with sampled channels on random setups.

    Each case draws M from ``element_choices``, a UAV position uniformly in
    the box spanned by the start/finish points and the sensors, a sensor, and
    uniform phases. One generator seeded by ``seed`` drives every draw.
    """
    rng = np.random.default_rng(seed)
    pts = np.concatenate([cfg.sensor_array, [cfg.start, cfg.finish]])
    lo = complex(pts.real.min(), pts.imag.min())
    hi = complex(pts.real.max(), pts.imag.max())
    out = []
    for _ in range(n_cases):
        M = int(rng.choice(element_choices))
        q = complex(rng.uniform(lo.real, hi.real), rng.uniform(lo.imag, hi.imag))
        k = int(rng.integers(cfg.num_sensors))
        theta = rng.uniform(0.0, 2 * np.pi, M)
        c = replace(cfg, ris_elements=M)
        phi = np.exp(1j * theta)
        exact = expected_power(q, phi, k, c)
        mean, se = monte_carlo_power(q, phi, k, c, n_samples=n_samples, rng=rng)
        out.append(OracleCase(M, q, k, theta, exact, mean, se))
    return out


# ---------------------------------------------------------------------------
# trajectories and energy accounting

FHB = "FHB"
PD = "PD"


@dataclass(frozen=True)
class Trajectory:
    """Waypoints q_0..q_L and durations.

    FHB: ``durations`` holds the L-1 hover times at interior waypoints.
    PD: ``durations`` holds the L flight times of the segments.
    """

    protocol: str
    waypoints: np.ndarray
    durations: np.ndarray

    def __post_init__(self):
        proto = self.protocol.upper()
        if proto not in (FHB, PD):
            raise ValueError(f"unknown protocol {self.protocol!r}")
        wp = np.asarray(self.waypoints, dtype=complex).copy()
        du = np.asarray(self.durations, dtype=float).copy()
        wp.setflags(write=False)
        du.setflags(write=False)
        object.__setattr__(self, "protocol", proto)
        object.__setattr__(self, "waypoints", wp)
        object.__setattr__(self, "durations", du)
        n_expected = wp.size - 2 if proto == FHB else wp.size - 1
        if du.size != n_expected:
            raise ValueError(f"{proto} trajectory with {wp.size} waypoints needs {n_expected} durations, got {du.size}")
        if np.any(du < 0) or not np.all(np.isfinite(du)):
            raise ValueError("durations must be finite and >= 0")

    @property
    def num_segments(self) -> int:
        return self.waypoints.size - 1

    @property
    def segment_lengths(self) -> np.ndarray:
        return np.abs(np.diff(self.waypoints))

    @property
    def radiating_positions(self) -> np.ndarray:
        """Positions at which power is radiated (hovers for FHB, segment endpoints for PD)."""
        return self.waypoints[1:-1] if self.protocol == FHB else self.waypoints[1:]

    @property
    def speeds(self) -> np.ndarray:
        if self.protocol != PD:
            raise ValueError("speeds are only defined for PD trajectories")
        d = self.segment_lengths
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.durations > 0, d / self.durations, np.where(d > 0, np.inf, 0.0))

    def with_durations(self, durations) -> "Trajectory":
        return replace(self, durations=np.asarray(durations, dtype=float))


@dataclass(frozen=True)
class PhasePlan:
    """Per-radiating-block phase angles ``theta`` with shape (n_blocks, M)."""

    theta: np.ndarray

    def __post_init__(self):
        th = np.mod(np.asarray(self.theta, dtype=float), 2 * np.pi)
        if th.ndim != 2:
            raise ValueError("theta must be 2-D (blocks x elements)")
        th = np.where(th >= 2 * np.pi, 0.0, th)
        th.setflags(write=False)
        object.__setattr__(self, "theta", th)

    @classmethod
    def zeros(cls, n_blocks: int, M: int) -> "PhasePlan":
        return cls(np.zeros((n_blocks, M)))

    @classmethod
    def from_phi(cls, phi) -> "PhasePlan":
        return cls(np.angle(np.asarray(phi, dtype=complex)))

    @property
    def phi(self) -> np.ndarray:
        return np.exp(1j * self.theta)

    @property
    def num_blocks(self) -> int:
        return self.theta.shape[0]

    @property
    def num_elements(self) -> int:
        return self.theta.shape[1]


def _check_endpoints(traj: Trajectory, cfg: ScenarioConfig, atol=1e-6):
    if abs(traj.waypoints[0] - cfg.start) > atol or abs(traj.waypoints[-1] - cfg.finish) > atol:
        raise ValueError("trajectory endpoints do not match scenario start/finish")


def fhb_total_energy(traj: Trajectory, cfg: ScenarioConfig) -> float:
    """UAV energy for fly-hover-broadcast: flight at MR speed plus hover/radiate time."""
    if traj.protocol != FHB:
        raise ValueError("fhb_total_energy needs an FHB trajectory")
    rotor = cfg.rotor
    v = mr_speed(rotor)
    fly = mr_power(rotor) * traj.segment_lengths.sum() / v
    hov = (hover_power(rotor) + cfg.radiated_power) * traj.durations.sum()
    return float(fly + hov)


def pd_total_energy(traj: Trajectory, cfg: ScenarioConfig) -> float:
    """UAV energy for path discretization: sum over segments of t_l (P_t + P_p(delta_l/t_l))."""
    if traj.protocol != PD:
        raise ValueError("pd_total_energy needs a PD trajectory")
    d = traj.segment_lengths
    t = traj.durations
    if np.any((t <= 0) & (d > 0)):
        raise ValueError("zero-duration segment with nonzero length")
    pos = t > 0
    e = t[pos] * (cfg.radiated_power + propulsion_power_segment(d[pos], t[pos], cfg.rotor))
    return float(np.sum(e))


def total_energy(traj: Trajectory, cfg: ScenarioConfig) -> float:
    return fhb_total_energy(traj, cfg) if traj.protocol == FHB else pd_total_energy(traj, cfg)


def harvested_energy(traj: Trajectory, plan: PhasePlan | None, cfg: ScenarioConfig) -> np.ndarray:
    """Per-sensor harvested energy (J): eta * sum_l t_l * P_hat_{k,l}."""
    pos = traj.radiating_positions
    n = pos.size
    M = cfg.ris_elements
    if M > 0:
        if plan is None:
            raise ValueError("a phase plan is required when the RIS has elements")
        if plan.theta.shape != (n, M):
            raise ValueError(f"phase plan shape {plan.theta.shape} does not match ({n}, {M})")
        phis = plan.phi
    else:
        phis = np.zeros((n, 0), dtype=complex)
    if n == 0:
        return np.zeros(cfg.num_sensors)
    P = received_power_matrix(pos, phis, cfg)
    return cfg.conversion_efficiency * (traj.durations @ P)
