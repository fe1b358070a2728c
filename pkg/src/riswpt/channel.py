"""Link geometry, large-scale gains, LoS phase offsets and Rician channel draws."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import ScenarioConfig

__all__ = [
    "LinkGeometry",
    "LargeScaleGains",
    "ChannelRealization",
    "link_geometry",
    "large_scale_gains",
    "psi_vector",
    "sample_realization",
    "sample_realizations",
    "geometry_arrays",
    "psi_arrays",
]


@dataclass(frozen=True)
class LinkGeometry:
    dist_uav_ris: float
    dist_ris_sensor: float
    dist_uav_sensor: float
    cos_aoa: float
    cos_aod: float


@dataclass(frozen=True)
class LargeScaleGains:
    beta_t: float
    beta_r: float
    beta_d: float


@dataclass(frozen=True)
class ChannelRealization:
    g_direct: complex
    g_uav_ris: np.ndarray
    g_ris_sensor: np.ndarray


def geometry_arrays(q, cfg: ScenarioConfig) -> dict[str, np.ndarray]:
    """Vectorized link geometry.

    ``q`` has any shape S; per-sensor quantities come back with shape S + (K,).
    """
    q = np.asarray(q, dtype=complex)
    qs = cfg.sensor_array
    qr = cfg.ris_position
    dh = cfg.uav_height - cfg.ris_height
    d_t = np.sqrt(np.abs(q - qr) ** 2 + dh**2)
    d_r = np.sqrt(np.abs(qs - qr) ** 2 + cfg.ris_height**2)
    qe = q[..., None]
    d_d = np.sqrt(np.abs(qe - qs) ** 2 + cfg.uav_height**2)
    cos_t = (qr.real - q.real) / d_t
    if cfg.channel.aod_reference == "uav":
        cos_r = (qs.real - qe.real) / d_r
    else:
        cos_r = np.broadcast_to((qs.real - qr.real) / d_r, d_d.shape)
    return {
        "d_t": d_t,
        "d_r": np.broadcast_to(d_r, d_d.shape),
        "d_d": d_d,
        "cos_t": cos_t,
        "cos_r": cos_r,
    }


def link_geometry(q_uav: complex, sensor_index: int, cfg: ScenarioConfig) -> LinkGeometry:
    g = geometry_arrays(q_uav, cfg)
    k = sensor_index
    return LinkGeometry(
        dist_uav_ris=float(g["d_t"]),
        dist_ris_sensor=float(g["d_r"][k]),
        dist_uav_sensor=float(g["d_d"][k]),
        cos_aoa=float(g["cos_t"]),
        cos_aod=float(g["cos_r"][k]),
    )


def large_scale_gains(geometry: LinkGeometry, cfg: ScenarioConfig) -> LargeScaleGains:
    ch = cfg.channel
    b0 = ch.beta0_ref_gain
    return LargeScaleGains(
        beta_t=b0 / geometry.dist_uav_ris**ch.pathloss_uav_ris,
        beta_r=b0 / geometry.dist_ris_sensor**ch.pathloss_ris_sensor,
        beta_d=b0 / geometry.dist_uav_sensor**ch.pathloss_direct,
    )


def _psi_phase(d_t, d_r, d_d, cos_t, cos_r, M, ch):
    m = np.arange(M)
    k = 2 * np.pi / ch.wavelength
    base = (d_d + d_r - d_t)[..., None]
    slope = (ch.element_spacing * (cos_r - cos_t))[..., None]
    return k * (base + slope * m)


def psi_vector(geometry: LinkGeometry, cfg: ScenarioConfig) -> np.ndarray:
    """Unit-modulus LoS phase-offset vector, entries exp(-j psi_m)."""
    ang = _psi_phase(
        np.float64(geometry.dist_uav_ris),
        np.float64(geometry.dist_ris_sensor),
        np.float64(geometry.dist_uav_sensor),
        np.float64(geometry.cos_aoa),
        np.float64(geometry.cos_aod),
        cfg.ris_elements,
        cfg.channel,
    )
    return np.exp(-1j * ang)


def psi_arrays(q, cfg: ScenarioConfig, geom: dict | None = None) -> np.ndarray:
    """Phase-offset vectors for every (position, sensor): shape S + (K, M)."""
    if geom is None:
        geom = geometry_arrays(q, cfg)
    d_t = np.asarray(geom["d_t"])[..., None]
    cos_t = np.asarray(geom["cos_t"])[..., None]
    ang = _psi_phase(d_t, geom["d_r"], geom["d_d"], cos_t, geom["cos_r"], cfg.ris_elements, cfg.channel)
    return np.exp(-1j * ang)


def _cn(rng: np.random.Generator, shape) -> np.ndarray:
    # unit-variance CSCG: variance 1/2 per real component
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * np.sqrt(0.5)


def _mix(kappa: float, los_only: bool) -> tuple[float, float]:
    if los_only:
        return 1.0, 0.0
    return np.sqrt(kappa / (kappa + 1.0)), np.sqrt(1.0 / (kappa + 1.0))


def sample_realizations(q_uav: complex, sensor_index: int, cfg: ScenarioConfig,
                        rng: np.random.Generator, size: int):
    """Draw ``size`` independent channel realizations.

    Returns ``(g_d, g_t, g_r)`` with shapes ``(size,)``, ``(size, M)``, ``(size, M)``.
    """
    ch = cfg.channel
    geo = link_geometry(q_uav, sensor_index, cfg)
    gains = large_scale_gains(geo, cfg)
    M = cfg.ris_elements
    m = np.arange(M)
    kw = 2 * np.pi / ch.wavelength
    los_t = np.exp(-1j * kw * geo.dist_uav_ris) * np.exp(-1j * kw * ch.element_spacing * m * geo.cos_aoa)
    los_r = np.exp(-1j * kw * geo.dist_ris_sensor) * np.exp(-1j * kw * ch.element_spacing * m * geo.cos_aod)
    los_d = np.exp(-1j * kw * geo.dist_uav_sensor)

    wd_los, wd_n = _mix(ch.rician_direct, ch.los_only)
    wt_los, wt_n = _mix(ch.rician_uav_ris, ch.los_only)
    wr_los, wr_n = _mix(ch.rician_ris_sensor, ch.los_only)

    g_d = np.sqrt(gains.beta_d) * (wd_los * los_d + wd_n * _cn(rng, (size,)))
    g_t = np.sqrt(gains.beta_t) * (wt_los * los_t + wt_n * _cn(rng, (size, M)))
    g_r = np.sqrt(gains.beta_r) * (wr_los * los_r + wr_n * _cn(rng, (size, M)))
    return g_d, g_t, g_r


def sample_realization(q_uav: complex, sensor_index: int, cfg: ScenarioConfig,
                       rng: np.random.Generator) -> ChannelRealization:
    g_d, g_t, g_r = sample_realizations(q_uav, sensor_index, cfg, rng, 1)
    return ChannelRealization(complex(g_d[0]), g_t[0], g_r[0])
