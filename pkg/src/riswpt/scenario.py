"""Physical scenario: geometry, channel constants, rotor constants.

Planar positions are complex numbers (real part = x, imaginary part = y).
Everything is stored in SI units; unit-suffixed strings ("40 dBm", "0.2 mJ")
are only accepted at load time.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "ScenarioError",
    "RotorParams",
    "ChannelParams",
    "ScenarioConfig",
    "planar",
    "default_rotor",
    "default_scenario",
    "semicircle_layout",
    "visit_order",
    "load_scenario",
    "save_scenario",
    "scenario_to_dict",
    "scenario_from_dict",
    "reduced_profile",
    "sensors_from_sequence",
    "dbm_to_watts",
]


class ScenarioError(ValueError):
    """Raised when a scenario file is malformed or violates an invariant."""


def planar(x: float, y: float) -> complex:
    return complex(float(x), float(y))


@dataclass(frozen=True)
class RotorParams:
    """Rotary-wing propulsion constants."""

    p0_hover_blade_power: float = 79.8563
    p_induced_hover: float = 88.6279
    tip_speed: float = 120.0
    mean_induced_velocity: float = 4.03
    fuselage_drag_ratio: float = 0.6
    air_density: float = 1.225
    rotor_solidity: float = 0.05
    rotor_disc_area: float = 0.503

    def validate(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if not (math.isfinite(v) and v > 0):
                raise ScenarioError(f"{f.name} must be strictly positive (got {v!r})")

    @property
    def parasite_coeff(self) -> float:
        # 0.5 * d0 * rho * s * A
        return 0.5 * self.fuselage_drag_ratio * self.air_density * self.rotor_solidity * self.rotor_disc_area


@dataclass(frozen=True)
class ChannelParams:
    """Large-scale and Rician channel constants.

    ``aod_reference`` selects how the RIS departure cosine is measured:
    ``"ris"`` uses the RIS abscissa (fixed RIS-sensor link), ``"uav"`` uses the
    UAV abscissa, so the departure angle moves with the UAV.
    """

    beta0_ref_gain: float = 1e-3
    pathloss_uav_ris: float = 2.2
    pathloss_ris_sensor: float = 2.2
    pathloss_direct: float = 2.6
    rician_uav_ris: float = 10.0
    rician_ris_sensor: float = 10.0
    rician_direct: float = 10.0
    wavelength: float = 1.0
    element_spacing: float = 0.5
    aod_reference: str = "ris"
    los_only: bool = False

    def validate(self) -> None:
        if not self.beta0_ref_gain > 0:
            raise ScenarioError("beta0_ref_gain must be positive")
        for name in ("pathloss_uav_ris", "pathloss_ris_sensor", "pathloss_direct"):
            if not getattr(self, name) >= 2:
                raise ScenarioError(f"{name} must be >= 2")
        for name in ("rician_uav_ris", "rician_ris_sensor", "rician_direct"):
            if not getattr(self, name) >= 0:
                raise ScenarioError(f"{name} must be >= 0")
        if not self.wavelength > 0:
            raise ScenarioError("wavelength must be positive")
        if not self.element_spacing > 0:
            raise ScenarioError("element_spacing must be positive")
        if self.aod_reference not in ("ris", "uav"):
            raise ScenarioError("aod_reference must be 'ris' or 'uav'")


@dataclass(frozen=True)
class ScenarioConfig:
    sensors: tuple[complex, ...]
    sensor_energy_req: tuple[float, ...]
    ris_position: complex = 0j
    ris_height: float = 10.0
    ris_elements: int = 8
    uav_height: float = 20.0
    uav_max_speed: float = 30.0
    radiated_power: float = 10.0
    start: complex = -35 + 0j
    finish: complex = 35 + 0j
    conversion_efficiency: float = 0.6
    max_segment_length: float = 0.5
    rotor: RotorParams = field(default_factory=RotorParams)
    channel: ChannelParams = field(default_factory=ChannelParams)

    def __post_init__(self):
        object.__setattr__(self, "sensors", tuple(complex(s) for s in self.sensors))
        object.__setattr__(self, "sensor_energy_req", tuple(float(e) for e in self.sensor_energy_req))
        object.__setattr__(self, "ris_position", complex(self.ris_position))
        object.__setattr__(self, "start", complex(self.start))
        object.__setattr__(self, "finish", complex(self.finish))
        object.__setattr__(self, "ris_elements", int(self.ris_elements))

    @property
    def num_sensors(self) -> int:
        return len(self.sensors)

    @property
    def sensor_array(self) -> np.ndarray:
        return np.asarray(self.sensors, dtype=complex)

    @property
    def energy_req_array(self) -> np.ndarray:
        return np.asarray(self.sensor_energy_req, dtype=float)

    def with_updates(self, **changes) -> "ScenarioConfig":
        return replace(self, **changes)

    def validate(self) -> "ScenarioConfig":
        """Check every invariant; raise :class:`ScenarioError` naming the first violation."""
        K = len(self.sensors)
        if K < 1:
            raise ScenarioError("at least one sensor is required")
        if len(self.sensor_energy_req) != K:
            raise ScenarioError("sensor_energy_req must have one entry per sensor")
        pts = list(self.sensors) + [self.ris_position, self.start, self.finish]
        if not all(math.isfinite(p.real) and math.isfinite(p.imag) for p in pts):
            raise ScenarioError("positions must be finite")
        if any(not (e > 0 and math.isfinite(e)) for e in self.sensor_energy_req):
            raise ScenarioError("sensor_energy_req must be strictly positive")
        if self.ris_elements < 0:
            raise ScenarioError("ris_elements must be >= 0")
        if not self.ris_height > 0:
            raise ScenarioError("ris_height must be positive")
        if not self.uav_height > self.ris_height:
            raise ScenarioError("uav_height must exceed ris_height")
        if not self.uav_max_speed > 0:
            raise ScenarioError("uav_max_speed must be positive")
        if not self.radiated_power >= 0:
            raise ScenarioError("radiated_power must be >= 0")
        if not 0 < self.conversion_efficiency <= 1:
            raise ScenarioError("conversion_efficiency out of (0,1]")
        if not self.max_segment_length > 0:
            raise ScenarioError("max_segment_length must be positive")
        self.rotor.validate()
        self.channel.validate()
        return self


def default_rotor() -> RotorParams:
    return RotorParams()


def semicircle_layout(radius: float = 30.0, K: int = 5, mid_radius_deg: float = 45.0) -> list[complex]:
    """Sensor positions on a semicircle split into four sectors by five radii.

    Four sensors sit on the arc, one on each radius except ``mid_radius_deg``,
    numbered by decreasing polar angle. The fifth sensor sits halfway along the
    ``mid_radius_deg`` radius.
    """
    if K != 5:
        raise ScenarioError(f"semicircle layout supports exactly K=5 sensors (got K={K})")
    radii = [180.0, 135.0, 90.0, 45.0, 0.0]
    if mid_radius_deg not in radii:
        raise ScenarioError(f"mid_radius_deg must be one of {radii}")
    on_arc = [a for a in radii if a != mid_radius_deg]
    pts = [radius * np.exp(1j * np.deg2rad(a)) for a in on_arc]
    pts.append(0.5 * radius * np.exp(1j * np.deg2rad(mid_radius_deg)))
    # exact zeros for the axis-aligned radii
    return [complex(round(p.real, 12), round(p.imag, 12)) for p in pts]


def visit_order(cfg: ScenarioConfig) -> list[int]:
    """Sensor indices sorted by decreasing polar angle around the RIS (sweep from start to finish)."""
    rel = cfg.sensor_array - cfg.ris_position
    ang = np.mod(np.angle(rel), 2 * np.pi)
    ang = np.where(np.isclose(ang, 2 * np.pi), 0.0, ang)
    return [int(i) for i in np.argsort(-ang, kind="stable")]


def default_scenario(**overrides) -> ScenarioConfig:
    """The reference simulation setup: five sensors, RIS at the semicircle centre."""
    from .power import check_rotor_checksum

    check_rotor_checksum(RotorParams())
    mid = overrides.pop("mid_radius_deg", 45.0)
    sensors = semicircle_layout(30.0, 5, mid_radius_deg=mid)
    cfg = ScenarioConfig(
        sensors=tuple(sensors),
        sensor_energy_req=(2.0e-4,) * 5,
        ris_position=0j,
        ris_height=10.0,
        ris_elements=8,
        uav_height=20.0,
        uav_max_speed=30.0,
        radiated_power=dbm_to_watts(40.0),
        start=-35 + 0j,
        finish=35 + 0j,
        conversion_efficiency=0.6,
        max_segment_length=0.5,
        rotor=RotorParams(),
        channel=ChannelParams(),
    )
    if overrides:
        cfg = replace(cfg, **overrides)
    return cfg.validate()


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


# ---------------------------------------------------------------------------
# serialization

_UNIT_RE = re.compile(r"^\s*([-+0-9.eE]+)\s*([A-Za-z]*)\s*$")
_POWER_UNITS = {"": 1.0, "w": 1.0, "mw": 1e-3, "kw": 1e3}
_ENERGY_UNITS = {"": 1.0, "j": 1.0, "mj": 1e-3, "uj": 1e-6, "kj": 1e3}


def _parse_quantity(value, kind: str, key: str) -> float:
    if isinstance(value, bool):
        raise ScenarioError(f"{key}: expected a number")
    if isinstance(value, (int, float)):
        return float(value)
    if not isinstance(value, str):
        raise ScenarioError(f"{key}: expected a number or a unit-suffixed string")
    m = _UNIT_RE.match(value)
    if not m:
        raise ScenarioError(f"{key}: cannot parse quantity {value!r}")
    num, unit = float(m.group(1)), m.group(2).lower()
    if kind == "power":
        if unit == "dbm":
            return dbm_to_watts(num)
        if unit == "dbw":
            return 10.0 ** (num / 10.0)
        table = _POWER_UNITS
    elif kind == "energy":
        table = _ENERGY_UNITS
    else:
        table = {"": 1.0, "m": 1.0}
    if unit not in table:
        raise ScenarioError(f"{key}: unknown unit {m.group(2)!r}")
    return num * table[unit]


def _parse_point(value, key: str) -> complex:
    if isinstance(value, dict):
        value = [value.get("x"), value.get("y")]
    try:
        x, y = value
        return planar(float(x), float(y))
    except (TypeError, ValueError):
        raise ScenarioError(f"{key}: expected [x, y] pair") from None


def scenario_to_dict(cfg: ScenarioConfig) -> dict:
    return {
        "sensors": [[p.real, p.imag] for p in cfg.sensors],
        "sensor_energy_req": list(cfg.sensor_energy_req),
        "ris_position": [cfg.ris_position.real, cfg.ris_position.imag],
        "ris_height": cfg.ris_height,
        "ris_elements": cfg.ris_elements,
        "uav_height": cfg.uav_height,
        "uav_max_speed": cfg.uav_max_speed,
        "radiated_power": cfg.radiated_power,
        "start": [cfg.start.real, cfg.start.imag],
        "finish": [cfg.finish.real, cfg.finish.imag],
        "conversion_efficiency": cfg.conversion_efficiency,
        "max_segment_length": cfg.max_segment_length,
        "rotor": asdict(cfg.rotor),
        "channel": asdict(cfg.channel),
    }


def scenario_from_dict(data: dict) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ScenarioError("scenario root must be a mapping")
    known = {f.name for f in fields(ScenarioConfig)}
    unknown = set(data) - known
    if unknown:
        raise ScenarioError(f"unknown scenario keys: {sorted(unknown)}")
    for req in ("sensors", "sensor_energy_req"):
        if req not in data:
            raise ScenarioError(f"missing required key {req!r}")

    sensors = tuple(_parse_point(p, "sensors") for p in data["sensors"])
    ereq = data["sensor_energy_req"]
    if not isinstance(ereq, list):
        ereq = [ereq] * len(sensors)
    kw: dict = {
        "sensors": sensors,
        "sensor_energy_req": tuple(_parse_quantity(e, "energy", "sensor_energy_req") for e in ereq),
    }
    for key in ("ris_position", "start", "finish"):
        if key in data:
            kw[key] = _parse_point(data[key], key)
    for key in ("ris_height", "uav_height", "uav_max_speed", "conversion_efficiency", "max_segment_length"):
        if key in data:
            kw[key] = _parse_quantity(data[key], "length", key)
    if "radiated_power" in data:
        kw["radiated_power"] = _parse_quantity(data["radiated_power"], "power", "radiated_power")
    if "ris_elements" in data:
        kw["ris_elements"] = int(data["ris_elements"])
    if "rotor" in data:
        rotor = data["rotor"]
        bad = set(rotor) - {f.name for f in fields(RotorParams)}
        if bad:
            raise ScenarioError(f"unknown rotor keys: {sorted(bad)}")
        kw["rotor"] = RotorParams(**{k: float(v) for k, v in rotor.items()})
    if "channel" in data:
        ch = dict(data["channel"])
        bad = set(ch) - {f.name for f in fields(ChannelParams)}
        if bad:
            raise ScenarioError(f"unknown channel keys: {sorted(bad)}")
        kw["channel"] = ChannelParams(**ch)
    return ScenarioConfig(**kw).validate()


def save_scenario(cfg: ScenarioConfig, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(scenario_to_dict(cfg), indent=2))
    return path


def load_scenario(path) -> ScenarioConfig:
    """Read and validate a JSON scenario file."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"scenario file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: parse error: {exc}") from exc
    return scenario_from_dict(data)


def reduced_profile(cfg: ScenarioConfig, max_segment_length: float = 2.0) -> ScenarioConfig:
    """Coarser path discretization for quick runs."""
    return replace(cfg, max_segment_length=max_segment_length)


def sensors_from_sequence(points: Sequence[Sequence[float]]) -> tuple[complex, ...]:
    return tuple(planar(x, y) for x, y in points)
