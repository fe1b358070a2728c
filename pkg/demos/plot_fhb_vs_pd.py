"""
Hovering versus radiating while flying
======================================

Two ways to charge five sensors from a UAV with a reflecting surface
nearby. Fly-hover-broadcast only radiates while hovering; path
discretization radiates the whole way and trades speed for charge. We
run both on the default scene (PD on the coarser 2 m profile so the demo
finishes in about a minute) and plot the paths.
"""

import os
from pathlib import Path

import numpy as np

from riswpt import default_scenario, run_fhb, run_pd
from riswpt.reporting import plot_series
from riswpt.scenario import reduced_profile

out = Path(os.environ.get("RISWPT_OUT_DIR", "demo-out"))
out.mkdir(parents=True, exist_ok=True)

cfg = default_scenario()
fhb = run_fhb(cfg)
pd = run_pd(reduced_profile(cfg))

for rep in (fhb, pd):
    print(f"{rep.protocol}: {rep.energy:.1f} J after {len(rep.rows)} outer iterations, "
          f"harvested/required min {np.min(rep.harvested / rep.energy_req):.6f}")

# the hover times of FHB
print("FHB hover times (s):", np.round(fhb.trajectory.durations, 2))

# PD slows down near the sensors
v = pd.trajectory.speeds
print(f"PD speed range {v.min():.2f} .. {v.max():.2f} m/s")

s = cfg.sensor_array
path = plot_series(out / "fhb_vs_pd.svg",
                   [("FHB", fhb.trajectory.waypoints.real, fhb.trajectory.waypoints.imag),
                    ("PD", pd.trajectory.waypoints.real, pd.trajectory.waypoints.imag)],
                   "x (m)", "y (m)", scatter=[("sensors", s.real, s.imag)], equal=True)
print("wrote", path)
