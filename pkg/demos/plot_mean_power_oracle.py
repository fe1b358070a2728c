"""
Mean received power: closed form against sampled channels
=========================================================

The planner never samples fading. It works with the mean received power,
which is a quadratic in the reflection coefficients. Here we check that
mean against brute-force averaging over Rician channel draws.
"""

import numpy as np

from riswpt import default_scenario
from riswpt.power import expected_power, monte_carlo_power

cfg = default_scenario()

# UAV above a point between the start and the RIS, phases drawn at random
rng = np.random.default_rng(0)
q = -12.0 + 6.0j
phi = np.exp(1j * rng.uniform(0, 2 * np.pi, cfg.ris_elements))

for k in range(cfg.num_sensors):
    exact = expected_power(q, phi, k, cfg)
    mean, se = monte_carlo_power(q, phi, k, cfg, n_samples=200_000, rng=k)
    print(f"sensor {k + 1}: closed form {exact:.4e} W, sampled {mean:.4e} W "
          f"(+/- {se:.1e}), rel. diff {abs(mean - exact) / exact:.2e}")

# The sampling error falls like 1/sqrt(N)
exact = expected_power(q, phi, 4, cfg)
for n in (1_000, 10_000, 100_000, 1_000_000):
    mean, _ = monte_carlo_power(q, phi, 4, cfg, n_samples=n, rng=1)
    print(f"N = {n:>9d}: rel. error {abs(mean - exact) / exact:.2e}")
