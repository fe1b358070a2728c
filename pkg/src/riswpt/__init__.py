"""Energy-minimal UAV wireless power transfer with a reflecting surface.

The usual entry points are :func:`default_scenario`, :func:`run_fhb`,
:func:`run_pd` and the ``riswpt`` command line tool.
"""

from .orchestrate import (QuantizedResult, RunReport, SolverOptions, feasibility_repair, init_fhb, init_pd,
                          quantize_plan, run_fhb, run_noris, run_pd, run_protocol, run_quantized)
from .power import (PhasePlan, Trajectory, expected_power, harvested_energy, monte_carlo_power, mr_speed,
                    total_energy)
from .scenario import (ScenarioConfig, ScenarioError, default_scenario, load_scenario, reduced_profile,
                       save_scenario)

__version__ = "0.1.0"

__all__ = [
    "ScenarioConfig",
    "ScenarioError",
    "default_scenario",
    "reduced_profile",
    "load_scenario",
    "save_scenario",
    "Trajectory",
    "PhasePlan",
    "expected_power",
    "monte_carlo_power",
    "harvested_energy",
    "total_energy",
    "mr_speed",
    "SolverOptions",
    "RunReport",
    "QuantizedResult",
    "init_fhb",
    "init_pd",
    "run_fhb",
    "run_pd",
    "run_protocol",
    "run_noris",
    "run_quantized",
    "quantize_plan",
    "feasibility_repair",
]
