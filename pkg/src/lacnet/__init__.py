"""Discrete-event simulator of a low-altitude aerial compute market.

Three task-allocation schemes (centralized ground station, CBBA consensus,
on-chain reverse auction) run against identical seeded worlds of UAVs and
eVTOLs; metrics cover latency, failure rate and capacity-weighted utilization.
"""

__version__ = "0.1.0"

from .config import ScenarioConfig, load_config
from .simulation import run_scenario

__all__ = ["ScenarioConfig", "load_config", "run_scenario", "__version__"]
