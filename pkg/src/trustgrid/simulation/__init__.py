"""Scenario engine, benchmarks and metrics accounting."""

from .config import SCENARIOS, SimConfig, load_config
from .engine import SimResult, inject_failure, run_adversary_scenario, run_market_sim

__all__ = [
    "SCENARIOS",
    "SimConfig",
    "SimResult",
    "inject_failure",
    "load_config",
    "run_adversary_scenario",
    "run_market_sim",
]
