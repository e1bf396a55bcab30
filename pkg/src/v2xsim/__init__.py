"""Deterministic TTI-level simulator of a sliced V2X highway downlink."""

__version__ = "0.1.0"

from .config import ConfigError, SimConfig, load_config
from .metrics import MetricsReport, summarize
from .sim import NetworkState, run_simulation, step

__all__ = ["ConfigError", "SimConfig", "load_config", "MetricsReport", "summarize", "NetworkState",
           "run_simulation", "step", "__version__"]
