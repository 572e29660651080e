"""dcsim: packet-level data-center TCP simulation with a host-side
duplicate-ACK-injection fast-recovery shim."""

__version__ = "0.1.0"

from .config import RunConfig
from .experiment import Simulation, run_config

__all__ = ["RunConfig", "Simulation", "run_config", "__version__"]
