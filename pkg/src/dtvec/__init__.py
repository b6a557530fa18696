"""Digital-twin vehicular edge computing simulator and decision engine."""
from .config import ConfigError, SimConfig, load_config
from .decision import ActionMatrix
from .sim import Simulation

__all__ = ["ActionMatrix", "ConfigError", "SimConfig", "Simulation", "load_config"]
__version__ = "0.1.0"
