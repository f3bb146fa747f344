"""Slot-stepped NR sidelink mode-2 resource-allocation simulator.

Compares the standard semi-persistent sensing/selection scheme against a
cooperative beam-aware variant on a shared deterministic engine.
"""

from ._kernels import BACKEND, available_backends
from .engine import MODES, SimConfig, run

__version__ = "0.1.0"

__all__ = ["BACKEND", "MODES", "SimConfig", "available_backends", "run", "__version__"]
