"""Discrete-time datacenter simulator with brownout-based component scheduling."""

from .domain import Policy, SimConfig
from .engine import MetricsLedger, build_datacenter, run

__all__ = ["Policy", "SimConfig", "MetricsLedger", "build_datacenter", "run"]
__version__ = "0.1.0"
