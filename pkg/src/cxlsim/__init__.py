"""Deterministic discrete-event simulator of a CXL-style shared-memory
cluster with write-back replication, hardware logging, and crash recovery."""

from .config import ClusterConfig, parse_config
from .recovery import CrashPlan, verify_recovery
from .sim import Simulation
from .trace import PRESETS, WorkloadSpec, generate_trace, load_trace, \
    save_trace

__all__ = [
    "ClusterConfig", "parse_config", "CrashPlan", "verify_recovery",
    "Simulation", "PRESETS", "WorkloadSpec", "generate_trace",
    "load_trace", "save_trace",
]

__version__ = "0.1.0"
