"""Search-based estimation of safe WCET ranges for weakly hard real-time systems."""

from .model import (
    ContextSwitchRanges,
    PartitionSpec,
    SchedulerConfig,
    SystemSpec,
    Task,
    ValidationError,
    compute_sim_horizon,
    load_system,
    save_system,
)

__version__ = "0.1.0"

__all__ = [
    "ContextSwitchRanges",
    "PartitionSpec",
    "SchedulerConfig",
    "SystemSpec",
    "Task",
    "ValidationError",
    "compute_sim_horizon",
    "load_system",
    "save_system",
]
