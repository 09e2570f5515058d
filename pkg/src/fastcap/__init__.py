"""Fairness-aware full-system power capping via per-core and memory DVFS.

The package solves for the frequency assignment that maximizes a uniform
performance-degradation bound under a total power budget, compares it
against baseline capping policies, and closes the loop against a
discrete-event simulator of cores sharing memory banks and a bus.

Most users want :func:`fastcap_solve` on an :class:`~fastcap.model.Instance`
(build one with :mod:`fastcap.workloads`), or :func:`run_capped` for the
epoch-based controller loop.  The ``fastcap`` CLI wraps both.
"""

from fastcap.capper import (
    QuantizeMode,
    conditional_solve,
    exhaustive_solve,
    fastcap_solve,
)
from fastcap.errors import (
    ConfigError,
    CounterError,
    DomainError,
    EnumerationTooLargeError,
    FastcapError,
    InfeasibleError,
)
from fastcap.model import (
    CoreProfile,
    FrequencyPlan,
    Instance,
    MemoryProfile,
    SystemBudget,
)
from fastcap.policies import (
    solve_cpu_only,
    solve_eql_freq,
    solve_eql_pwr,
    solve_maxbips,
)
from fastcap.simulator import (
    ControllerConfig,
    SimConfig,
    approximation_report,
    run_capped,
    run_fixed,
)
from fastcap.workloads import (
    WorkloadClassSpec,
    assemble_instance,
    random_instance,
    synth_workload,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ControllerConfig",
    "CoreProfile",
    "CounterError",
    "DomainError",
    "EnumerationTooLargeError",
    "FastcapError",
    "FrequencyPlan",
    "InfeasibleError",
    "Instance",
    "MemoryProfile",
    "QuantizeMode",
    "SimConfig",
    "SystemBudget",
    "WorkloadClassSpec",
    "approximation_report",
    "assemble_instance",
    "conditional_solve",
    "exhaustive_solve",
    "fastcap_solve",
    "random_instance",
    "run_capped",
    "run_fixed",
    "solve_cpu_only",
    "solve_eql_freq",
    "solve_eql_pwr",
    "solve_maxbips",
    "synth_workload",
]
