"""Synthetic workload and instance generation.

Workload classes are synthetic stand-ins ordered by memory intensity:
``MEM`` cores miss often (short think times), ``ILP`` cores rarely, ``MID``
sits between, and ``MIX`` blends one archetype from each class.  All draws
are deterministic given the seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DomainError
from .model import CoreProfile, Instance, MemoryProfile, SystemBudget

CLASS_NAMES = ("ILP", "MID", "MEM", "MIX")

# Nameplate peak power by core count; linear interpolation elsewhere.
PEAK_POWER_TABLE = {4: 60.0, 16: 120.0, 32: 210.0, 64: 375.0}

# Default (min, max) parameter ranges per class: think time and cache time
# in ns, dynamic power in watts.  Think scales are chosen large enough to
# keep event counts tractable in simulation while preserving the intensity
# ordering MEM < MID < ILP.
DEFAULT_CLASS_RANGES = {
    "MEM": {"z_min": (800.0, 2000.0), "cache": (5.0, 10.0),
            "p_max": (1.6, 2.8), "alpha": (1.8, 2.4)},
    "MID": {"z_min": (4000.0, 10000.0), "cache": (5.0, 10.0),
            "p_max": (2.4, 3.6), "alpha": (2.1, 2.7)},
    "ILP": {"z_min": (30000.0, 100000.0), "cache": (5.0, 10.0),
            "p_max": (3.2, 4.5), "alpha": (2.4, 3.0)},
}

# Standard frequency ladders: ten core ratios 0.55..1.0 and ten bus
# transfer times from a 800 MHz bus slowing in 66 MHz steps to 206 MHz.
CORE_FREQ_GRID = tuple(float(r) for r in np.linspace(0.55, 1.0, 10).round(12))
BUS_FREQS_MHZ = tuple(range(800, 199, -66))
BUS_TRANSFER_CYCLES = 8
S_B_GRID = tuple(BUS_TRANSFER_CYCLES / (f * 1e6) * 1e9 for f in BUS_FREQS_MHZ)


def peak_power_default(n_cores: int) -> float:
    if n_cores in PEAK_POWER_TABLE:
        return PEAK_POWER_TABLE[n_cores]
    return 60.0 + 5.25 * (n_cores - 4)


@dataclass(frozen=True)
class WorkloadClassSpec:
    """A workload class tag plus the per-class parameter ranges."""

    workload_class: str
    ranges: dict = field(default_factory=lambda: dict(DEFAULT_CLASS_RANGES))

    def __post_init__(self):
        if self.workload_class not in CLASS_NAMES:
            raise DomainError(
                f"unknown workload class {self.workload_class!r}; "
                f"expected one of {CLASS_NAMES}"
            )
        for name in ("ILP", "MID", "MEM"):
            if name not in self.ranges:
                raise DomainError(f"ranges missing class {name}")
        mem_mean = sum(self.ranges["MEM"]["z_min"]) / 2
        ilp_mean = sum(self.ranges["ILP"]["z_min"]) / 2
        if not mem_mean < ilp_mean:
            raise DomainError("MEM mean think time must stay below ILP's")


def _draw_profile(rng: np.random.Generator, ranges: dict, core_id: int) -> CoreProfile:
    return CoreProfile(
        core_id=core_id,
        z_min=float(rng.uniform(*ranges["z_min"])),
        cache_time=float(rng.uniform(*ranges["cache"])),
        p_max=float(rng.uniform(*ranges["p_max"])),
        alpha=float(rng.uniform(*ranges["alpha"])),
    )


def _draw(spec: WorkloadClassSpec, n_cores: int, seed: int):
    if n_cores < 1:
        raise DomainError("n_cores must be >= 1")
    rng = np.random.default_rng(seed)
    profiles: list[CoreProfile] = []
    classes: list[str] = []
    pure = ("ILP", "MID", "MEM")
    if n_cores % 4 == 0:
        if spec.workload_class == "MIX":
            arch_classes = ["ILP", "MID", "MEM", str(rng.choice(pure))]
        else:
            arch_classes = [spec.workload_class] * 4
        copies = n_cores // 4
        core_id = 0
        for cls in arch_classes:
            proto = _draw_profile(rng, spec.ranges[cls], 0)
            for _ in range(copies):
                profiles.append(
                    CoreProfile(
                        core_id=core_id,
                        z_min=proto.z_min,
                        cache_time=proto.cache_time,
                        p_max=proto.p_max,
                        alpha=proto.alpha,
                    )
                )
                classes.append(cls)
                core_id += 1
    else:
        for core_id in range(n_cores):
            cls = (
                str(rng.choice(pure))
                if spec.workload_class == "MIX"
                else spec.workload_class
            )
            profiles.append(_draw_profile(rng, spec.ranges[cls], core_id))
            classes.append(cls)
    return profiles, classes


def synth_workload(
    spec: WorkloadClassSpec, n_cores: int, seed: int
) -> list[CoreProfile]:
    """Generate per-core profiles for a workload class.

    When ``n_cores`` is divisible by four, four archetypes are drawn and
    replicated in blocks; otherwise every core is drawn independently.
    """
    return _draw(spec, n_cores, seed)[0]


def archetype_classes(
    spec: WorkloadClassSpec, n_cores: int, seed: int
) -> list[str]:
    """Class label per core for the same draw as ``synth_workload``."""
    return _draw(spec, n_cores, seed)[1]


def swap_class_profiles(
    profiles: Sequence[CoreProfile],
    classes: Sequence[str],
    class_a: str = "MEM",
    class_b: str = "ILP",
) -> list[CoreProfile]:
    """Exchange workload parameters between two classes (phase change).

    Core ids stay put; the cores previously running class-a programs now
    run the class-b programs that sat on the paired cores, and vice versa.
    """
    idx_a = [i for i, c in enumerate(classes) if c == class_a]
    idx_b = [i for i, c in enumerate(classes) if c == class_b]
    out = list(profiles)
    for a, b in zip(idx_a, idx_b):
        pa, pb = profiles[a], profiles[b]
        out[a] = CoreProfile(
            core_id=pa.core_id, z_min=pb.z_min, cache_time=pb.cache_time,
            p_max=pb.p_max, alpha=pb.alpha,
        )
        out[b] = CoreProfile(
            core_id=pb.core_id, z_min=pa.z_min, cache_time=pa.cache_time,
            p_max=pa.p_max, alpha=pa.alpha,
        )
    return out


def assemble_instance(
    cores: Sequence[CoreProfile],
    p_peak: float | None = None,
    budget_fraction: float = 0.6,
    s_m: float = 20.0,
    s_b_grid: Sequence[float] = S_B_GRID,
    q_bank: float = 2.0,
    u_bus: float = 1.5,
    mem_p_max: float | None = None,
    beta: float = 1.0,
    p_static: float | None = None,
    core_freq_grid: Sequence[float] = CORE_FREQ_GRID,
) -> Instance:
    """Wrap profiles into a solvable instance with sensible defaults.

    Memory dynamic power defaults to a quarter of the nameplate peak and
    static power to a fifth, mirroring a CPU-heavy power breakdown.
    """
    n = len(cores)
    if p_peak is None:
        p_peak = peak_power_default(n)
    if mem_p_max is None:
        mem_p_max = 0.25 * p_peak
    if p_static is None:
        p_static = 0.2 * p_peak
    memory = MemoryProfile(
        s_m=s_m,
        s_b_min=s_b_grid[0],
        s_b_grid=tuple(s_b_grid),
        q_bank=q_bank,
        u_bus=u_bus,
        p_max=mem_p_max,
        beta=beta,
    )
    budget = SystemBudget(
        p_peak=p_peak, budget_fraction=budget_fraction, p_static=p_static
    )
    return Instance(
        cores=tuple(cores),
        memory=memory,
        budget=budget,
        core_freq_grid=tuple(core_freq_grid),
    )


def random_instance(
    rng: np.random.Generator,
    n_cores: int,
    m_levels: int = 10,
    f_levels: int = 10,
    budget_fraction: float | None = None,
) -> Instance:
    """Draw a random feasible instance with mixed memory intensity.

    Used by the benchmark subcommand and the randomized test sweeps.  The
    budget fraction, when not fixed, lands in a band where the cap binds
    (degradation below 1) but the floor stays comfortably feasible.
    """
    if budget_fraction is None:
        budget_fraction = float(rng.uniform(0.4, 0.85))
    cores = tuple(
        CoreProfile(
            core_id=i,
            z_min=float(np.exp(rng.uniform(np.log(30.0), np.log(3000.0)))),
            cache_time=float(rng.uniform(0.0, 15.0)),
            p_max=float(rng.uniform(2.0, 6.0)),
            alpha=float(rng.uniform(1.5, 3.5)),
        )
        for i in range(n_cores)
    )
    core_sum = sum(c.p_max for c in cores)
    mem_p = core_sum * float(rng.uniform(0.3, 0.6))
    p_static = core_sum * float(rng.uniform(0.15, 0.3))
    bus_freqs = np.linspace(800e6, 206e6, m_levels)
    s_b_grid = tuple(BUS_TRANSFER_CYCLES / bus_freqs * 1e9)
    memory = MemoryProfile(
        s_m=float(rng.uniform(10.0, 30.0)),
        s_b_min=s_b_grid[0],
        s_b_grid=s_b_grid,
        q_bank=float(rng.uniform(1.0, 4.0)),
        u_bus=float(rng.uniform(1.0, 2.5)),
        p_max=mem_p,
        beta=float(rng.uniform(0.7, 1.3)),
    )
    p_peak = core_sum + mem_p + p_static
    budget = SystemBudget(
        p_peak=p_peak, budget_fraction=budget_fraction, p_static=p_static
    )
    grid = np.linspace(0.55, 1.0, f_levels)
    grid[-1] = 1.0
    return Instance(
        cores=cores, memory=memory, budget=budget,
        core_freq_grid=tuple(float(g) for g in grid),
    )
