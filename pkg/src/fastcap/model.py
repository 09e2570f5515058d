"""Analytic performance and power model.

All times are in nanoseconds, all powers in watts, and core frequencies are
expressed as ratios of the maximum frequency (so a ratio of 1.0 is the
fastest setting and think times scale as ``z = z_min / ratio``).  Memory
speed is expressed through the bus transfer time ``s_b``: larger ``s_b``
means a slower bus.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import CounterError, DomainError, FitError

# Substitute mean think time for windows that produced no memory traffic.
# Large enough that the optimizer treats the core as nearly free to slow
# down, small enough to stay numerically well-posed.
SENTINEL_THINK_NS = 1.0e6

# Fitted power exponents are clipped into this band by default.
EXPONENT_CLIP_BAND = (0.5, 4.0)


@dataclass(frozen=True)
class CoreProfile:
    """Per-core workload and power parameters.

    ``z_min`` is the mean think time between memory requests when the core
    runs at maximum frequency; ``cache_time`` is the mean time spent in the
    cache hierarchy per request; ``p_max`` is the dynamic power draw at
    maximum frequency and ``alpha`` the frequency-scaling exponent.
    """

    core_id: int
    z_min: float
    cache_time: float
    p_max: float
    alpha: float

    def __post_init__(self):
        if self.z_min <= 0.0:
            raise DomainError(f"core {self.core_id}: z_min must be > 0")
        if self.cache_time < 0.0:
            raise DomainError(f"core {self.core_id}: cache_time must be >= 0")
        if self.p_max <= 0.0:
            raise DomainError(f"core {self.core_id}: p_max must be > 0")
        if not 1.0 <= self.alpha <= 4.0:
            raise DomainError(
                f"core {self.core_id}: alpha={self.alpha} outside [1, 4]"
            )


@dataclass(frozen=True)
class MemoryProfile:
    """Memory subsystem parameters.

    ``s_m`` is the mean bank service time, ``s_b_grid`` the ascending grid
    of available bus transfer times (fastest first), and ``q_bank`` /
    ``u_bus`` the mean bank and bus queue sizes observed by requests
    (self-inclusive, so both are >= 1).  ``p_max`` and ``beta`` describe the
    dynamic power of the memory subsystem at the fastest bus setting.
    """

    s_m: float
    s_b_min: float
    s_b_grid: tuple[float, ...]
    q_bank: float
    u_bus: float
    p_max: float
    beta: float

    def __post_init__(self):
        if self.s_m < 0.0:
            raise DomainError("s_m must be >= 0")
        if self.s_b_min <= 0.0:
            raise DomainError("s_b_min must be > 0")
        if not self.s_b_grid:
            raise DomainError("s_b_grid must be non-empty")
        if self.s_b_grid[0] != self.s_b_min:
            raise DomainError("s_b_grid[0] must equal s_b_min")
        if any(b <= a for a, b in zip(self.s_b_grid, self.s_b_grid[1:])):
            raise DomainError("s_b_grid must be strictly ascending")
        if self.q_bank < 1.0 or self.u_bus < 1.0:
            raise DomainError("q_bank and u_bus are self-inclusive, so >= 1")
        if self.p_max <= 0.0:
            raise DomainError("memory p_max must be > 0")
        if not 0.5 <= self.beta <= 2.0:
            raise DomainError(f"beta={self.beta} outside [0.5, 2]")


@dataclass(frozen=True)
class SystemBudget:
    """Peak power, budget fraction, and static (unmanaged) power."""

    p_peak: float
    budget_fraction: float
    p_static: float

    def __post_init__(self):
        if self.p_peak <= 0.0:
            raise DomainError("p_peak must be > 0")
        if not 0.0 < self.budget_fraction <= 1.0:
            raise DomainError(
                f"budget_fraction={self.budget_fraction} outside (0, 1]"
            )
        if self.p_static < 0.0:
            raise DomainError("p_static must be >= 0")
        # p_static >= budget_w is permitted at construction: it is a
        # feasibility question, reported by the solver's feasibility check.

    @property
    def budget_w(self) -> float:
        return self.budget_fraction * self.p_peak

    @property
    def static_fits(self) -> bool:
        return self.p_static < self.budget_w


@dataclass(frozen=True)
class Instance:
    """One optimization problem: cores, memory, budget topology and grids."""

    cores: tuple[CoreProfile, ...]
    memory: MemoryProfile
    budget: SystemBudget
    core_freq_grid: tuple[float, ...]

    def __post_init__(self):
        if len(self.cores) < 1:
            raise DomainError("instance needs at least one core")
        grid = self.core_freq_grid
        if not grid:
            raise DomainError("core_freq_grid must be non-empty")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise DomainError("core_freq_grid must be strictly ascending")
        if grid[0] <= 0.0 or grid[-1] > 1.0:
            raise DomainError("core frequency ratios must lie in (0, 1]")
        if grid[-1] != 1.0:
            raise DomainError("core_freq_grid must contain the ratio 1.0")

    @property
    def n_cores(self) -> int:
        return len(self.cores)


@dataclass(frozen=True)
class PowerFitSample:
    """One (frequency ratio, measured power) observation."""

    freq_ratio: float
    power_w: float

    def __post_init__(self):
        if not 0.0 < self.freq_ratio <= 1.0:
            raise DomainError(f"freq_ratio={self.freq_ratio} outside (0, 1]")
        if self.power_w <= 0.0:
            raise FitError(f"power_w={self.power_w} must be > 0")


@dataclass(frozen=True)
class PowerFit:
    """Result of fitting ``p = p_max * ratio**exponent``."""

    p_max: float
    exponent: float
    clipped: bool = False


@dataclass(frozen=True)
class FrequencyPlan:
    """A solved operating point, both continuous and grid-quantized.

    ``think_times`` holds the continuous per-core think times; the
    ``core_freq_idx`` / ``mem_freq_idx`` fields are the quantized grid
    choices.  ``clamped_cores`` lists cores that sit at maximum frequency
    because even that cannot reach the uniform degradation target (their
    fairness constraint is slack).
    """

    d_value: float
    think_times: tuple[float, ...]
    s_b: float
    mem_freq_idx: int
    power_continuous: float
    core_freq_idx: tuple[int, ...] = ()
    power_quantized: float = float("nan")
    clamped_cores: tuple[int, ...] = ()


def response_time(q_bank: float, u_bus: float, s_m: float, s_b: float) -> float:
    """Mean memory response time for a request.

    An arriving request finds ``q_bank`` requests at the bank (itself
    included); each occupies the bank for its service time plus the time
    the bus takes to drain the ``u_bus`` transfers queued at departure.
    """
    if q_bank < 1.0 or u_bus < 1.0:
        raise DomainError("q_bank and u_bus must be >= 1")
    if s_m < 0.0:
        raise DomainError("s_m must be >= 0")
    if s_b <= 0.0:
        raise DomainError("s_b must be > 0")
    return q_bank * (s_m + u_bus * s_b)


def turnaround(z: float, cache_time: float, resp: float) -> float:
    """Total time per memory access: think + cache + memory response."""
    return z + cache_time + resp


def degradation_ratio(
    core: CoreProfile, z: float, memory: MemoryProfile, s_b: float
) -> float:
    """Turnaround at (z, s_b) relative to the all-max baseline (>= 1)."""
    if z < core.z_min:
        raise DomainError(
            f"core {core.core_id}: z={z} below minimum think time {core.z_min}"
        )
    if s_b < memory.s_b_min:
        raise DomainError(f"s_b={s_b} below minimum transfer time")
    r_now = response_time(memory.q_bank, memory.u_bus, memory.s_m, s_b)
    r_base = response_time(memory.q_bank, memory.u_bus, memory.s_m, memory.s_b_min)
    return turnaround(z, core.cache_time, r_now) / turnaround(
        core.z_min, core.cache_time, r_base
    )


def core_dynamic_power(core: CoreProfile, z: float) -> float:
    """Dynamic power of a core throttled to think time ``z``.

    Slowing the core stretches think time proportionally, so the frequency
    ratio is ``z_min / z`` and power scales with its ``alpha`` power.
    """
    if z < core.z_min:
        raise DomainError(
            f"core {core.core_id}: z={z} below minimum think time {core.z_min}"
        )
    return core.p_max * (core.z_min / z) ** core.alpha


def memory_dynamic_power(memory: MemoryProfile, s_b: float) -> float:
    """Dynamic power of the memory subsystem at bus transfer time ``s_b``."""
    if s_b < memory.s_b_min:
        raise DomainError(f"s_b={s_b} below minimum transfer time")
    return memory.p_max * (memory.s_b_min / s_b) ** memory.beta


def total_power(instance, z: Sequence[float], s_b: float) -> float:
    """Full-system power: all cores + memory + static components."""
    cores = instance.cores
    if len(z) != len(cores):
        raise DomainError(f"expected {len(cores)} think times, got {len(z)}")
    p = sum(core_dynamic_power(c, zi) for c, zi in zip(cores, z))
    return p + memory_dynamic_power(instance.memory, s_b) + instance.budget.p_static


def fit_power_exponent(
    samples: Sequence[PowerFitSample],
    clip_band: tuple[float, float] = EXPONENT_CLIP_BAND,
) -> PowerFit:
    """Fit ``p = p_max * ratio**exponent`` to measured samples.

    Two samples pin the curve exactly; three or more are fit by least
    squares in log space.  Exponents ending up outside ``clip_band`` are
    clipped and flagged, with ``p_max`` refit for the clipped exponent.

    Raises ``FitError`` when fewer than two distinct ratios are present or
    any power is non-positive (non-positive powers already fail at sample
    construction, but sequences of raw tuples are accepted too).
    """
    pts = []
    for s in samples:
        if isinstance(s, PowerFitSample):
            pts.append((s.freq_ratio, s.power_w))
        else:
            r, p = s
            pts.append((float(r), float(p)))
    if any(p <= 0.0 for _, p in pts):
        raise FitError("power samples must be positive")
    if any(not 0.0 < r <= 1.0 for r, _ in pts):
        raise DomainError("freq_ratio samples must lie in (0, 1]")
    distinct = sorted({r for r, _ in pts})
    if len(distinct) < 2:
        raise FitError(
            f"need >= 2 distinct frequency ratios, got {len(distinct)}"
        )

    log_r = np.log([r for r, _ in pts])
    log_p = np.log([p for _, p in pts])
    if len(pts) == 2:
        exponent = (log_p[0] - log_p[1]) / (log_r[0] - log_r[1])
    else:
        a = np.column_stack([log_r, np.ones_like(log_r)])
        (exponent, _), *_ = np.linalg.lstsq(a, log_p, rcond=None)
        exponent = float(exponent)

    lo, hi = clip_band
    clipped = not lo <= exponent <= hi
    if clipped:
        exponent = min(max(exponent, lo), hi)
    # Optimal intercept given the (possibly clipped) exponent.
    p_max = float(np.exp(np.mean(log_p - exponent * log_r)))
    return PowerFit(p_max=p_max, exponent=float(exponent), clipped=clipped)


def min_think_time(
    tpi: float, tic: float, tlm: float, prof_freq_ratio: float
) -> float:
    """Mean think time at maximum frequency, derived from counters.

    ``tpi`` is the measured time per instruction while executing, ``tic``
    the instruction count, and ``tlm`` the number of last-level misses in
    the window.  ``tpi * tic / tlm`` is the measured think time per miss at
    the profiling frequency; multiplying by the profiling frequency ratio
    rescales it to the maximum frequency (think time is shortest there).
    """
    if tlm == 0:
        raise CounterError("window produced no misses; substitute sentinel")
    if tlm < 0 or tic < tlm:
        raise DomainError("counters require tic >= tlm >= 0")
    if tpi <= 0.0:
        raise DomainError("tpi must be > 0")
    if not 0.0 < prof_freq_ratio <= 1.0:
        raise DomainError("prof_freq_ratio must lie in (0, 1]")
    return tpi * (tic / tlm) * prof_freq_ratio


def s_b_from_frequency(transfer_cycles: float, bus_freq_hz: float) -> float:
    """Bus transfer time in ns for a line transfer at the given frequency."""
    if transfer_cycles <= 0 or bus_freq_hz <= 0:
        raise DomainError("transfer_cycles and bus_freq_hz must be > 0")
    return transfer_cycles / bus_freq_hz * 1e9


def peak_power(instance) -> float:
    """System power with every component at its fastest setting."""
    z_min = [c.z_min for c in instance.cores]
    return total_power(instance, z_min, instance.memory.s_b_min)
