"""Baseline capping policies for head-to-head comparison.

Each policy returns a discrete frequency assignment that respects the
power budget, plus a ``d_equivalent`` (reciprocal of the worst-core
degradation) so results compare directly against the fairness optimizer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .capper import QuantizeMode, conditional_solve, quantize
from .errors import DomainError, EnumerationTooLargeError, InfeasibleError
from .model import FrequencyPlan, Instance, memory_dynamic_power, response_time

DEFAULT_ENUMERATION_CAP = 2_000_000


@dataclass(frozen=True)
class ThroughputWeights:
    """Per-core throughput weights for the MaxBIPS objective.

    Instructions between misses scale with the think time at maximum
    frequency, so the default weight is z_min times the top grid ratio.
    """

    per_core: tuple[float, ...]

    def __post_init__(self):
        if any(w <= 0.0 for w in self.per_core):
            raise DomainError("throughput weights must be > 0")

    @classmethod
    def from_instance(cls, instance: Instance) -> "ThroughputWeights":
        top = instance.core_freq_grid[-1]
        return cls(per_core=tuple(c.z_min * top for c in instance.cores))


@dataclass(frozen=True)
class PolicyResult:
    policy_name: str
    core_freq_idx: tuple[int, ...]
    mem_freq_idx: int
    d_equivalent: float
    throughput_score: float
    power: float


def _tables(instance: Instance):
    """Per-core arrays plus the (N, F) power and degradation ingredients."""
    cores = instance.cores
    z_min = np.array([c.z_min for c in cores])
    cache = np.array([c.cache_time for c in cores])
    p_max = np.array([c.p_max for c in cores])
    alpha = np.array([c.alpha for c in cores])
    grid = np.asarray(instance.core_freq_grid)
    power_tab = p_max[:, None] * grid[None, :] ** alpha[:, None]
    return z_min, cache, p_max, alpha, grid, power_tab


def _resp(instance: Instance, s_b: float) -> float:
    mem = instance.memory
    return response_time(mem.q_bank, mem.u_bus, mem.s_m, s_b)


def assignment_degradations(
    instance: Instance, core_freq_idx, mem_freq_idx: int
) -> np.ndarray:
    """Per-core turnaround degradation of a discrete assignment."""
    z_min, cache, _, _, grid, _ = _tables(instance)
    s_b = instance.memory.s_b_grid[mem_freq_idx]
    r_base = _resp(instance, instance.memory.s_b_min)
    r_now = _resp(instance, s_b)
    ratios = grid[np.asarray(core_freq_idx, dtype=int)]
    return (z_min / ratios + cache + r_now) / (z_min + cache + r_base)


def assignment_power(
    instance: Instance, core_freq_idx, mem_freq_idx: int
) -> float:
    """Total power of a discrete assignment."""
    _, _, _, _, _, power_tab = _tables(instance)
    idx = np.asarray(core_freq_idx, dtype=int)
    s_b = instance.memory.s_b_grid[mem_freq_idx]
    return float(
        power_tab[np.arange(len(idx)), idx].sum()
        + memory_dynamic_power(instance.memory, s_b)
        + instance.budget.p_static
    )


def _score(instance, core_freq_idx, mem_freq_idx, weights) -> float:
    z_min, cache, _, _, grid, _ = _tables(instance)
    idx = np.asarray(core_freq_idx, dtype=int)
    s_b = instance.memory.s_b_grid[mem_freq_idx]
    r_now = _resp(instance, s_b)
    w = np.asarray(weights.per_core)
    return float(np.sum(w / (z_min / grid[idx] + cache + r_now)))


def _result(
    instance: Instance,
    name: str,
    core_freq_idx,
    mem_freq_idx: int,
    weights: ThroughputWeights | None = None,
) -> PolicyResult:
    if weights is None:
        weights = ThroughputWeights.from_instance(instance)
    deg = assignment_degradations(instance, core_freq_idx, mem_freq_idx)
    return PolicyResult(
        policy_name=name,
        core_freq_idx=tuple(int(i) for i in core_freq_idx),
        mem_freq_idx=int(mem_freq_idx),
        d_equivalent=float(1.0 / deg.max()),
        throughput_score=_score(instance, core_freq_idx, mem_freq_idx, weights),
        power=assignment_power(instance, core_freq_idx, mem_freq_idx),
    )


def solve_cpu_only(instance: Instance) -> PolicyResult:
    """Core DVFS only; memory pinned to its fastest grid point.

    Fast memory is expensive, so this can be infeasible on instances the
    full optimizer handles by slowing the bus; that is a reportable
    outcome of the comparison, not an error in the caller's setup.
    """
    s_b = instance.memory.s_b_grid[0]
    sol = conditional_solve(instance, s_b)
    continuous = FrequencyPlan(
        d_value=sol.d_value,
        think_times=sol.think_times,
        s_b=s_b,
        mem_freq_idx=0,
        power_continuous=sol.power,
        clamped_cores=sol.clamped_cores,
    )
    plan = quantize(instance, continuous, QuantizeMode.NEAREST_THEN_REPAIR_DOWN)
    budget = instance.budget.budget_w
    if plan.power_quantized > budget:
        # Repair bottomed out: no discrete setting fits at fast memory.
        raise InfeasibleError(plan.power_quantized, budget, "cpu-only at min s_b")
    return _result(instance, "cpu_only", plan.core_freq_idx, 0)


def solve_eql_pwr(instance: Instance) -> PolicyResult:
    """Equal dynamic-power share per core at each memory point.

    A core takes the highest grid frequency it can afford within its
    share; unspent share is not redistributed.  The memory point with
    the best worst-core degradation wins (ties toward faster memory).
    """
    z_min, cache, p_max, _, grid, power_tab = _tables(instance)
    n = len(z_min)
    budget = instance.budget.budget_w
    p_static = instance.budget.p_static
    r_base = _resp(instance, instance.memory.s_b_min)

    best: tuple[float, int, np.ndarray] | None = None
    for m, s_b in enumerate(instance.memory.s_b_grid):
        share = (budget - memory_dynamic_power(instance.memory, s_b) - p_static) / n
        if share <= 0.0:
            continue
        # Rows of power_tab ascend with frequency, so the affordable
        # index is one left of the first entry above the share.
        idx = (
            np.array([np.searchsorted(row, share, side="right") for row in power_tab])
            - 1
        )
        if np.any(idx < 0):
            continue  # some core cannot afford even the lowest step
        r_now = _resp(instance, s_b)
        deg = (z_min / grid[idx] + cache + r_now) / (z_min + cache + r_base)
        d = float(1.0 / deg.max())
        if best is None or d > best[0]:
            best = (d, m, idx)
    if best is None:
        floor = (
            memory_dynamic_power(instance.memory, instance.memory.s_b_grid[-1])
            + p_static
            + n * float(power_tab[:, 0].max())
        )
        raise InfeasibleError(floor, budget, "equal shares fit at no memory point")
    _, m, idx = best
    return _result(instance, "eql_pwr", idx, m)


def solve_eql_freq(instance: Instance) -> PolicyResult:
    """One shared core frequency; scan all (frequency, memory) pairs.

    Degradation falls strictly as the shared frequency rises, so within
    a memory point the best feasible pair is unique; across memory
    points ties resolve toward faster memory.
    """
    z_min, cache, _, _, grid, power_tab = _tables(instance)
    budget = instance.budget.budget_w
    p_static = instance.budget.p_static
    r_base = _resp(instance, instance.memory.s_b_min)
    core_total = power_tab.sum(axis=0)  # total core power per shared step

    best: tuple[float, int, int] | None = None
    for m, s_b in enumerate(instance.memory.s_b_grid):
        avail = budget - memory_dynamic_power(instance.memory, s_b) - p_static
        feas = np.flatnonzero(core_total <= avail)
        if feas.size == 0:
            continue
        f = int(feas[-1])  # highest affordable shared frequency
        r_now = _resp(instance, s_b)
        deg = (z_min / grid[f] + cache + r_now) / (z_min + cache + r_base)
        d = float(1.0 / deg.max())
        if best is None or d > best[0]:
            best = (d, m, f)
    if best is None:
        floor = (
            memory_dynamic_power(instance.memory, instance.memory.s_b_grid[-1])
            + p_static
            + float(core_total[0])
        )
        raise InfeasibleError(floor, budget, "no shared frequency fits")
    _, m, f = best
    return _result(instance, "eql_freq", np.full(len(z_min), f, dtype=int), m)


def solve_maxbips(
    instance: Instance,
    weights: ThroughputWeights | None = None,
    enumeration_cap: int = DEFAULT_ENUMERATION_CAP,
    chunk_size: int = 65536,
) -> PolicyResult:
    """Exhaustively maximize weighted throughput over all assignments.

    The winner is the feasible assignment with the highest score; exact
    score ties resolve toward lower power, then toward the earlier
    assignment in (memory index, core digits) order.  Chunked evaluation
    is a memory bound only; results do not depend on ``chunk_size``.
    """
    if weights is None:
        weights = ThroughputWeights.from_instance(instance)
    if len(weights.per_core) != instance.n_cores:
        raise DomainError("one weight per core required")
    z_min, cache, _, _, grid, power_tab = _tables(instance)
    n = instance.n_cores
    f_count = len(grid)
    m_count = len(instance.memory.s_b_grid)
    combos = f_count**n
    total = combos * m_count
    if total > enumeration_cap:
        raise EnumerationTooLargeError(total, enumeration_cap)

    budget = instance.budget.budget_w
    p_static = instance.budget.p_static
    w = np.asarray(weights.per_core)
    shape = (f_count,) * n

    best: tuple[float, float, int, int] | None = None  # score, power, m, flat
    for m, s_b in enumerate(instance.memory.s_b_grid):
        overhead = memory_dynamic_power(instance.memory, s_b) + p_static
        avail = budget - overhead
        if avail < float(power_tab[:, 0].sum()):
            continue
        r_now = _resp(instance, s_b)
        score_tab = w[:, None] / (z_min[:, None] / grid[None, :] + cache[:, None] + r_now)
        for start in range(0, combos, chunk_size):
            flat = np.arange(start, min(start + chunk_size, combos))
            digits = np.unravel_index(flat, shape)
            power = sum(power_tab[i][digits[i]] for i in range(n))
            score = sum(score_tab[i][digits[i]] for i in range(n))
            feasible = power <= avail
            if not np.any(feasible):
                continue
            score = np.where(feasible, score, -np.inf)
            s_max = float(score.max())
            cand = np.flatnonzero(score == s_max)
            j = int(cand[np.argmin(power[cand])])
            key = (s_max, float(power[j]) + overhead, m, int(flat[j]))
            if (
                best is None
                or key[0] > best[0]
                or (key[0] == best[0] and key[1] < best[1])
            ):
                best = key
    if best is None:
        floor = (
            memory_dynamic_power(instance.memory, instance.memory.s_b_grid[-1])
            + p_static
            + float(power_tab[:, 0].sum())
        )
        raise InfeasibleError(floor, budget, "no assignment fits")
    _, _, m, flat = best
    idx = np.array(np.unravel_index(flat, shape))
    return _result(instance, "maxbips", idx, m, weights)
