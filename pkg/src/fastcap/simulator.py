"""Closed-network discrete-event simulator and epoch control loop.

Each core cycles: think, queue at a memory bank (FCFS, one request in
service), then wait for the shared bus, which transfers completed
requests in bank-completion order.  A bank is blocked from starting its
next request until its finished request leaves on the bus.  Queue
statistics are sampled the way the analytic model defines them: bank
occupancy at arrivals (self-inclusive) and bus backlog at bank-service
completions (self-inclusive).

All times are nanoseconds.  A run is a pure function of its seed.
"""

from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass, replace
from enum import Enum
from typing import Sequence

import numpy as np

from .capper import ControllerAccessModel, QuantizeMode, fastcap_solve
from .errors import CounterError, DomainError, InfeasibleError
from .model import (
    SENTINEL_THINK_NS,
    CoreProfile,
    Instance,
    MemoryProfile,
    fit_power_exponent,
    memory_dynamic_power,
    min_think_time,
)
from .policies import assignment_degradations

# Synthetic instruction rate while thinking, instructions per ns at the
# profiled frequency.  Cancels out of z_min recovery; only the counter
# magnitudes depend on it.
INSTRUCTIONS_PER_NS = 4.0

_THINK_END, _BANK_DONE, _BUS_DONE = 0, 1, 2


class ThinkDistribution(Enum):
    DETERMINISTIC = "deterministic"
    EXPONENTIAL = "exponential"


class BankService(Enum):
    DETERMINISTIC = "deterministic"
    EXPONENTIAL = "exponential"


@dataclass(frozen=True)
class SimConfig:
    """Network shape and stochastic choices for one simulation."""

    n_cores: int
    bank_count: int = 4
    controller_count: int = 1
    bank_to_controller: tuple[int, ...] | None = None
    think_distribution: ThinkDistribution = ThinkDistribution.EXPONENTIAL
    bank_select_weights: tuple[float, ...] | None = None
    bank_service: BankService = BankService.DETERMINISTIC
    s_m: float = 20.0
    rng_seed: int = 0
    warmup_ns: float | None = None

    def __post_init__(self):
        if self.n_cores < 1:
            raise DomainError("n_cores must be >= 1")
        if self.bank_count < 1:
            raise DomainError("bank_count must be >= 1")
        if self.controller_count < 1:
            raise DomainError("controller_count must be >= 1")
        if self.controller_count > self.bank_count:
            raise DomainError("more controllers than banks")
        if self.bank_to_controller is not None:
            if len(self.bank_to_controller) != self.bank_count:
                raise DomainError("bank_to_controller must map every bank")
            if any(
                not 0 <= c < self.controller_count
                for c in self.bank_to_controller
            ):
                raise DomainError("bank_to_controller index out of range")
        if self.bank_select_weights is not None:
            w = self.bank_select_weights
            if len(w) != self.bank_count:
                raise DomainError("one bank weight per bank required")
            if any(x < 0.0 for x in w):
                raise DomainError("bank weights must be >= 0")
            if abs(sum(w) - 1.0) > 1e-9:
                raise DomainError("bank weights must sum to 1")
        if self.s_m < 0.0:
            raise DomainError("s_m must be >= 0")
        if self.warmup_ns is not None and self.warmup_ns < 0.0:
            raise DomainError("warmup must be >= 0")

    def controller_of(self, bank: int) -> int:
        if self.bank_to_controller is not None:
            return self.bank_to_controller[bank]
        return bank * self.controller_count // self.bank_count


@dataclass(frozen=True)
class ControllerCounters:
    q_bank: float
    u_bus: float
    s_m_measured: float
    completions: int


@dataclass(frozen=True)
class EpochCounters:
    """Measured statistics over one half-open window of simulated time.

    ``tpi``/``tic``/``tlm`` follow the hardware-counter recovery path:
    think time per miss is tpi * tic / tlm.  Queue statistics are NaN
    when the window saw no samples.
    """

    window_ns: float
    tpi: tuple[float, ...]
    tic: tuple[float, ...]
    tlm: tuple[int, ...]
    turnaround: tuple[float, ...]
    q_bank: float
    u_bus: float
    s_m_measured: float
    r_measured: float
    bus_utilization: float
    per_controller: tuple[ControllerCounters, ...]
    access_counts: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if any(t > 0 for t in self.tlm):
            if not (math.isnan(self.q_bank) or self.q_bank >= 1.0):
                raise DomainError("arrival-sampled queue must include self")
            if not (math.isnan(self.u_bus) or self.u_bus >= 1.0):
                raise DomainError("departure-sampled bus queue must include self")


class _Accum:
    """Cumulative counters; windows are diffs of two snapshots.

    Plain Python lists: these see several scalar updates per event, where
    numpy element access is an order of magnitude slower.
    """

    __slots__ = (
        "think_total", "tlm", "turn_sum", "turn_n", "access",
        "q_sum", "q_n", "u_sum", "u_n", "serv_sum", "serv_n",
        "resp_sum", "resp_n", "bus_busy",
    )

    def __init__(self, n_cores: int, n_ctl: int):
        self.think_total = [0.0] * n_cores
        self.tlm = [0] * n_cores
        self.turn_sum = [0.0] * n_cores
        self.turn_n = [0] * n_cores
        self.access = [[0] * n_ctl for _ in range(n_cores)]
        self.q_sum = [0.0] * n_ctl
        self.q_n = [0] * n_ctl
        self.u_sum = [0.0] * n_ctl
        self.u_n = [0] * n_ctl
        self.serv_sum = [0.0] * n_ctl
        self.serv_n = [0] * n_ctl
        self.resp_sum = 0.0
        self.resp_n = 0
        self.bus_busy = 0.0

    def copy(self) -> "_Accum":
        out = _Accum(len(self.think_total), len(self.q_sum))
        for name in self.__slots__:
            val = getattr(self, name)
            if name == "access":
                val = [row[:] for row in val]
            elif isinstance(val, list):
                val = val[:]
            setattr(out, name, val)
        return out


class _Engine:
    """Event-driven core/bank/bus network with transfer blocking."""

    def __init__(
        self,
        config: SimConfig,
        think_means: Sequence[float],
        s_b: float,
        rng: np.random.Generator,
    ):
        if len(think_means) != config.n_cores:
            raise DomainError("one think mean per core required")
        if any(z < 0.0 for z in think_means):
            raise DomainError("think means must be >= 0")
        if s_b <= 0.0:
            raise DomainError("bus transfer time must be > 0")
        self.cfg = config
        self.think_means = list(think_means)
        self.s_b = s_b
        self.rng = rng
        self.t = 0.0
        self._heap: list[tuple] = []
        self._seq = 0
        n, b = config.n_cores, config.bank_count
        k = config.controller_count
        self.n_ctl = k
        self._ctl_of = [config.controller_of(i) for i in range(b)]
        if config.bank_select_weights is not None:
            self._bank_cdf = np.cumsum(config.bank_select_weights)
        else:
            self._bank_cdf = None
        self._exp_pool: list[float] = []
        self._exp_i = 0
        self._uni_pool: list[float] = []
        self._uni_i = 0
        # Core state: 0 thinking, 1 at bank, 2 on/awaiting bus.
        self._core_state = [0] * n
        self._state_tally = [n, 0, 0]
        self._events_seen = 0
        self._think_dur = [0.0] * n
        # Bank state: 0 idle, 1 serving, 2 blocked on the bus.
        self._bank_state = [0] * b
        self._bank_queue: list[deque] = [deque() for _ in range(b)]
        self._bank_current: list[tuple | None] = [None] * b
        self._residents = [0] * b
        # Bus state per controller; grants must follow enqueue order.
        self._bus_current: list[tuple | None] = [None] * k
        self._bus_fifo: list[deque] = [deque() for _ in range(k)]
        self._bus_enq_seq = [0] * k
        self._bus_next_grant = [0] * k
        self.accum = _Accum(n, k)
        for core in range(n):
            self._start_think(core)

    # -- draws (single generator, consumed in event order, batched) --

    _POOL = 4096

    def _next_exp(self) -> float:
        i = self._exp_i
        pool = self._exp_pool
        if i == len(pool):
            pool = self._exp_pool = self.rng.standard_exponential(self._POOL).tolist()
            i = 0
        self._exp_i = i + 1
        return pool[i]

    def _next_uniform(self) -> float:
        i = self._uni_i
        pool = self._uni_pool
        if i == len(pool):
            pool = self._uni_pool = self.rng.random(self._POOL).tolist()
            i = 0
        self._uni_i = i + 1
        return pool[i]

    def _draw_think(self, core: int) -> float:
        mean = self.think_means[core]
        if self.cfg.think_distribution is ThinkDistribution.DETERMINISTIC:
            return mean
        return mean * self._next_exp() if mean > 0.0 else 0.0

    def _draw_service(self) -> float:
        if self.cfg.bank_service is BankService.DETERMINISTIC:
            return self.cfg.s_m
        return self.cfg.s_m * self._next_exp() if self.cfg.s_m > 0.0 else 0.0

    def _pick_bank(self) -> int:
        b = self.cfg.bank_count
        if b == 1:
            return 0
        if self._bank_cdf is None:
            return int(self._next_uniform() * b)
        return int(np.searchsorted(self._bank_cdf, self._next_uniform(), side="right"))

    # -- scheduling --

    def _push(self, t: float, kind: int, arg: int):
        heapq.heappush(self._heap, (t, self._seq, kind, arg))
        self._seq += 1

    def _set_state(self, core: int, state: int):
        tally = self._state_tally
        tally[self._core_state[core]] -= 1
        self._core_state[core] = state
        tally[state] += 1

    def _start_think(self, core: int):
        dur = self._draw_think(core)
        self._think_dur[core] = dur
        self._set_state(core, 0)
        self._push(self.t + dur, _THINK_END, core)

    def _start_service(self, bank: int):
        assert self._bank_state[bank] == 0, "bank must be idle to start service"
        core, arrival = self._bank_queue[bank].popleft()
        dur = self._draw_service()
        self._bank_current[bank] = (core, arrival, dur)
        self._bank_state[bank] = 1
        self._push(self.t + dur, _BANK_DONE, bank)

    def _grant_bus(self, ctl: int):
        assert self._bus_current[ctl] is None
        bank, core, arrival, enq = self._bus_fifo[ctl].popleft()
        assert enq == self._bus_next_grant[ctl], "bus grants must be FCFS"
        self._bus_next_grant[ctl] += 1
        self._bus_current[ctl] = (bank, core, arrival, self.t)
        self._push(self.t + self.s_b, _BUS_DONE, ctl)

    # -- event handlers --

    def _on_think_end(self, core: int):
        acc = self.accum
        acc.think_total[core] += self._think_dur[core]
        bank = self._pick_bank()
        ctl = self._ctl_of[bank]
        acc.tlm[core] += 1
        acc.access[core][ctl] += 1
        self._set_state(core, 1)
        self._residents[bank] += 1
        acc.q_sum[ctl] += self._residents[bank]
        acc.q_n[ctl] += 1
        self._bank_queue[bank].append((core, self.t))
        if self._bank_state[bank] == 0:
            self._start_service(bank)

    def _on_bank_done(self, bank: int):
        assert self._bank_state[bank] == 1, "completion from a non-serving bank"
        core, arrival, dur = self._bank_current[bank]
        ctl = self._ctl_of[bank]
        acc = self.accum
        acc.serv_sum[ctl] += dur
        acc.serv_n[ctl] += 1
        # Transfer blocking: the bank parks until the bus takes this one.
        self._bank_state[bank] = 2
        self._set_state(core, 2)
        backlog = 1 + (self._bus_current[ctl] is not None) + len(self._bus_fifo[ctl])
        acc.u_sum[ctl] += backlog
        acc.u_n[ctl] += 1
        self._bus_fifo[ctl].append((bank, core, arrival, self._bus_enq_seq[ctl]))
        self._bus_enq_seq[ctl] += 1
        if self._bus_current[ctl] is None:
            self._grant_bus(ctl)

    def _on_bus_done(self, ctl: int):
        bank, core, arrival, start = self._bus_current[ctl]
        self._bus_current[ctl] = None
        acc = self.accum
        acc.bus_busy += self.t - start
        acc.resp_sum += self.t - arrival
        acc.resp_n += 1
        acc.turn_sum[core] += self._think_dur[core] + (self.t - arrival)
        acc.turn_n[core] += 1
        self._residents[bank] -= 1
        # The bank may resume now that its transfer is off the bus.
        assert self._bank_state[bank] == 2
        self._bank_current[bank] = None
        if self._bank_queue[bank]:
            self._bank_state[bank] = 0
            self._start_service(bank)
        else:
            self._bank_state[bank] = 0
        if self._bus_fifo[ctl]:
            self._grant_bus(ctl)
        self._start_think(core)

    def _check_conservation(self):
        assert sum(self._state_tally) == self.cfg.n_cores, (
            "request population leaked"
        )
        self._events_seen += 1
        if self._events_seen % 4096 == 0:
            # Periodic deep recount guards against tally drift.
            counted = [self._core_state.count(s) for s in (0, 1, 2)]
            assert counted == self._state_tally, "state tally diverged"

    def run_until(self, t_end: float):
        """Process all events strictly before t_end (half-open window)."""
        heap = self._heap
        handlers = {
            _THINK_END: self._on_think_end,
            _BANK_DONE: self._on_bank_done,
            _BUS_DONE: self._on_bus_done,
        }
        while heap and heap[0][0] < t_end:
            t, _, kind, arg = heapq.heappop(heap)
            self.t = t
            handlers[kind](arg)
            self._check_conservation()
        self.t = t_end

    def pause(self, duration: float):
        """Stall the whole system: shift every pending event later."""
        if duration <= 0.0:
            return
        self._heap = [(t + duration, s, k, a) for (t, s, k, a) in self._heap]
        heapq.heapify(self._heap)

    def set_rates(self, think_means: Sequence[float], s_b: float):
        """New frequencies take effect for draws after this instant."""
        if len(think_means) != self.cfg.n_cores:
            raise DomainError("one think mean per core required")
        self.think_means = list(think_means)
        self.s_b = s_b


def _window_counters(
    before: _Accum, after: _Accum, window_ns: float
) -> EpochCounters:
    def ratio(num, den):
        return float(num / den) if den > 0 else float("nan")

    def diff(name):
        return [a - b for a, b in zip(getattr(after, name), getattr(before, name))]

    think = diff("think_total")
    tlm = diff("tlm")
    tic = [x * INSTRUCTIONS_PER_NS for x in think]
    tpi = [t / c if c > 0 else 0.0 for t, c in zip(think, tic)]
    turnaround = tuple(
        ratio(s, n) for s, n in zip(diff("turn_sum"), diff("turn_n"))
    )
    q_sum, q_n = diff("q_sum"), diff("q_n")
    u_sum, u_n = diff("u_sum"), diff("u_n")
    serv_sum, serv_n = diff("serv_sum"), diff("serv_n")
    per_ctl = tuple(
        ControllerCounters(
            q_bank=ratio(q_sum[k], q_n[k]),
            u_bus=ratio(u_sum[k], u_n[k]),
            s_m_measured=ratio(serv_sum[k], serv_n[k]),
            completions=int(serv_n[k]),
        )
        for k in range(len(q_sum))
    )
    return EpochCounters(
        window_ns=window_ns,
        tpi=tuple(tpi),
        tic=tuple(tic),
        tlm=tuple(int(x) for x in tlm),
        turnaround=turnaround,
        q_bank=ratio(sum(q_sum), sum(q_n)),
        u_bus=ratio(sum(u_sum), sum(u_n)),
        s_m_measured=ratio(sum(serv_sum), sum(serv_n)),
        r_measured=ratio(after.resp_sum - before.resp_sum, after.resp_n - before.resp_n),
        bus_utilization=float((after.bus_busy - before.bus_busy) / window_ns),
        per_controller=per_ctl,
        access_counts=tuple(
            tuple(int(a - b) for a, b in zip(ra, rb))
            for ra, rb in zip(after.access, before.access)
        ),
    )


def _default_warmup(config: SimConfig, z: Sequence[float], s_b: float) -> float:
    longest = max(z) if len(z) else 0.0
    return 10.0 * (longest + config.s_m + s_b)


def run_fixed(
    config: SimConfig, z: Sequence[float], s_b: float, duration_ns: float
) -> EpochCounters:
    """Simulate at fixed think means and bus speed; return window counters.

    ``z`` holds the per-core mean think times at the operating point
    under test (already scaled for core frequency).  The warmup prefix
    is excluded from the measurement window.
    """
    warmup = (
        config.warmup_ns
        if config.warmup_ns is not None
        else _default_warmup(config, z, s_b)
    )
    if duration_ns <= warmup:
        raise DomainError(
            f"duration {duration_ns}ns must exceed warmup {warmup}ns"
        )
    rng = np.random.default_rng(config.rng_seed)
    eng = _Engine(config, z, s_b, rng)
    eng.run_until(warmup)
    before = eng.accum.copy()
    eng.run_until(duration_ns)
    return _window_counters(before, eng.accum, duration_ns - warmup)


@dataclass(frozen=True)
class ApproxRow:
    """One response-time model check: measured vs reconstructed."""

    bus_utilization: float
    r_measured: float
    r_model: float
    rel_error: float


def approximation_report(
    grid: Sequence[tuple[SimConfig, Sequence[float], float, float]]
) -> list[ApproxRow]:
    """Feed measured Q, U, s_m back into the response-time formula.

    Each grid entry is (config, think means, s_b, duration).  The model
    reconstruction uses only quantities a controller could measure.
    """
    rows = []
    for config, z, s_b, duration in grid:
        c = run_fixed(config, z, s_b, duration)
        r_model = c.q_bank * (c.s_m_measured + c.u_bus * s_b)
        rows.append(
            ApproxRow(
                bus_utilization=c.bus_utilization,
                r_measured=c.r_measured,
                r_model=r_model,
                rel_error=abs(r_model - c.r_measured) / c.r_measured,
            )
        )
    return rows


@dataclass(frozen=True)
class ControllerConfig:
    """Epoch timing and solver options for the closed loop."""

    epoch_len_ns: float = 5e6
    profiling_len_ns: float = 3e5
    transition_overhead_ns: float = 0.0
    quantize_mode: QuantizeMode = QuantizeMode.NEAREST_THEN_REPAIR_DOWN
    refit_period_epochs: int = 1
    power_noise: float = 0.0
    surprise_threshold: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.profiling_len_ns < self.epoch_len_ns:
            raise DomainError("need 0 < profiling_len < epoch_len")
        if self.transition_overhead_ns < 0.0:
            raise DomainError("transition overhead must be >= 0")
        if self.refit_period_epochs < 1:
            raise DomainError("refit period must be >= 1 epochs")
        if self.power_noise < 0.0:
            raise DomainError("power noise must be >= 0")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    core_freq_idx: tuple[int, ...]
    mem_freq_idx: int
    d_value: float
    model_power_w: float
    true_power_w: float
    degradation: tuple[float, ...]
    counters: EpochCounters | None
    violation: bool


@dataclass(frozen=True)
class EpochTrace:
    baseline: EpochRecord
    epochs: tuple[EpochRecord, ...]
    budget_w: float
    mean_model_power_w: float
    mean_true_power_w: float
    worst_degradation: float
    avg_degradation: float
    violation_epochs: tuple[int, ...]


class _PowerTracker:
    """Rolling power-curve fit from the last three distinct settings."""

    def __init__(self, p_max_prior: float, exponent_prior: float, clip_band):
        self.history: list[tuple[float, float]] = []
        self.p_max = p_max_prior
        self.exponent = exponent_prior
        self.clip_band = clip_band

    def predict(self, ratio: float) -> float:
        return self.p_max * ratio**self.exponent

    def observe(self, ratio: float, power_w: float, surprise_threshold: float):
        predicted = self.predict(ratio)
        if predicted > 0 and abs(power_w - predicted) / predicted > surprise_threshold:
            # The workload changed under us; stale samples poison the fit.
            self.history.clear()
        self.history = [(r, p) for r, p in self.history if r != ratio]
        self.history.append((ratio, power_w))
        if len(self.history) > 3:
            self.history = self.history[-3:]

    def refit(self):
        distinct = {r for r, _ in self.history}
        if len(distinct) >= 2:
            fit = fit_power_exponent(self.history, clip_band=self.clip_band)
            self.p_max = fit.p_max
            self.exponent = fit.exponent
        elif len(self.history) == 1:
            # One point pins the level; keep the prior exponent.
            r, p = self.history[-1]
            self.p_max = p / r**self.exponent


def _true_power(cores, memory, p_static, grid, core_idx, s_b) -> float:
    total = p_static + memory_dynamic_power(memory, s_b)
    for core, f in zip(cores, core_idx):
        total += core.p_max * grid[f] ** core.alpha
    return total


def run_capped(
    template: Instance,
    config: SimConfig,
    ctrl: ControllerConfig,
    n_epochs: int,
    budget_fraction: float | None = None,
    phase_change: tuple[int, Sequence[CoreProfile]] | None = None,
) -> EpochTrace:
    """Closed control loop: profile, estimate, solve, apply, repeat.

    The template instance supplies ground truth (true think times and
    power curves) plus everything a deployed controller would know up
    front: cache times, frequency grids, the budget, and nameplate
    power.  Everything else is estimated from simulated counters.  A
    phase change swaps in new true core profiles at the given epoch.
    """
    if n_epochs < 1:
        raise DomainError("n_epochs must be >= 1")
    if len(template.cores) != config.n_cores:
        raise DomainError("template core count does not match sim config")
    budget = template.budget
    if budget_fraction is not None:
        budget = replace(budget, budget_fraction=budget_fraction)
    budget_w = budget.budget_w
    grid = template.core_freq_grid
    mem_t = template.memory
    n = config.n_cores
    top = len(grid) - 1

    true_cores = list(template.cores)
    rng = np.random.default_rng(config.rng_seed)

    trackers = [
        _PowerTracker(c.p_max, 3.0, (1.0, 4.0)) for c in template.cores
    ]
    mem_tracker = _PowerTracker(mem_t.p_max, 1.0, (0.5, 2.0))

    baseline_deg = tuple(1.0 for _ in range(n))
    baseline = EpochRecord(
        epoch=-1,
        core_freq_idx=(top,) * n,
        mem_freq_idx=0,
        d_value=1.0,
        model_power_w=_true_power(
            true_cores, mem_t, budget.p_static, grid, (top,) * n, mem_t.s_b_min
        ),
        true_power_w=_true_power(
            true_cores, mem_t, budget.p_static, grid, (top,) * n, mem_t.s_b_min
        ),
        degradation=baseline_deg,
        counters=None,
        violation=False,
    )

    applied_idx = [top] * n
    applied_m = 0
    est_q, est_u, est_s_m = mem_t.q_bank, mem_t.u_bus, mem_t.s_m

    def think_means():
        return [c.z_min / grid[f] for c, f in zip(true_cores, applied_idx)]

    eng = _Engine(config, think_means(), mem_t.s_b_grid[applied_m], rng)
    warmup = (
        config.warmup_ns
        if config.warmup_ns is not None
        else _default_warmup(config, think_means(), mem_t.s_b_grid[applied_m])
    )
    eng.run_until(warmup)
    t = warmup

    records: list[EpochRecord] = []
    for epoch in range(n_epochs):
        if phase_change is not None and epoch == phase_change[0]:
            swapped = list(phase_change[1])
            if len(swapped) != n:
                raise DomainError("phase change must supply one profile per core")
            true_cores = swapped
            eng.set_rates(think_means(), mem_t.s_b_grid[applied_m])

        # Profiling window at the currently applied frequencies.
        prof_idx = list(applied_idx)
        prof_m = applied_m
        before = eng.accum.copy()
        eng.run_until(t + ctrl.profiling_len_ns)
        counters = _window_counters(before, eng.accum, ctrl.profiling_len_ns)

        z_bar = []
        for i in range(n):
            try:
                z_bar.append(
                    min_think_time(
                        counters.tpi[i],
                        counters.tic[i],
                        counters.tlm[i],
                        grid[prof_idx[i]],
                    )
                )
            except (CounterError, DomainError):
                # No misses (or a degenerate window): treat the core as
                # compute-bound until real samples show up.
                z_bar.append(SENTINEL_THINK_NS)
        if not math.isnan(counters.q_bank):
            est_q = max(1.0, counters.q_bank)
        if not math.isnan(counters.u_bus):
            est_u = max(1.0, counters.u_bus)
        if not math.isnan(counters.s_m_measured):
            est_s_m = counters.s_m_measured

        est_cores = tuple(
            CoreProfile(
                core_id=i,
                z_min=z_bar[i],
                cache_time=template.cores[i].cache_time,
                p_max=trackers[i].p_max,
                alpha=min(max(trackers[i].exponent, 1.0), 4.0),
            )
            for i in range(n)
        )
        est_memory = MemoryProfile(
            s_m=est_s_m,
            s_b_min=mem_t.s_b_min,
            s_b_grid=mem_t.s_b_grid,
            q_bank=est_q,
            u_bus=est_u,
            p_max=mem_tracker.p_max,
            beta=min(max(mem_tracker.exponent, 0.5), 2.0),
        )
        est_instance = Instance(
            cores=est_cores, memory=est_memory, budget=budget,
            core_freq_grid=grid,
        )
        access_model = None
        if config.controller_count > 1:
            counts = np.asarray(counters.access_counts, dtype=float)
            rows = np.where(
                counts.sum(axis=1, keepdims=True) > 0,
                counts / np.maximum(counts.sum(axis=1, keepdims=True), 1e-300),
                1.0 / config.controller_count,
            )
            per_ctl = tuple(
                (
                    max(1.0, cc.q_bank) if not math.isnan(cc.q_bank) else est_q,
                    max(1.0, cc.u_bus) if not math.isnan(cc.u_bus) else est_u,
                    cc.s_m_measured if not math.isnan(cc.s_m_measured) else est_s_m,
                )
                for cc in counters.per_controller
            )
            access_model = ControllerAccessModel(
                per_controller=per_ctl,
                access_prob=tuple(tuple(float(p) for p in row) for row in rows),
            )

        try:
            plan = fastcap_solve(
                est_instance,
                access_model=access_model,
                quantize_mode=ctrl.quantize_mode,
            )
        except InfeasibleError as err:
            raise InfeasibleError(
                err.floor_w, err.budget_w, f"epoch {epoch}"
            ) from err

        applied_idx = list(plan.core_freq_idx)
        applied_m = plan.mem_freq_idx
        eng.set_rates(think_means(), mem_t.s_b_grid[applied_m])
        if ctrl.transition_overhead_ns > 0.0:
            eng.pause(ctrl.transition_overhead_ns)
        eng.run_until(t + ctrl.epoch_len_ns)
        t += ctrl.epoch_len_ns

        # Ground-truth power, time-weighted across the epoch's two phases.
        p_prof = _true_power(
            true_cores, mem_t, budget.p_static, grid, prof_idx,
            mem_t.s_b_grid[prof_m],
        )
        p_apply = _true_power(
            true_cores, mem_t, budget.p_static, grid, applied_idx,
            mem_t.s_b_grid[applied_m],
        )
        frac = ctrl.profiling_len_ns / ctrl.epoch_len_ns
        true_power = frac * p_prof + (1.0 - frac) * p_apply

        # Power telemetry feeding the next refit, optionally noised.
        for i, core in enumerate(true_cores):
            measured = core.p_max * grid[applied_idx[i]] ** core.alpha
            if ctrl.power_noise > 0.0:
                measured *= 1.0 + ctrl.power_noise * float(rng.standard_normal())
                measured = max(measured, 1e-12)
            trackers[i].observe(
                grid[applied_idx[i]], measured, ctrl.surprise_threshold
            )
        mem_ratio = mem_t.s_b_min / mem_t.s_b_grid[applied_m]
        mem_measured = mem_t.p_max * mem_ratio**mem_t.beta
        if ctrl.power_noise > 0.0:
            mem_measured *= 1.0 + ctrl.power_noise * float(rng.standard_normal())
            mem_measured = max(mem_measured, 1e-12)
        mem_tracker.observe(mem_ratio, mem_measured, ctrl.surprise_threshold)
        if (epoch + 1) % ctrl.refit_period_epochs == 0:
            for tr in trackers:
                tr.refit()
            mem_tracker.refit()

        deg = assignment_degradations(est_instance, applied_idx, applied_m)
        records.append(
            EpochRecord(
                epoch=epoch,
                core_freq_idx=tuple(applied_idx),
                mem_freq_idx=applied_m,
                d_value=plan.d_value,
                model_power_w=float(plan.power_quantized),
                true_power_w=true_power,
                degradation=tuple(float(x) for x in deg),
                counters=counters,
                violation=bool(true_power > budget_w * (1.0 + 1e-9)),
            )
        )

    all_deg = np.array([r.degradation for r in records])
    return EpochTrace(
        baseline=baseline,
        epochs=tuple(records),
        budget_w=budget_w,
        mean_model_power_w=float(np.mean([r.model_power_w for r in records])),
        mean_true_power_w=float(np.mean([r.true_power_w for r in records])),
        worst_degradation=float(all_deg.max()),
        avg_degradation=float(all_deg.mean()),
        violation_epochs=tuple(r.epoch for r in records if r.violation),
    )
