"""Shared construction helpers for the test suite."""

from __future__ import annotations

from fastcap.model import CoreProfile, Instance, MemoryProfile, SystemBudget

# One line per acceptance criterion, emitted uncaptured after the run so
# the pass/fail ledger survives pytest's output capture.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

# Ten equally spaced frequency ratios, 0.55 .. 1.0.
CORE_GRID = tuple(round(0.55 + 0.05 * i, 2) for i in range(10))


def make_core(core_id=0, z_min=100.0, cache_time=10.0, p_max=16.0, alpha=3.0):
    return CoreProfile(
        core_id=core_id, z_min=z_min, cache_time=cache_time, p_max=p_max, alpha=alpha
    )


def make_memory(
    s_m=20.0,
    s_b_grid=(5.0, 10.0, 20.0),
    q_bank=2.0,
    u_bus=1.5,
    p_max=20.0,
    beta=1.0,
):
    return MemoryProfile(
        s_m=s_m,
        s_b_min=s_b_grid[0],
        s_b_grid=tuple(s_b_grid),
        q_bank=q_bank,
        u_bus=u_bus,
        p_max=p_max,
        beta=beta,
    )


def make_budget(p_peak=120.0, budget_fraction=0.6, p_static=10.0):
    return SystemBudget(
        p_peak=p_peak, budget_fraction=budget_fraction, p_static=p_static
    )


def make_instance(cores=None, memory=None, budget=None, core_freq_grid=CORE_GRID):
    if cores is None:
        cores = (make_core(0), make_core(1, z_min=200.0))
    if memory is None:
        memory = make_memory()
    if budget is None:
        budget = make_budget()
    return Instance(
        cores=tuple(cores),
        memory=memory,
        budget=budget,
        core_freq_grid=tuple(core_freq_grid),
    )
