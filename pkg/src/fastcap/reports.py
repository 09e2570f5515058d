"""Result rows, CSV emission, and figure rendering.

The CSV schema is fixed: one header row, comma separators, ``.`` decimal
marks, UTF-8.  Column order never changes; downstream plotting scripts
key on it.  Per-core frequency indices are packed into a single column
joined by ``|`` so the schema is independent of core count.  The
``solver_wall_s`` column is the only wall-clock-dependent output and is
left empty for rows that must reproduce byte-identically (simulation
traces).  ``status`` is ``ok`` for normal rows; policies that could not
run carry a reason there instead of numbers.

Figures are rendered next to each CSV with matplotlib's file backend;
the CSV stays the canonical artifact.
"""

from __future__ import annotations

import csv
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

RESULT_COLUMNS = (
    "scenario",
    "policy",
    "epoch",
    "normalized_power",
    "d",
    "worst_degradation",
    "avg_degradation",
    "core_freq_idx",
    "mem_freq_idx",
    "solver_wall_s",
    "status",
)

BENCH_COLUMNS = (
    "n_cores",
    "repetitions",
    "mean_s",
    "median_s",
    "growth_ratio",
)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return format(value, ".10g")
    return str(value)


@dataclass(frozen=True)
class ResultRow:
    scenario: str
    policy: str
    epoch: int | None
    normalized_power: float | None
    d: float | None
    worst_degradation: float | None
    avg_degradation: float | None
    core_freq_idx: tuple[int, ...] | None
    mem_freq_idx: int | None
    solver_wall_s: float | None
    status: str = "ok"

    def as_csv(self) -> list[str]:
        idx = (
            "|".join(str(i) for i in self.core_freq_idx)
            if self.core_freq_idx is not None
            else ""
        )
        return [
            self.scenario,
            self.policy,
            _fmt(self.epoch),
            _fmt(self.normalized_power),
            _fmt(self.d),
            _fmt(self.worst_degradation),
            _fmt(self.avg_degradation),
            idx,
            _fmt(self.mem_freq_idx),
            _fmt(self.solver_wall_s),
            self.status,
        ]


def _atomic_write(path: Path, write_fn):
    """Write via a temp file and rename; partial files never appear."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            write_fn(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_result_csv(path: str | Path, rows) -> Path:
    path = Path(path)

    def emit(fh):
        writer = csv.writer(fh)
        writer.writerow(RESULT_COLUMNS)
        for row in rows:
            writer.writerow(row.as_csv())

    _atomic_write(path, emit)
    return path


def write_bench_csv(path: str | Path, rows) -> Path:
    """rows: iterable of (n_cores, repetitions, mean_s, median_s, ratio|None)."""
    path = Path(path)

    def emit(fh):
        writer = csv.writer(fh)
        writer.writerow(BENCH_COLUMNS)
        for n, reps, mean_s, median_s, ratio in rows:
            writer.writerow(
                [str(n), str(reps), _fmt(mean_s), _fmt(median_s), _fmt(ratio)]
            )

    _atomic_write(path, emit)
    return path


def write_summary(path: str | Path, text: str) -> Path:
    path = Path(path)
    _atomic_write(path, lambda fh: fh.write(text))
    return path


# -- figure rendering -------------------------------------------------------


def render_trace_figure(path: str | Path, trace, scenario: str) -> Path:
    """Model power and degradation per epoch for one capped run."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    epochs = [r.epoch for r in trace.epochs]
    power = [r.model_power_w / trace.baseline.true_power_w for r in trace.epochs]
    true_p = [r.true_power_w / trace.baseline.true_power_w for r in trace.epochs]
    worst = [max(r.degradation) for r in trace.epochs]
    avg = [sum(r.degradation) / len(r.degradation) for r in trace.epochs]
    cap = trace.budget_w / trace.baseline.true_power_w

    fig, (ax_p, ax_d) = plt.subplots(2, 1, figsize=(7.0, 5.4), sharex=True)
    ax_p.plot(epochs, power, lw=1.2, label="model power")
    ax_p.plot(epochs, true_p, lw=0.8, alpha=0.7, label="true power")
    ax_p.axhline(cap, color="k", ls="--", lw=0.8, label="budget")
    ax_p.set_ylabel("power / all-max")
    ax_p.legend(loc="best", fontsize=8)
    ax_p.set_title(scenario)
    if trace.violation_epochs:
        for e in trace.violation_epochs:
            ax_p.axvline(e, color="r", alpha=0.2, lw=0.8)
    ax_d.plot(epochs, worst, lw=1.2, label="worst")
    ax_d.plot(epochs, avg, lw=1.2, label="average")
    ax_d.set_xlabel("epoch")
    ax_d.set_ylabel("degradation")
    ax_d.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def render_compare_figure(path: str | Path, rows) -> Path:
    """Grouped bars: worst/average degradation per policy per scenario."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    usable = [r for r in rows if r.status == "ok" and r.worst_degradation is not None]
    fig, ax = plt.subplots(figsize=(7.0, 3.8))
    if usable:
        labels = [f"{r.scenario}\n{r.policy}" for r in usable]
        xs = range(len(usable))
        ax.bar([x - 0.2 for x in xs], [r.worst_degradation for r in usable],
               width=0.4, label="worst")
        ax.bar([x + 0.2 for x in xs], [r.avg_degradation for r in usable],
               width=0.4, label="average")
        ax.set_xticks(list(xs))
        ax.set_xticklabels(labels, fontsize=7)
        ax.axhline(1.0, color="k", lw=0.8, ls=":")
        ax.set_ylabel("degradation vs all-max")
        ax.legend(loc="best", fontsize=8)
    else:
        ax.text(0.5, 0.5, "no runnable policies", ha="center", va="center")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def render_bench_figure(path: str | Path, rows) -> Path:
    """Solver wall time vs core count."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ns = [r[0] for r in rows]
    means = [r[2] * 1e6 for r in rows]
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    ax.plot(ns, means, marker="o")
    ax.set_xlabel("cores")
    ax.set_ylabel("mean solve time (us)")
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path
