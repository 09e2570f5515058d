"""Command-line harness: solve / simulate / compare / bench.

Exit codes: 0 success, 1 usage or validation failure, 2 infeasible
budget.  All output files land under ``--out`` (created on demand);
``solve`` prints its plan document to standard output instead.
"""

from __future__ import annotations

import argparse
import statistics
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from .capper import fastcap_solve
from .config import (
    RunConfigFile,
    dump_effective,
    parse_config,
)
from .errors import (
    ConfigError,
    DomainError,
    EnumerationTooLargeError,
    FastcapError,
    InfeasibleError,
)
from .policies import (
    assignment_degradations,
    solve_cpu_only,
    solve_eql_freq,
    solve_eql_pwr,
    solve_maxbips,
)
from .reports import (
    ResultRow,
    render_bench_figure,
    render_compare_figure,
    render_trace_figure,
    write_bench_csv,
    write_result_csv,
    write_summary,
)
from .simulator import run_capped
from .workloads import random_instance


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fastcap",
        description="Fairness-aware power capping: solver, simulator, baselines.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("solve", "solve one instance and print the plan"),
        ("simulate", "run the epoch control loop and write trace CSVs"),
        ("compare", "run the policy suite side by side"),
        ("bench", "time the solver across core counts"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override workload and simulator seeds")
        p.add_argument("--dump-effective-config", action="store_true",
                       help="print the fully-resolved config and exit")
    return parser


def _apply_seed(cfg: RunConfigFile, seed: int | None) -> RunConfigFile:
    if seed is None:
        return cfg
    workload = (
        replace(cfg.workload, seed=seed) if cfg.workload is not None else None
    )
    return replace(cfg, workload=workload, sim=replace(cfg.sim, rng_seed=seed))


def _scenario_tag(cfg: RunConfigFile, budget: float) -> str:
    return f"{cfg.scenario_id}@{budget:g}"


def cmd_solve(cfg: RunConfigFile, out_dir: Path, args) -> int:
    docs = []
    for budget in cfg.budgets:
        instance = cfg.resolve_instance(budget)
        t0 = time.perf_counter()
        plan = fastcap_solve(
            instance, quantize_mode=cfg.controller.quantize_mode
        )
        wall = time.perf_counter() - t0
        docs.append(
            {
                "scenario": cfg.scenario_id,
                "budget_fraction": budget,
                "budget_w": instance.budget.budget_w,
                "d": plan.d_value,
                "core_freq_idx": list(plan.core_freq_idx),
                "mem_freq_idx": plan.mem_freq_idx,
                "power_w": plan.power_quantized,
                "power_normalized": plan.power_quantized / instance.budget.p_peak,
                "clamped_cores": list(plan.clamped_cores),
                "quantize_mode": cfg.controller.quantize_mode.value,
                "solver_wall_s": wall,
            }
        )
    sys.stdout.write(yaml.safe_dump_all(docs, sort_keys=False))
    return 0


def _trace_rows(tag: str, instance, trace):
    p_peak = instance.budget.p_peak
    base = trace.baseline
    yield ResultRow(
        scenario=tag,
        policy="baseline",
        epoch=base.epoch,
        normalized_power=base.true_power_w / p_peak,
        d=base.d_value,
        worst_degradation=max(base.degradation),
        avg_degradation=sum(base.degradation) / len(base.degradation),
        core_freq_idx=base.core_freq_idx,
        mem_freq_idx=base.mem_freq_idx,
        solver_wall_s=None,
    )
    for rec in trace.epochs:
        yield ResultRow(
            scenario=tag,
            policy="fastcap",
            epoch=rec.epoch,
            normalized_power=rec.model_power_w / p_peak,
            d=rec.d_value,
            worst_degradation=max(rec.degradation),
            avg_degradation=sum(rec.degradation) / len(rec.degradation),
            core_freq_idx=rec.core_freq_idx,
            mem_freq_idx=rec.mem_freq_idx,
            solver_wall_s=None,
        )


def cmd_simulate(cfg: RunConfigFile, out_dir: Path, args) -> int:
    rows = []
    summaries = {}
    figures = []
    for budget in cfg.budgets:
        instance = cfg.resolve_instance(budget)
        tag = _scenario_tag(cfg, budget)
        trace = run_capped(instance, cfg.sim, cfg.controller, cfg.epochs)
        rows.extend(_trace_rows(tag, instance, trace))
        summaries[tag] = {
            "budget_w": trace.budget_w,
            "mean_model_power_w": trace.mean_model_power_w,
            "mean_true_power_w": trace.mean_true_power_w,
            "mean_model_power_normalized": (
                trace.mean_model_power_w / instance.budget.p_peak
            ),
            "worst_degradation": trace.worst_degradation,
            "avg_degradation": trace.avg_degradation,
            "violation_epochs": list(trace.violation_epochs),
            "epochs": len(trace.epochs),
        }
        fig = render_trace_figure(
            out_dir / f"trace_{tag}.png", trace, tag
        )
        figures.append(fig)
    csv_path = write_result_csv(out_dir / "simulate.csv", rows)
    write_summary(
        out_dir / "simulate_summary.yaml",
        yaml.safe_dump(summaries, sort_keys=True),
    )
    print(f"wrote {csv_path}")
    for fig in figures:
        print(f"wrote {fig}")
    return 0


def _policy_row(tag: str, name: str, instance, ctrl) -> ResultRow:
    p_peak = instance.budget.p_peak
    t0 = time.perf_counter()
    try:
        if name == "fastcap":
            plan = fastcap_solve(instance, quantize_mode=ctrl.quantize_mode)
            wall = time.perf_counter() - t0
            idx, m = plan.core_freq_idx, plan.mem_freq_idx
            d_val, power = plan.d_value, plan.power_quantized
        else:
            solver = {
                "cpu_only": solve_cpu_only,
                "eql_pwr": solve_eql_pwr,
                "eql_freq": solve_eql_freq,
                "maxbips": solve_maxbips,
            }[name]
            res = solver(instance)
            wall = time.perf_counter() - t0
            idx, m = res.core_freq_idx, res.mem_freq_idx
            d_val, power = res.d_equivalent, res.power
    except EnumerationTooLargeError:
        return ResultRow(
            scenario=tag, policy=name, epoch=None, normalized_power=None,
            d=None, worst_degradation=None, avg_degradation=None,
            core_freq_idx=None, mem_freq_idx=None, solver_wall_s=None,
            status="skipped:EnumerationTooLarge",
        )
    except InfeasibleError:
        return ResultRow(
            scenario=tag, policy=name, epoch=None, normalized_power=None,
            d=None, worst_degradation=None, avg_degradation=None,
            core_freq_idx=None, mem_freq_idx=None, solver_wall_s=None,
            status="infeasible",
        )
    deg = assignment_degradations(instance, idx, m)
    return ResultRow(
        scenario=tag,
        policy=name,
        epoch=None,
        normalized_power=power / p_peak,
        d=d_val,
        worst_degradation=float(deg.max()),
        avg_degradation=float(deg.mean()),
        core_freq_idx=tuple(idx),
        mem_freq_idx=m,
        solver_wall_s=wall,
    )


def cmd_compare(cfg: RunConfigFile, out_dir: Path, args) -> int:
    rows = []
    for budget in cfg.budgets:
        instance = cfg.resolve_instance(budget)
        tag = _scenario_tag(cfg, budget)
        for name in cfg.policies:
            rows.append(_policy_row(tag, name, instance, cfg.controller))
    csv_path = write_result_csv(out_dir / "compare.csv", rows)
    fig = render_compare_figure(out_dir / "compare.png", rows)
    print(f"wrote {csv_path}")
    print(f"wrote {fig}")
    return 0


def cmd_bench(cfg: RunConfigFile, out_dir: Path, args) -> int:
    seed = args.seed if args.seed is not None else cfg.sim.rng_seed
    rng = np.random.default_rng(seed)
    rows = []
    means = {}
    for n in cfg.bench.n_list:
        times = []
        for _ in range(cfg.bench.repetitions):
            instance = None
            for _ in range(50):
                candidate = random_instance(rng, n)
                try:
                    t0 = time.perf_counter()
                    fastcap_solve(candidate)
                    times.append(time.perf_counter() - t0)
                    instance = candidate
                    break
                except InfeasibleError:
                    continue
            if instance is None:
                raise ConfigError(
                    f"bench: could not draw a feasible {n}-core instance"
                )
        means[n] = statistics.fmean(times)
        ratio = means[n] / means[n // 2] if n // 2 in means else None
        rows.append(
            (n, cfg.bench.repetitions, means[n], statistics.median(times), ratio)
        )
    csv_path = write_bench_csv(out_dir / "bench.csv", rows)
    fig = render_bench_figure(out_dir / "bench.png", rows)
    print(f"wrote {csv_path}")
    print(f"wrote {fig}")
    return 0


_COMMANDS = {
    "solve": cmd_solve,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage problems; the contract reserves 2
        # for infeasibility, so usage failures map to 1.
        return 0 if exc.code == 0 else 1
    try:
        cfg = parse_config(args.config)
        cfg = _apply_seed(cfg, args.seed)
        if args.dump_effective_config:
            sys.stdout.write(dump_effective(cfg))
            return 0
        return _COMMANDS[args.command](cfg, Path(args.out), args)
    except InfeasibleError as err:
        print(str(err), file=sys.stderr)
        return 2
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (FastcapError, DomainError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
