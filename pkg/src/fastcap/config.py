"""Run-configuration parsing for the command-line harness.

The config dialect is YAML (safe subset: mappings, sequences, scalars).
Every resolved run is captured by ``RunConfigFile``; ``effective_dict``
re-emits it with all defaults filled in, and parsing that dump yields an
identical configuration (round-trip property).

A scenario names its workload either generatively (``workload``: class +
core count + seed) or explicitly (``instance``: full core/memory/budget
description).  Defaults mirror the reference platform: ten core levels
over 0.55-1.0 of maximum, ten bus levels from 800 down to 206 MHz, 5 ms
epochs with 300 us profiling, budget fraction 0.6.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import yaml

from .capper import QuantizeMode
from .errors import ConfigError, DomainError
from .model import CoreProfile, Instance, MemoryProfile, SystemBudget
from .simulator import BankService, ControllerConfig, SimConfig, ThinkDistribution
from .workloads import (
    CLASS_NAMES,
    CORE_FREQ_GRID,
    S_B_GRID,
    WorkloadClassSpec,
    assemble_instance,
    synth_workload,
)

POLICY_NAMES = ("fastcap", "cpu_only", "eql_pwr", "eql_freq", "maxbips")

DEFAULT_BUDGETS = (0.6,)
DEFAULT_POLICIES = ("fastcap", "cpu_only", "eql_pwr", "eql_freq")
DEFAULT_EPOCHS = 100
DEFAULT_BENCH_N = (16, 32, 64)
DEFAULT_BENCH_REPS = 20


@dataclass(frozen=True)
class WorkloadRef:
    workload_class: str
    n_cores: int
    seed: int = 0

    def __post_init__(self):
        if self.workload_class not in CLASS_NAMES:
            raise ConfigError(
                f"workload.class must be one of {CLASS_NAMES}, "
                f"got {self.workload_class!r}"
            )
        if self.n_cores < 1:
            raise ConfigError("workload.n_cores must be >= 1")


@dataclass(frozen=True)
class BenchSpec:
    n_list: tuple[int, ...] = DEFAULT_BENCH_N
    repetitions: int = DEFAULT_BENCH_REPS

    def __post_init__(self):
        if not self.n_list:
            raise ConfigError("bench.n_list must be non-empty")
        if any(n < 1 for n in self.n_list):
            raise ConfigError("bench.n_list entries must be >= 1")
        if self.repetitions < 1:
            raise ConfigError("bench.repetitions must be >= 1")


@dataclass(frozen=True)
class RunConfigFile:
    """One fully-resolved harness run."""

    scenario_id: str
    workload: WorkloadRef | None
    instance: Instance | None
    budgets: tuple[float, ...]
    policies: tuple[str, ...]
    epochs: int
    sim: SimConfig
    controller: ControllerConfig
    bench: BenchSpec

    def __post_init__(self):
        if (self.workload is None) == (self.instance is None):
            raise ConfigError(
                "scenario requires exactly one of 'workload' or 'instance'"
            )
        if not self.budgets:
            raise ConfigError("budgets must be non-empty")
        if any(not 0.0 < b <= 1.0 for b in self.budgets):
            raise ConfigError("budgets entries must lie in (0, 1]")
        if not self.policies:
            raise ConfigError("policies must be non-empty")
        for p in self.policies:
            if p not in POLICY_NAMES:
                raise ConfigError(
                    f"unknown policy {p!r}; choose from {POLICY_NAMES}"
                )
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")

    @property
    def n_cores(self) -> int:
        if self.workload is not None:
            return self.workload.n_cores
        return len(self.instance.cores)

    def resolve_instance(self, budget_fraction: float) -> Instance:
        """Materialize the scenario at one point of the budget sweep."""
        if self.instance is not None:
            budget = SystemBudget(
                p_peak=self.instance.budget.p_peak,
                budget_fraction=budget_fraction,
                p_static=self.instance.budget.p_static,
            )
            return Instance(
                cores=self.instance.cores,
                memory=self.instance.memory,
                budget=budget,
                core_freq_grid=self.instance.core_freq_grid,
            )
        spec = WorkloadClassSpec(workload_class=self.workload.workload_class)
        cores = synth_workload(spec, self.workload.n_cores, self.workload.seed)
        return assemble_instance(cores, budget_fraction=budget_fraction)


class _Section:
    """Mapping view that records its key path for error messages."""

    def __init__(self, data, path: str):
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a mapping, got {type(data).__name__}")
        self.data = dict(data)
        self.path = path

    def sub(self, key: str) -> "_Section":
        return _Section(self.data.pop(key, None), f"{self.path}.{key}")

    def has(self, key: str) -> bool:
        return key in self.data

    def take(self, key: str, kind, default):
        if key not in self.data:
            return default
        return self._coerce(key, self.data.pop(key), kind)

    def require(self, key: str, kind):
        if key not in self.data:
            raise ConfigError(f"{self.path}.{key}: required key missing")
        return self._coerce(key, self.data.pop(key), kind)

    def _coerce(self, key: str, raw, kind):
        path = f"{self.path}.{key}"
        try:
            if kind is float:
                if isinstance(raw, bool) or not isinstance(raw, (int, float)):
                    raise ConfigError(f"{path}: expected a number")
                val = float(raw)
                if math.isnan(val) or math.isinf(val):
                    raise ConfigError(f"{path}: must be finite")
                return val
            if kind is int:
                if isinstance(raw, bool) or not isinstance(raw, int):
                    raise ConfigError(f"{path}: expected an integer")
                return int(raw)
            if kind is str:
                if not isinstance(raw, str):
                    raise ConfigError(f"{path}: expected a string")
                return raw
            if kind == "float_list":
                if not isinstance(raw, (list, tuple)):
                    raise ConfigError(f"{path}: expected a list")
                return tuple(
                    self._coerce(f"{key}[{i}]", v, float)
                    for i, v in enumerate(raw)
                )
            if kind == "int_list":
                if not isinstance(raw, (list, tuple)):
                    raise ConfigError(f"{path}: expected a list")
                return tuple(
                    self._coerce(f"{key}[{i}]", v, int)
                    for i, v in enumerate(raw)
                )
            if kind == "str_list":
                if not isinstance(raw, (list, tuple)):
                    raise ConfigError(f"{path}: expected a list")
                return tuple(
                    self._coerce(f"{key}[{i}]", v, str)
                    for i, v in enumerate(raw)
                )
        except ConfigError:
            raise
        raise ConfigError(f"{path}: unsupported schema kind {kind!r}")

    def reject_unknown(self):
        if self.data:
            keys = ", ".join(sorted(self.data))
            raise ConfigError(f"{self.path}: unknown keys: {keys}")


def _parse_instance(sec: _Section) -> Instance:
    cores_raw = sec.data.pop("cores", None)
    if not isinstance(cores_raw, list) or not cores_raw:
        raise ConfigError(f"{sec.path}.cores: non-empty list required")
    cores = []
    for i, item in enumerate(cores_raw):
        c = _Section(item, f"{sec.path}.cores[{i}]")
        try:
            cores.append(
                CoreProfile(
                    core_id=c.take("core_id", int, i),
                    z_min=c.require("z_min", float),
                    cache_time=c.require("cache_time", float),
                    p_max=c.require("p_max", float),
                    alpha=c.require("alpha", float),
                )
            )
        except DomainError as err:
            raise ConfigError(f"{c.path}: {err}") from err
        c.reject_unknown()
    mem = sec.sub("memory")
    try:
        s_b_grid = mem.require("s_b_grid", "float_list")
        memory = MemoryProfile(
            s_m=mem.require("s_m", float),
            s_b_min=s_b_grid[0] if s_b_grid else 0.0,
            s_b_grid=s_b_grid,
            q_bank=mem.take("q_bank", float, 2.0),
            u_bus=mem.take("u_bus", float, 1.5),
            p_max=mem.require("p_max", float),
            beta=mem.take("beta", float, 1.0),
        )
    except DomainError as err:
        raise ConfigError(f"{mem.path}: {err}") from err
    mem.reject_unknown()
    bud = sec.sub("budget")
    try:
        budget = SystemBudget(
            p_peak=bud.require("p_peak", float),
            budget_fraction=bud.take("budget_fraction", float, 0.6),
            p_static=bud.require("p_static", float),
        )
    except DomainError as err:
        raise ConfigError(f"{bud.path}: {err}") from err
    bud.reject_unknown()
    grid = sec.take("core_freq_grid", "float_list", tuple(CORE_FREQ_GRID))
    sec.reject_unknown()
    try:
        return Instance(
            cores=tuple(cores), memory=memory, budget=budget,
            core_freq_grid=grid,
        )
    except DomainError as err:
        raise ConfigError(f"{sec.path}: {err}") from err


def _parse_enum(sec: _Section, key: str, enum_cls, default):
    raw = sec.take(key, str, None)
    if raw is None:
        return default
    try:
        return enum_cls(raw)
    except ValueError:
        valid = ", ".join(e.value for e in enum_cls)
        raise ConfigError(
            f"{sec.path}.{key}: {raw!r} is not one of: {valid}"
        ) from None


def parse_config_data(data: dict, label: str = "config") -> RunConfigFile:
    root = _Section(data, label)
    scen = root.sub("scenario")
    workload = None
    instance = None
    if scen.has("workload") and scen.has("instance"):
        raise ConfigError(
            f"{scen.path}: 'workload' and 'instance' are mutually exclusive"
        )
    if scen.has("workload"):
        w = scen.sub("workload")
        workload = WorkloadRef(
            workload_class=w.require("class", str),
            n_cores=w.require("n_cores", int),
            seed=w.take("seed", int, 0),
        )
        w.reject_unknown()
    elif scen.has("instance"):
        instance = _parse_instance(scen.sub("instance"))
    else:
        raise ConfigError(f"{scen.path}: one of 'workload' or 'instance' required")
    if workload is not None:
        default_id = f"{workload.workload_class.lower()}{workload.n_cores}"
    else:
        default_id = f"instance{len(instance.cores)}"
    scenario_id = scen.take("id", str, default_id)
    scen.reject_unknown()

    sim_sec = root.sub("sim")
    n_cores = workload.n_cores if workload else len(instance.cores)
    try:
        sim = SimConfig(
            n_cores=n_cores,
            bank_count=sim_sec.take("bank_count", int, 8),
            controller_count=sim_sec.take("controller_count", int, 1),
            bank_to_controller=sim_sec.take("bank_to_controller", "int_list", None),
            think_distribution=_parse_enum(
                sim_sec, "think_distribution", ThinkDistribution,
                ThinkDistribution.EXPONENTIAL,
            ),
            bank_select_weights=sim_sec.take("bank_select_weights", "float_list", None),
            bank_service=_parse_enum(
                sim_sec, "bank_service", BankService, BankService.DETERMINISTIC
            ),
            s_m=sim_sec.take("s_m", float, 20.0),
            rng_seed=sim_sec.take("rng_seed", int, 0),
            warmup_ns=sim_sec.take("warmup_ns", float, None),
        )
    except DomainError as err:
        raise ConfigError(f"{sim_sec.path}: {err}") from err
    sim_sec.reject_unknown()

    ctrl_sec = root.sub("controller")
    try:
        controller = ControllerConfig(
            epoch_len_ns=ctrl_sec.take("epoch_len_ns", float, 5e6),
            profiling_len_ns=ctrl_sec.take("profiling_len_ns", float, 3e5),
            transition_overhead_ns=ctrl_sec.take("transition_overhead_ns", float, 0.0),
            quantize_mode=_parse_enum(
                ctrl_sec, "quantize_mode", QuantizeMode,
                QuantizeMode.NEAREST_THEN_REPAIR_DOWN,
            ),
            refit_period_epochs=ctrl_sec.take("refit_period_epochs", int, 1),
            power_noise=ctrl_sec.take("power_noise", float, 0.0),
            surprise_threshold=ctrl_sec.take("surprise_threshold", float, 0.1),
        )
    except DomainError as err:
        raise ConfigError(f"{ctrl_sec.path}: {err}") from err
    ctrl_sec.reject_unknown()

    bench_sec = root.sub("bench")
    bench = BenchSpec(
        n_list=bench_sec.take("n_list", "int_list", DEFAULT_BENCH_N),
        repetitions=bench_sec.take("repetitions", int, DEFAULT_BENCH_REPS),
    )
    bench_sec.reject_unknown()

    cfg = RunConfigFile(
        scenario_id=scenario_id,
        workload=workload,
        instance=instance,
        budgets=root.take("budgets", "float_list", DEFAULT_BUDGETS),
        policies=root.take("policies", "str_list", DEFAULT_POLICIES),
        epochs=root.take("epochs", int, DEFAULT_EPOCHS),
        sim=sim,
        controller=controller,
        bench=bench,
    )
    root.reject_unknown()
    return cfg


def parse_config(path: str | Path) -> RunConfigFile:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError(f"{path}: cannot read: {err}") from err
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as err:
        raise ConfigError(f"{path}: invalid YAML: {err}") from err
    if data is None:
        raise ConfigError(f"{path}: empty config")
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return parse_config_data(data, label=str(path))


def effective_dict(cfg: RunConfigFile) -> dict:
    """Full configuration with every default made explicit."""
    scenario: dict = {"id": cfg.scenario_id}
    if cfg.workload is not None:
        scenario["workload"] = {
            "class": cfg.workload.workload_class,
            "n_cores": cfg.workload.n_cores,
            "seed": cfg.workload.seed,
        }
    else:
        inst = cfg.instance
        scenario["instance"] = {
            "cores": [
                {
                    "core_id": c.core_id,
                    "z_min": c.z_min,
                    "cache_time": c.cache_time,
                    "p_max": c.p_max,
                    "alpha": c.alpha,
                }
                for c in inst.cores
            ],
            "memory": {
                "s_m": inst.memory.s_m,
                "s_b_grid": [float(s) for s in inst.memory.s_b_grid],
                "q_bank": inst.memory.q_bank,
                "u_bus": inst.memory.u_bus,
                "p_max": inst.memory.p_max,
                "beta": inst.memory.beta,
            },
            "budget": {
                "p_peak": inst.budget.p_peak,
                "budget_fraction": inst.budget.budget_fraction,
                "p_static": inst.budget.p_static,
            },
            "core_freq_grid": [float(r) for r in inst.core_freq_grid],
        }
    sim = cfg.sim
    ctrl = cfg.controller
    out = {
        "scenario": scenario,
        "budgets": list(cfg.budgets),
        "policies": list(cfg.policies),
        "epochs": cfg.epochs,
        "sim": {
            "bank_count": sim.bank_count,
            "controller_count": sim.controller_count,
            "bank_to_controller": (
                list(sim.bank_to_controller)
                if sim.bank_to_controller is not None
                else None
            ),
            "think_distribution": sim.think_distribution.value,
            "bank_select_weights": (
                list(sim.bank_select_weights)
                if sim.bank_select_weights is not None
                else None
            ),
            "bank_service": sim.bank_service.value,
            "s_m": sim.s_m,
            "rng_seed": sim.rng_seed,
            "warmup_ns": sim.warmup_ns,
        },
        "controller": {
            "epoch_len_ns": ctrl.epoch_len_ns,
            "profiling_len_ns": ctrl.profiling_len_ns,
            "transition_overhead_ns": ctrl.transition_overhead_ns,
            "quantize_mode": ctrl.quantize_mode.value,
            "refit_period_epochs": ctrl.refit_period_epochs,
            "power_noise": ctrl.power_noise,
            "surprise_threshold": ctrl.surprise_threshold,
        },
        "bench": {
            "n_list": list(cfg.bench.n_list),
            "repetitions": cfg.bench.repetitions,
        },
    }
    # None-valued optionals round-trip as absent keys.
    out["sim"] = {k: v for k, v in out["sim"].items() if v is not None}
    return out


def dump_effective(cfg: RunConfigFile) -> str:
    return yaml.safe_dump(effective_dict(cfg), sort_keys=True)
