"""Scenario configuration files (TOML).

Example::

    seed = 7

    [cluster]
    classical_nodes = 20
    vqpus_per_qpu = 2
    qpus = [{technology = "superconducting", count = 1}]

    [workload]                       # exactly one of: phases, file, scenario
    job_count = 4
    arrival = "poisson"              # or "all-at-zero"
    rate_per_hour = 6
    technology = "superconducting"
    nodes = [2, 8]                   # number, or [low, high] drawn uniformly
    qpu_gres = 1
    walltime = 7200
    # hetjob = "job.sh"              # take requests from a script instead
    phases = [
      {kind = "classical", classical_work = [3600, 36000]},
      {kind = "quantum", quantum_tasks = [10, 40], prep_time = 30},
    ]

    [strategy]
    name = "vqpu"                    # coschedule | workflow | vqpu | malleable
    retain = 1
    backfill = false

    [output]
    format = "csv"                   # or "json"
    dir = "out"
    trace = false

Custom technologies go under ``[cluster.technologies.<name>]`` with
``task_duration`` (seconds, or ``[min, max]``) and ``calibration_overhead``.
"""

from __future__ import annotations

import copy
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .core import TECHNOLOGIES, ClusterConfig, Fixed, JobSpec, QpuTechnologyProfile, Uniform
from .hetjob import HetjobSyntaxError, parse_hetjob
from .strategies import STRATEGY_NAMES
from .workload import (
    PAPER_TECHNOLOGIES,
    InvalidProfile,
    PhaseTemplate,
    WorkloadProfile,
    generate,
    loads_jobs,
    paper_scenario,
)


class ConfigError(Exception):
    def __init__(self, field: str, message: str) -> None:
        self.field = field
        self.message = message
        super().__init__(f"{field}: {message}")


@dataclass(frozen=True)
class StrategyConfig:
    name: str = "coschedule"
    retain: int = 1
    backfill: bool = False


@dataclass(frozen=True)
class ScenarioConfig:
    cluster: ClusterConfig
    jobs: tuple[JobSpec, ...]
    strategy: StrategyConfig
    seed: int
    output_format: str = "csv"
    output_dir: Path | None = None
    trace: bool = False
    source: str = ""


def parse_value(text: str) -> Any:
    """TOML literal if it parses as one, else the raw string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    data = copy.deepcopy(data)
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(item, "override must look like section.key=value")
        *path, leaf = key.strip().split(".")
        node = data
        for part in path:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(key, "cannot override inside a non-table value")
        node[leaf] = parse_value(value.strip())
    return data


def _get(table: dict, section: str, key: str, kind, default=None, *, required: bool = False):
    field = f"{section}.{key}" if section else key
    if key not in table:
        if required:
            raise ConfigError(field, "missing")
        return default
    value = table[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if kind is int and isinstance(value, bool) or not isinstance(value, kind):
        names = kind.__name__ if isinstance(kind, type) else "/".join(k.__name__ for k in kind)
        raise ConfigError(field, f"expected {names}, got {value!r}")
    return value


def _param(table: dict, section: str, key: str, default, *, integer: bool = False):
    field = f"{section}.{key}"
    value = table.get(key, default)
    number = int if integer else (int, float)
    if isinstance(value, list):
        if len(value) != 2 or not all(isinstance(v, number) and not isinstance(v, bool) for v in value):
            raise ConfigError(field, "range must be [low, high]")
        return tuple(value)
    if not isinstance(value, number) or isinstance(value, bool):
        raise ConfigError(field, f"expected a number or [low, high], got {value!r}")
    return value


def _technologies(cluster: dict) -> dict[str, QpuTechnologyProfile]:
    techs = dict(TECHNOLOGIES)
    custom = _get(cluster, "cluster", "technologies", dict, {})
    for name, spec in custom.items():
        section = f"cluster.technologies.{name}"
        if not isinstance(spec, dict):
            raise ConfigError(section, "expected a table")
        duration = spec.get("task_duration")
        try:
            if isinstance(duration, list) and len(duration) == 2:
                dist = Uniform(float(duration[0]), float(duration[1]))
            elif isinstance(duration, (int, float)) and not isinstance(duration, bool):
                dist = Fixed(float(duration))
            else:
                raise ConfigError(f"{section}.task_duration", "expected seconds or [min, max]")
            techs[name] = QpuTechnologyProfile(name, dist, float(spec.get("calibration_overhead", 0.0)))
        except ValueError as exc:
            raise ConfigError(section, str(exc)) from None
    return techs


def build_cluster(cluster: dict) -> tuple[ClusterConfig, dict[str, QpuTechnologyProfile]]:
    techs = _technologies(cluster)
    nodes = _get(cluster, "cluster", "classical_nodes", int, required=True)
    if nodes <= 0:
        raise ConfigError("cluster.classical_nodes", "must be > 0")
    k = _get(cluster, "cluster", "vqpus_per_qpu", int, 1)
    if k < 1:
        raise ConfigError("cluster.vqpus_per_qpu", f"must be >= 1, got {k}")
    entries = _get(cluster, "cluster", "qpus", list, required=True)
    qpus = []
    for i, entry in enumerate(entries):
        field = f"cluster.qpus[{i}]"
        if not isinstance(entry, dict):
            raise ConfigError(field, "expected {technology = ..., count = ...}")
        name = entry.get("technology")
        if name not in techs:
            raise ConfigError(f"{field}.technology", f"unknown technology {name!r}; known: {', '.join(sorted(techs))}")
        count = entry.get("count", 1)
        if not isinstance(count, int) or isinstance(count, bool) or count < 1:
            raise ConfigError(f"{field}.count", "must be an integer >= 1")
        qpus.append((techs[name], count))
    if not qpus:
        raise ConfigError("cluster.qpus", "at least one QPU is required")
    return ClusterConfig(nodes, tuple(qpus), k), techs


def _workload(workload: dict, base: Path, seed: int, techs: dict) -> tuple[list[JobSpec], str]:
    sources = [key for key in ("phases", "file", "scenario") if key in workload]
    if len(sources) != 1:
        raise ConfigError("workload", "exactly one of 'phases', 'file' or 'scenario' is required")
    source = sources[0]
    if source == "file":
        path = base / _get(workload, "workload", "file", str)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError("workload.file", f"cannot read {path}: {exc.strerror}") from None
        try:
            return loads_jobs(text), f"file:{path}"
        except InvalidProfile as exc:
            raise ConfigError("workload.file", str(exc)) from None
    if source == "scenario":
        tech = _get(workload, "workload", "scenario", str)
        if tech not in PAPER_TECHNOLOGIES:
            raise ConfigError("workload.scenario", f"must be one of {', '.join(PAPER_TECHNOLOGIES)}")
        return paper_scenario(tech)[1], f"scenario:{tech}"

    requests = None
    if "hetjob" in workload:
        path = base / _get(workload, "workload", "hetjob", str)
        try:
            script = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError("workload.hetjob", f"cannot read {path}: {exc.strerror}") from None
        try:
            requests = tuple(parse_hetjob(script))
        except HetjobSyntaxError as exc:
            raise ConfigError("workload.hetjob", "; ".join(e.format(str(path)) for e in exc.errors)) from None

    phases = []
    for i, p in enumerate(_get(workload, "workload", "phases", list)):
        section = f"workload.phases[{i}]"
        if not isinstance(p, dict):
            raise ConfigError(section, "expected a table")
        phases.append(
            PhaseTemplate(
                kind=p.get("kind", ""),
                classical_work=_param(p, section, "classical_work", 0.0),
                quantum_tasks=_param(p, section, "quantum_tasks", 1, integer=True),
                prep_time=_param(p, section, "prep_time", 0.0),
            )
        )
    profile = WorkloadProfile(
        job_count=_get(workload, "workload", "job_count", int, 1),
        phase_pattern=tuple(phases),
        technology=_get(workload, "workload", "technology", str, "superconducting"),
        seed=seed,
        arrival=_get(workload, "workload", "arrival", str, "all-at-zero"),
        rate_per_hour=_get(workload, "workload", "rate_per_hour", float, 1.0),
        nodes=_param(workload, "workload", "nodes", 1, integer=True),
        qpu_gres=_get(workload, "workload", "qpu_gres", int, 1),
        walltime=_get(workload, "workload", "walltime", float, 3600.0),
        requests=requests,
    )
    if profile.technology not in techs:
        raise ConfigError("workload.technology", f"unknown technology {profile.technology!r}")
    try:
        return generate(profile), "profile"
    except InvalidProfile as exc:
        raise ConfigError("workload", str(exc)) from None


def build_config(data: dict, base: Path = Path(".")) -> ScenarioConfig:
    seed = _get(data, "", "seed", int, 0)
    if seed < 0 or seed >= 1 << 64:
        raise ConfigError("seed", "must be an unsigned 64-bit integer")
    workload = _get(data, "", "workload", dict, required=True)
    if "scenario" in workload:
        # the scenario brings its own cluster; only the VQPU count is tunable
        tech = workload["scenario"]
        if tech not in PAPER_TECHNOLOGIES:
            raise ConfigError("workload.scenario", f"must be one of {', '.join(PAPER_TECHNOLOGIES)}")
        table = _get(data, "", "cluster", dict, {})
        extra = sorted(set(table) - {"vqpus_per_qpu"})
        if extra:
            raise ConfigError(f"cluster.{extra[0]}", "not configurable with workload.scenario")
        k = _get(table, "cluster", "vqpus_per_qpu", int, 1)
        if k < 1:
            raise ConfigError("cluster.vqpus_per_qpu", f"must be >= 1, got {k}")
        base_cluster = paper_scenario(tech)[0]
        cluster = ClusterConfig(base_cluster.classical_nodes, base_cluster.qpus, k)
        techs = dict(TECHNOLOGIES)
    else:
        cluster, techs = build_cluster(_get(data, "", "cluster", dict, required=True))
    jobs, source = _workload(workload, base, seed, techs)

    strategy = _get(data, "", "strategy", dict, {})
    name = _get(strategy, "strategy", "name", str, "coschedule")
    if name not in STRATEGY_NAMES:
        raise ConfigError("strategy.name", f"unknown strategy {name!r}; valid: {', '.join(STRATEGY_NAMES)}")
    retain = _get(strategy, "strategy", "retain", int, 1)
    if retain < 1:
        raise ConfigError("strategy.retain", "must be >= 1")
    backfill = _get(strategy, "strategy", "backfill", bool, False)
    if backfill and name not in ("workflow", "malleable"):
        raise ConfigError("strategy.backfill", "only the workflow and malleable strategies support backfill")

    output = _get(data, "", "output", dict, {})
    fmt = _get(output, "output", "format", str, "csv")
    if fmt not in ("csv", "json"):
        raise ConfigError("output.format", "must be 'csv' or 'json'")
    out_dir = _get(output, "output", "dir", str, None)
    return ScenarioConfig(
        cluster=cluster,
        jobs=tuple(jobs),
        strategy=StrategyConfig(name, retain, backfill),
        seed=seed,
        output_format=fmt,
        output_dir=None if out_dir is None else base / out_dir,
        trace=_get(output, "output", "trace", bool, False),
        source=source,
    )


def load_config(path: str | Path, overrides: list[str] = ()) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("config", f"{path}: {exc}") from None
    return build_config(apply_overrides(data, list(overrides)), path.parent)
