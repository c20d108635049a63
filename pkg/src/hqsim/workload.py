"""Seeded synthetic workloads and the two canonical imbalance scenarios."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

from .core import (
    CLASSICAL,
    QUANTUM,
    TECHNOLOGIES,
    ClusterConfig,
    JobSpec,
    Phase,
    PhaseKind,
    ResourceRequest,
    validate_job,
)
from .rng import SplitMix64

#: A parameter is either fixed or drawn uniformly from an inclusive range.
Param = Union[float, int, tuple]


class InvalidProfile(ValueError):
    pass


def _check_param(name: str, value: Param, *, minimum: float, integer: bool = False) -> None:
    values = value if isinstance(value, tuple) else (value,)
    if isinstance(value, tuple) and (len(value) != 2 or value[0] > value[1]):
        raise InvalidProfile(f"{name}: range must be (low, high) with low <= high, got {value!r}")
    for v in values:
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            raise InvalidProfile(f"{name}: expected a number, got {v!r}")
        if integer and int(v) != v:
            raise InvalidProfile(f"{name}: expected an integer, got {v!r}")
        if v < minimum:
            raise InvalidProfile(f"{name}: must be >= {minimum}, got {v!r}")


def _draw(rng: SplitMix64, value: Param, *, integer: bool = False):
    if isinstance(value, tuple):
        low, high = value
        return rng.integer(int(low), int(high)) if integer else rng.uniform(float(low), float(high))
    rng.next_u64()  # fixed values still consume one draw, keeping streams aligned
    return int(value) if integer else float(value)


@dataclass(frozen=True)
class PhaseTemplate:
    kind: str  # "classical" | "quantum"
    classical_work: Param = 0.0  # node-seconds
    quantum_tasks: Param = 1
    prep_time: Param = 0.0


@dataclass(frozen=True)
class WorkloadProfile:
    job_count: int
    phase_pattern: tuple[PhaseTemplate, ...]
    technology: str = "superconducting"
    seed: int = 0
    arrival: str = "all-at-zero"  # or "poisson"
    rate_per_hour: float = 1.0
    nodes: Param = 1
    qpu_gres: int = 1
    walltime: float = 3600.0
    prefix: str = "j"
    requests: tuple[ResourceRequest, ...] | None = None  # e.g. parsed from a hetjob script

    def validate(self) -> None:
        if self.job_count < 0:
            raise InvalidProfile("job_count must be >= 0")
        if self.arrival not in ("all-at-zero", "poisson"):
            raise InvalidProfile(f"arrival must be 'all-at-zero' or 'poisson', got {self.arrival!r}")
        if self.arrival == "poisson" and not self.rate_per_hour > 0:
            raise InvalidProfile("rate_per_hour must be > 0")
        if not self.phase_pattern:
            raise InvalidProfile("phase_pattern is empty")
        for i, p in enumerate(self.phase_pattern):
            if p.kind == CLASSICAL:
                _check_param(f"phase {i} classical_work", p.classical_work, minimum=1e-9)
            elif p.kind == QUANTUM:
                _check_param(f"phase {i} quantum_tasks", p.quantum_tasks, minimum=1, integer=True)
                _check_param(f"phase {i} prep_time", p.prep_time, minimum=0)
            else:
                raise InvalidProfile(f"phase {i}: unknown kind {p.kind!r}")
        if self.requests is None:
            _check_param("nodes", self.nodes, minimum=0, integer=True)
            _check_param("qpu_gres", self.qpu_gres, minimum=0, integer=True)
            if not self.walltime > 0:
                raise InvalidProfile("walltime must be > 0")
            low_nodes = self.nodes[0] if isinstance(self.nodes, tuple) else self.nodes
            if low_nodes < 1 and any(p.kind == CLASSICAL for p in self.phase_pattern):
                raise InvalidProfile("classical phases need nodes >= 1")
            if self.qpu_gres < 1 and any(p.kind == QUANTUM for p in self.phase_pattern):
                raise InvalidProfile("quantum phases need qpu_gres >= 1")


def _requests(profile: WorkloadProfile, rng: SplitMix64) -> tuple[ResourceRequest, ...]:
    if profile.requests is not None:
        return profile.requests
    nodes = _draw(rng, profile.nodes, integer=True)
    reqs = []
    if nodes:
        reqs.append(ResourceRequest(len(reqs), CLASSICAL, nodes=nodes, walltime=float(profile.walltime)))
    if profile.qpu_gres:
        reqs.append(ResourceRequest(len(reqs), QUANTUM, qpu_gres=profile.qpu_gres, walltime=float(profile.walltime)))
    return tuple(reqs)


def generate(profile: WorkloadProfile) -> list[JobSpec]:
    """Deterministic job list for ``profile``; submit times ascending."""
    profile.validate()
    arrivals = SplitMix64.derive(profile.seed, "arrivals")
    t = 0.0
    jobs = []
    width = max(4, len(str(profile.job_count)))
    for index in range(profile.job_count):
        if profile.arrival == "poisson" and index:
            t += arrivals.exponential(profile.rate_per_hour / 3600.0)
        rng = SplitMix64.derive(profile.seed, "job", index)
        requests = _requests(profile, rng)
        phases = []
        for p in profile.phase_pattern:
            if p.kind == CLASSICAL:
                phases.append(Phase.classical(_draw(rng, p.classical_work)))
            else:
                tasks = _draw(rng, p.quantum_tasks, integer=True)
                phases.append(Phase.quantum(tasks, _draw(rng, p.prep_time)))
        jobs.append(JobSpec(f"{profile.prefix}{index:0{width}d}", t, requests, tuple(phases)))
    return jobs


# -- canonical scenarios -----------------------------------------------------------

LISTING_NODES = 10
LISTING_WALLTIME = 3600.0
#: 60 tasks x (50 s prep + 10 s task) fills the one-hour allocation exactly.
SUPERCONDUCTING_TASKS = 60
SUPERCONDUCTING_PREP = 50.0
#: 900 s of classical work on each side of one 30 min task.
NEUTRAL_ATOMS_CLASSICAL_SECONDS = 900.0
PAPER_TECHNOLOGIES = ("superconducting", "neutral-atoms")


def listing_requests(nodes: int = LISTING_NODES, walltime: float = LISTING_WALLTIME) -> tuple[ResourceRequest, ...]:
    return (
        ResourceRequest(0, CLASSICAL, nodes=nodes, walltime=walltime),
        ResourceRequest(1, QUANTUM, qpu_gres=1, walltime=walltime),
    )


def _hybrid_job(tech: str, job_id: str, submit: float) -> JobSpec:
    if tech == "superconducting":
        phases = (Phase.quantum(SUPERCONDUCTING_TASKS, SUPERCONDUCTING_PREP),)
    else:
        work = NEUTRAL_ATOMS_CLASSICAL_SECONDS * LISTING_NODES
        phases = (Phase.classical(work), Phase.quantum(1), Phase.classical(work))
    return JobSpec(job_id, submit, listing_requests(), phases)


def paper_scenario(tech: str) -> tuple[ClusterConfig, list[JobSpec]]:
    """One 10-node + 1 QPU hybrid job for one hour on a cluster of exactly that size."""
    if tech not in PAPER_TECHNOLOGIES:
        raise ValueError(f"no canonical scenario for {tech!r}; choose one of {', '.join(PAPER_TECHNOLOGIES)}")
    cluster = ClusterConfig(LISTING_NODES, ((TECHNOLOGIES[tech], 1),))
    return cluster, [_hybrid_job(tech, "hybrid", 0.0)]


def contended_scenario(tech: str, vqpus_per_qpu: int = 2) -> tuple[ClusterConfig, list[JobSpec]]:
    """Two-job variants of :func:`paper_scenario` where the strategies can differ.

    superconducting: two hybrid jobs on 20 nodes sharing the single QPU; the
    second arrives one task duration later.
    neutral-atoms: the hybrid job plus a classical-only 9-node job with
    1800 s of work that fits into the quantum phase if nodes are released.
    """
    if tech not in PAPER_TECHNOLOGIES:
        raise ValueError(f"no canonical scenario for {tech!r}; choose one of {', '.join(PAPER_TECHNOLOGIES)}")
    profile = TECHNOLOGIES[tech]
    if tech == "superconducting":
        cluster = ClusterConfig(2 * LISTING_NODES, ((profile, 1),), vqpus_per_qpu)
        offset = profile.task_duration.seconds + profile.calibration_overhead
        return cluster, [_hybrid_job(tech, "hybrid-a", 0.0), _hybrid_job(tech, "hybrid-b", offset)]
    cluster = ClusterConfig(LISTING_NODES, ((profile, 1),), vqpus_per_qpu)
    filler = JobSpec(
        "filler",
        0.0,
        (ResourceRequest(0, CLASSICAL, nodes=LISTING_NODES - 1, walltime=LISTING_WALLTIME),),
        (Phase.classical((LISTING_NODES - 1) * 1800.0),),
    )
    return cluster, [_hybrid_job(tech, "hybrid", 0.0), filler]


# -- structured export ---------------------------------------------------------------


def job_to_dict(job: JobSpec) -> dict:
    return {
        "job_id": job.job_id,
        "submit_time": job.submit_time,
        "requests": [
            {
                "component_id": r.component_id,
                "partition": r.partition,
                "nodes": r.nodes,
                "qpu_gres": r.qpu_gres,
                "walltime": r.walltime,
            }
            for r in job.requests
        ],
        "phases": [
            {"kind": "classical", "classical_work": p.classical_work}
            if not p.is_quantum
            else {"kind": "quantum", "quantum_tasks": p.quantum_tasks, "prep_time_per_task": p.prep_time_per_task}
            for p in job.phases
        ],
    }


def job_from_dict(data: dict) -> JobSpec:
    try:
        requests = tuple(
            ResourceRequest(
                int(r["component_id"]),
                str(r["partition"]),
                nodes=int(r.get("nodes", 0)),
                qpu_gres=int(r.get("qpu_gres", 0)),
                walltime=float(r["walltime"]),
            )
            for r in data["requests"]
        )
        phases = tuple(
            Phase(
                PhaseKind(p["kind"]),
                classical_work=float(p["classical_work"]) if p.get("classical_work") is not None else None,
                quantum_tasks=int(p["quantum_tasks"]) if p.get("quantum_tasks") is not None else None,
                prep_time_per_task=float(p.get("prep_time_per_task", 0.0)),
            )
            for p in data["phases"]
        )
        return JobSpec(str(data["job_id"]), float(data["submit_time"]), requests, phases)
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidProfile(f"bad job record: {exc}") from exc


def dumps_jobs(jobs: Iterable[JobSpec]) -> str:
    """One JSON object per line."""
    return "".join(json.dumps(job_to_dict(j), sort_keys=True) + "\n" for j in jobs)


def loads_jobs(text: str) -> list[JobSpec]:
    jobs = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise InvalidProfile(f"line {line_no}: {exc}") from exc
        jobs.append(job_from_dict(record))
    return jobs


def check_workload(jobs: Sequence[JobSpec], cluster: ClusterConfig, *, virtual: bool = False) -> None:
    for job in jobs:
        validate_job(job, cluster, virtual=virtual)
