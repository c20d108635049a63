"""Domain types shared by the simulator: technologies, jobs, phases, events."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Union

from .rng import SplitMix64

CLASSICAL = "classical"
QUANTUM = "quantum"
PARTITIONS = (CLASSICAL, QUANTUM)


class ValidationError(Exception):
    """Base class for job/cluster validation failures."""


class MalformedSpec(ValidationError):
    pass


class Unsatisfiable(ValidationError):
    def __init__(self, request: "ResourceRequest", reason: str) -> None:
        self.request = request
        super().__init__(f"component {request.component_id}: {reason}")


# -- QPU technologies ---------------------------------------------------------


@dataclass(frozen=True)
class Fixed:
    seconds: float

    def __post_init__(self) -> None:
        if not self.seconds > 0:
            raise ValueError(f"fixed duration must be > 0, got {self.seconds}")

    def sample(self, rng: SplitMix64) -> float:
        rng.next_u64()  # keep stream position independent of the distribution kind
        return self.seconds


@dataclass(frozen=True)
class Uniform:
    min_s: float
    max_s: float

    def __post_init__(self) -> None:
        if not self.min_s > 0:
            raise ValueError(f"uniform lower bound must be > 0, got {self.min_s}")
        if self.min_s > self.max_s:
            raise ValueError(f"uniform requires min_s <= max_s, got {self.min_s} > {self.max_s}")

    def sample(self, rng: SplitMix64) -> float:
        return rng.uniform(self.min_s, self.max_s)


Duration = Union[Fixed, Uniform]


@dataclass(frozen=True)
class QpuTechnologyProfile:
    """Duration model of one quantum task on a given QPU technology.

    ``calibration_overhead`` is paid once per task, e.g. loading a new atom
    register geometry on a neutral-atom machine.
    """

    name: str
    task_duration: Duration
    calibration_overhead: float = 0.0

    def __post_init__(self) -> None:
        if self.calibration_overhead < 0:
            raise ValueError("calibration_overhead must be >= 0")


def effective_task_duration(profile: QpuTechnologyProfile, rng: SplitMix64) -> float:
    """Sampled task duration plus calibration overhead. Advances ``rng``."""
    return profile.task_duration.sample(rng) + profile.calibration_overhead


#: Built-in profiles. Superconducting (~10 s per task) and neutral atoms
#: (1500 s + 300 s calibration = 30 min per task) are the two imbalance
#: cases the simulator is built around; trapped-ion is a configurable
#: placeholder, not a measured figure.
TECHNOLOGIES: dict[str, QpuTechnologyProfile] = {
    "superconducting": QpuTechnologyProfile("superconducting", Fixed(10.0), 0.0),
    "neutral-atoms": QpuTechnologyProfile("neutral-atoms", Fixed(1500.0), 300.0),
    "trapped-ion": QpuTechnologyProfile("trapped-ion", Uniform(60.0, 600.0), 0.0),
}


# -- jobs ---------------------------------------------------------------------


@dataclass(frozen=True)
class ResourceRequest:
    """One component of a heterogeneous job."""

    component_id: int
    partition: str
    nodes: int = 0
    qpu_gres: int = 0
    walltime: float = 3600.0


class PhaseKind(str, enum.Enum):
    CLASSICAL = CLASSICAL
    QUANTUM = QUANTUM


@dataclass(frozen=True)
class Phase:
    kind: PhaseKind
    classical_work: float | None = None  # node-seconds
    quantum_tasks: int | None = None
    prep_time_per_task: float = 0.0

    @classmethod
    def classical(cls, work: float) -> "Phase":
        return cls(PhaseKind.CLASSICAL, classical_work=work)

    @classmethod
    def quantum(cls, tasks: int, prep: float = 0.0) -> "Phase":
        return cls(PhaseKind.QUANTUM, quantum_tasks=tasks, prep_time_per_task=prep)

    @property
    def is_quantum(self) -> bool:
        return self.kind is PhaseKind.QUANTUM


@dataclass(frozen=True)
class JobSpec:
    job_id: str
    submit_time: float
    requests: tuple[ResourceRequest, ...]
    phases: tuple[Phase, ...]

    @property
    def nodes(self) -> int:
        return sum(r.nodes for r in self.requests)

    @property
    def qpu_gres(self) -> int:
        return sum(r.qpu_gres for r in self.requests)

    def walltime(self, partition: str | None = None) -> float:
        """Shortest walltime over all components, or over one partition's."""
        times = [r.walltime for r in self.requests if partition is None or r.partition == partition]
        return min(times)


@dataclass(frozen=True)
class ClusterConfig:
    classical_nodes: int
    qpus: tuple[tuple[QpuTechnologyProfile, int], ...]
    vqpus_per_qpu: int = 1

    def __post_init__(self) -> None:
        if self.classical_nodes <= 0:
            raise ValueError("classical_nodes must be > 0")
        if not self.qpus or sum(count for _, count in self.qpus) <= 0:
            raise ValueError("cluster needs at least one QPU")
        if any(count < 0 for _, count in self.qpus):
            raise ValueError("QPU counts must be >= 0")
        if self.vqpus_per_qpu < 1:
            raise ValueError("vqpus_per_qpu must be >= 1")

    @property
    def qpu_count(self) -> int:
        return sum(count for _, count in self.qpus)

    def qpu_profiles(self) -> list[QpuTechnologyProfile]:
        """Profile of each physical QPU, indexed like ``q0``, ``q1``, ..."""
        return [profile for profile, count in self.qpus for _ in range(count)]


# -- events -------------------------------------------------------------------


class EventKind(str, enum.Enum):
    JOB_SUBMIT = "JobSubmit"
    ALLOC_GRANT = "AllocGrant"
    ALLOC_RELEASE = "AllocRelease"
    PHASE_START = "PhaseStart"
    PHASE_END = "PhaseEnd"
    QTASK_ENQUEUE = "QTaskEnqueue"
    QTASK_START = "QTaskStart"
    QTASK_END = "QTaskEnd"
    SHRINK = "Shrink"
    EXPAND = "Expand"
    JOB_END = "JobEnd"
    WALLTIME_KILL = "WalltimeKill"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True, order=True)
class SimEvent:
    time: float
    seq: int
    kind: EventKind = field(compare=False)
    job_id: str | None = field(default=None, compare=False)
    phase_index: int | None = field(default=None, compare=False)
    resource_ids: tuple[str, ...] = field(default=(), compare=False)


def node_id(index: int) -> str:
    return f"n{index}"


def qpu_id(index: int) -> str:
    return f"q{index}"


def vqpu_id(qpu: int, slot: int) -> str:
    return f"q{qpu}.v{slot}"


def physical_qpu(resource: str) -> str:
    """``q0.v2`` -> ``q0``; plain QPU ids pass through."""
    return resource.split(".", 1)[0]


# -- validation ---------------------------------------------------------------


def validate_job(spec: JobSpec, cluster: ClusterConfig, *, virtual: bool = False) -> None:
    """Raise :class:`MalformedSpec` or :class:`Unsatisfiable` if ``spec`` cannot run.

    With ``virtual=True`` QPU requests are checked against the number of
    virtual QPUs instead of physical ones.
    """
    if not spec.requests:
        raise MalformedSpec(f"{spec.job_id}: no resource requests")
    if not spec.phases:
        raise MalformedSpec(f"{spec.job_id}: no phases")
    if spec.submit_time < 0:
        raise MalformedSpec(f"{spec.job_id}: negative submit_time")

    for index, req in enumerate(spec.requests):
        if req.component_id != index:
            raise MalformedSpec(f"{spec.job_id}: component ids must be 0..n-1 in order")
        if req.partition not in PARTITIONS:
            raise MalformedSpec(f"{spec.job_id}: unknown partition {req.partition!r}")
        if req.nodes < 0 or req.qpu_gres < 0:
            raise MalformedSpec(f"{spec.job_id}: negative resource count")
        if req.partition == CLASSICAL and req.qpu_gres:
            raise MalformedSpec(f"{spec.job_id}: classical component requests QPUs")
        if req.partition == QUANTUM and req.nodes:
            raise MalformedSpec(f"{spec.job_id}: quantum component requests nodes")
        if not req.walltime > 0:
            raise MalformedSpec(f"{spec.job_id}: walltime must be > 0")

    for index, phase in enumerate(spec.phases):
        where = f"{spec.job_id} phase {index}"
        if phase.is_quantum:
            if phase.classical_work is not None:
                raise MalformedSpec(f"{where}: quantum phase with classical_work")
            if phase.quantum_tasks is None or phase.quantum_tasks < 1:
                raise MalformedSpec(f"{where}: quantum phase needs >= 1 task")
            if phase.prep_time_per_task < 0:
                raise MalformedSpec(f"{where}: negative prep time")
            if spec.qpu_gres == 0:
                raise MalformedSpec(f"{where}: quantum phase but no QPU requested")
        else:
            if phase.quantum_tasks is not None:
                raise MalformedSpec(f"{where}: classical phase with quantum_tasks")
            if phase.classical_work is None or not phase.classical_work > 0:
                raise MalformedSpec(f"{where}: classical phase needs work > 0")
            if spec.nodes == 0:
                raise MalformedSpec(f"{where}: classical phase but no nodes requested")

    qpu_limit = cluster.qpu_count * (cluster.vqpus_per_qpu if virtual else 1)
    for req in spec.requests:
        if req.nodes > cluster.classical_nodes:
            raise Unsatisfiable(req, f"{req.nodes} nodes > {cluster.classical_nodes} available")
        if req.qpu_gres > qpu_limit:
            raise Unsatisfiable(req, f"qpu:{req.qpu_gres} > {qpu_limit} available")
    # components are co-allocated, so the totals must fit as well
    if spec.nodes > cluster.classical_nodes:
        raise Unsatisfiable(spec.requests[0], f"{spec.nodes} nodes in total > {cluster.classical_nodes}")
    if spec.qpu_gres > qpu_limit:
        raise Unsatisfiable(spec.requests[-1], f"qpu:{spec.qpu_gres} in total > {qpu_limit}")
