"""Allocation strategies for hybrid classical/quantum jobs.

Every strategy drives the same job state machine (phases, preparation,
quantum tasks) on top of :mod:`hqsim.engine`; they differ only in what a job
holds and when:

``coschedule``
    All components granted together (gang), held exclusively until the job
    ends or the shortest component walltime expires.
``workflow``
    Each phase is an independent step queued on its own partition; the job
    holds nothing between steps.
``vqpu``
    Like ``coschedule`` but the quantum component binds one of ``K`` virtual
    QPU leases; the physical QPU runs tasks of all bound leases in FIFO order.
``malleable``
    Like ``coschedule`` but the job shrinks to ``retain`` nodes while in a
    quantum phase and grows back when classical work resumes, running with
    whatever nodes it gets in the meantime.

Queues are strict FCFS per partition. A request spanning two partitions
starts only when it is at the head of both. ``workflow`` and ``malleable``
optionally apply EASY backfilling on top.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Sequence

from .core import (
    CLASSICAL,
    QUANTUM,
    ClusterConfig,
    EventKind,
    JobSpec,
    MalformedSpec,
    QpuTechnologyProfile,
    SimEvent,
    effective_task_duration,
    node_id,
    qpu_id,
    validate_job,
    vqpu_id,
)
from .engine import EventQueue, Trace, run as run_engine
from .rng import SplitMix64

K = EventKind
STRATEGY_NAMES = ("coschedule", "workflow", "vqpu", "malleable")


@dataclass
class QpuState:
    index: int
    profile: QpuTechnologyProfile
    leases: list[str | None]
    owner: str | None = None  # exclusive holder
    running: str | None = None  # job whose task is executing
    waiting: list[tuple[float, str, int]] = field(default_factory=list)  # heap (enqueue time, job_id, seq)

    def free_leases(self) -> int:
        return sum(slot is None for slot in self.leases)


@dataclass
class ClusterState:
    classical_nodes: int
    free_nodes: list[int]
    owned: dict[str, list[int]]
    qpus: list[QpuState]
    pending: list["Request"] = field(default_factory=list)

    @classmethod
    def empty(cls, cluster: ClusterConfig) -> "ClusterState":
        qpus = [
            QpuState(i, profile, [None] * cluster.vqpus_per_qpu)
            for i, profile in enumerate(cluster.qpu_profiles())
        ]
        return cls(cluster.classical_nodes, list(range(cluster.classical_nodes)), {}, qpus)

    def check(self) -> None:
        held = sum(len(ids) for ids in self.owned.values())
        assert len(self.free_nodes) + held == self.classical_nodes, "node ledger out of balance"
        for q in self.qpus:
            assert q.owner is None or all(s is None for s in q.leases), f"q{q.index} both owned and leased"


@dataclass(eq=False)
class JobRun:
    spec: JobSpec
    phase: int = -1
    task: int = 0
    nodes: list[int] = field(default_factory=list)
    qpus: list[int] = field(default_factory=list)
    leases: list[tuple[int, int]] = field(default_factory=list)
    deadline: float = math.inf
    timer: int | None = None
    in_classical: bool = False
    remaining_work: float = 0.0
    segment_start: float = 0.0
    queued_on: int | None = None
    running_on: int | None = None
    expand_since: float | None = None
    done: bool = False
    killed: bool = False

    @property
    def job_id(self) -> str:
        return self.spec.job_id


@dataclass(eq=False)
class Request:
    """A pending allocation: a whole job (``phase is None``) or one workflow step."""

    run: JobRun
    nodes: int
    qpus: int
    walltime: float
    phase: int | None

    @property
    def partitions(self) -> tuple[str, ...]:
        return tuple(p for p, n in ((CLASSICAL, self.nodes), (QUANTUM, self.qpus)) if n)

    def need(self, partition: str) -> int:
        return self.nodes if partition == CLASSICAL else self.qpus


class Simulation:
    """Co-scheduling; the base the other strategies specialise."""

    name = "coschedule"
    virtual = False
    supports_backfill = False

    def __init__(
        self,
        cluster: ClusterConfig,
        jobs: Sequence[JobSpec],
        *,
        seed: int = 0,
        backfill: bool = False,
    ) -> None:
        if backfill and not self.supports_backfill:
            raise ValueError(f"backfill is not available for the {self.name} strategy")
        ids = [job.job_id for job in jobs]
        if len(set(ids)) != len(ids):
            raise MalformedSpec("duplicate job_id in workload")
        for job in jobs:
            validate_job(job, cluster, virtual=self.virtual)
        self.cluster = cluster
        self.jobs = list(jobs)
        self.seed = seed
        self.backfill = backfill
        self.queue = EventQueue()
        self.state = ClusterState.empty(cluster)
        self.runs = {job.job_id: JobRun(job) for job in self.jobs}

    # -- driver -----------------------------------------------------------

    def run(self) -> Trace:
        for job in self.jobs:
            self.queue.schedule(job.submit_time, K.JOB_SUBMIT, job.job_id)
        noop = lambda ev: None  # noqa: E731
        handlers = {kind: noop for kind in EventKind}
        handlers.update(
            {
                K.JOB_SUBMIT: self._on_submit,
                K.PHASE_END: self._on_phase_end,
                K.QTASK_ENQUEUE: self._on_task_ready,
                K.QTASK_END: self._on_task_end,
                K.WALLTIME_KILL: self._on_kill,
            }
        )
        return run_engine(self.queue, handlers)

    @property
    def now(self) -> float:
        return self.queue.now

    def emit(self, kind: EventKind, run: JobRun, phase: int | None = None, resources=()) -> None:
        self.queue.schedule(self.now, kind, run.job_id, phase, resources)

    def arm(self, run: JobRun, at: float, kind: EventKind, phase: int | None, resources=()) -> None:
        """Schedule the job's next own event, or its kill if that falls past the deadline."""
        if at > run.deadline:
            at, kind, resources = run.deadline, K.WALLTIME_KILL, ()
        run.timer = self.queue.schedule(at, kind, run.job_id, phase, resources)

    def disarm(self, run: JobRun) -> None:
        if run.timer is not None:
            self.queue.cancel(run.timer)
            run.timer = None

    def _live(self, ev: SimEvent) -> JobRun | None:
        run = self.runs[ev.job_id]
        if run.done:
            return None
        if ev.seq != run.timer:
            raise RuntimeError(f"stale timer {ev.kind} for {run.job_id}")
        run.timer = None
        return run

    # -- event handlers -----------------------------------------------------

    def _on_submit(self, ev: SimEvent) -> None:
        self.on_submit(self.runs[ev.job_id])
        self.try_schedule()

    def _on_phase_end(self, ev: SimEvent) -> None:
        run = self._live(ev)
        if run is None:
            return
        run.in_classical = False
        self.advance(run, ev.phase_index)

    def _on_task_ready(self, ev: SimEvent) -> None:
        run = self._live(ev)
        if run is None:
            return
        q = self.task_qpu(run)
        heapq.heappush(self.state.qpus[q].waiting, (self.now, run.job_id, ev.seq))
        run.queued_on = q
        # guard: a job waiting on a shared QPU must still die at its deadline
        run.timer = self.queue.schedule(run.deadline, K.WALLTIME_KILL, run.job_id, run.phase)
        self.dispatch(q)

    def _on_task_end(self, ev: SimEvent) -> None:
        run = self._live(ev)
        if run is None:
            return
        q = run.running_on
        self.state.qpus[q].running = None
        run.running_on = None
        self.dispatch(q)
        run.task += 1
        phase = run.spec.phases[run.phase]
        if run.task < phase.quantum_tasks:
            self.arm(run, self.now + phase.prep_time_per_task, K.QTASK_ENQUEUE, run.phase)
        else:
            self.arm(run, self.now, K.PHASE_END, run.phase)

    def _on_kill(self, ev: SimEvent) -> None:
        run = self._live(ev)
        if run is None:
            return
        run.killed = True
        touched = []
        if run.running_on is not None:
            q = run.running_on
            self.state.qpus[q].running = None
            run.running_on = None
            self.emit(K.QTASK_END, run, run.phase, (qpu_id(q),))
            touched.append(q)
        if run.queued_on is not None:
            qs = self.state.qpus[run.queued_on]
            qs.waiting = [entry for entry in qs.waiting if entry[1] != run.job_id]
            heapq.heapify(qs.waiting)
            run.queued_on = None
        self.terminate(run, end_event=False)
        for q in touched:
            self.dispatch(q)
        self.try_schedule()

    # -- job state machine --------------------------------------------------

    def on_submit(self, run: JobRun) -> None:
        spec = run.spec
        self.state.pending.append(Request(run, spec.nodes, spec.qpu_gres, spec.walltime(), None))

    def on_granted(self, run: JobRun, req: Request) -> None:
        self.start_phase(run, 0)

    def before_phase(self, run: JobRun, index: int) -> None:
        """Hook run before ``PhaseStart`` is emitted."""

    def start_phase(self, run: JobRun, index: int) -> None:
        run.phase = index
        self.before_phase(run, index)
        self.emit(K.PHASE_START, run, index)
        phase = run.spec.phases[index]
        if phase.is_quantum:
            run.task = 0
            self.arm(run, self.now + phase.prep_time_per_task, K.QTASK_ENQUEUE, index)
        else:
            run.in_classical = True
            run.remaining_work = phase.classical_work
            run.segment_start = self.now
            self.arm(run, self.now + phase.classical_work / len(run.nodes), K.PHASE_END, index)

    def advance(self, run: JobRun, index: int) -> None:
        if index + 1 < len(run.spec.phases):
            self.start_phase(run, index + 1)
            self.try_schedule()
        else:
            self.terminate(run)
            self.try_schedule()

    def terminate(self, run: JobRun, *, end_event: bool = True, phase: int | None = None) -> None:
        self.disarm(run)
        run.done = True
        run.expand_since = None
        if end_event:
            self.emit(K.JOB_END, run)
        released = self.release(run)
        if released:
            self.emit(K.ALLOC_RELEASE, run, phase, released)

    # -- quantum task service -----------------------------------------------

    def task_qpu(self, run: JobRun) -> int:
        return run.qpus[0]

    def dispatch(self, q: int) -> None:
        qs = self.state.qpus[q]
        if qs.running is not None or not qs.waiting:
            return
        _, job_id, _ = heapq.heappop(qs.waiting)
        run = self.runs[job_id]
        run.queued_on = None
        run.running_on = q
        qs.running = job_id
        self.disarm(run)
        rng = SplitMix64.derive(self.seed, job_id, run.phase, run.task)
        duration = effective_task_duration(qs.profile, rng)
        self.emit(K.QTASK_START, run, run.phase, (qpu_id(q),))
        self.arm(run, self.now + duration, K.QTASK_END, run.phase, (qpu_id(q),))

    # -- resources ----------------------------------------------------------

    def free_qpu_units(self) -> int:
        if self.virtual:
            return sum(q.free_leases() for q in self.state.qpus)
        return sum(q.owner is None for q in self.state.qpus)

    def fits(self, req: Request) -> bool:
        return len(self.state.free_nodes) >= req.nodes and self.free_qpu_units() >= req.qpus

    def take_nodes(self, run: JobRun, count: int) -> list[int]:
        free = self.state.free_nodes
        taken, self.state.free_nodes = free[:count], free[count:]
        run.nodes = sorted(run.nodes + taken)
        self.state.owned[run.job_id] = run.nodes
        return taken

    def give_back_nodes(self, run: JobRun, ids: list[int]) -> None:
        gone = set(ids)
        run.nodes = [n for n in run.nodes if n not in gone]
        if run.nodes:
            self.state.owned[run.job_id] = run.nodes
        else:
            self.state.owned.pop(run.job_id, None)
        self.state.free_nodes = sorted(self.state.free_nodes + list(ids))

    def take_qpus(self, run: JobRun, count: int) -> list[str]:
        ids = []
        for _ in range(count):
            if self.virtual:
                qs = max(self.state.qpus, key=lambda q: (q.free_leases(), -q.index))
                slot = qs.leases.index(None)
                qs.leases[slot] = run.job_id
                run.leases.append((qs.index, slot))
                ids.append(vqpu_id(qs.index, slot))
            else:
                qs = next(q for q in self.state.qpus if q.owner is None)
                qs.owner = run.job_id
                run.qpus.append(qs.index)
                ids.append(qpu_id(qs.index))
        return ids

    def release(self, run: JobRun) -> list[str]:
        ids = [node_id(n) for n in run.nodes]
        if run.nodes:
            self.give_back_nodes(run, list(run.nodes))
        for q in run.qpus:
            self.state.qpus[q].owner = None
            ids.append(qpu_id(q))
        for q, slot in run.leases:
            self.state.qpus[q].leases[slot] = None
            ids.append(vqpu_id(q, slot))
        run.qpus, run.leases = [], []
        run.deadline = math.inf
        return ids

    def start(self, req: Request) -> None:
        self.state.pending.remove(req)
        run = req.run
        nodes = self.take_nodes(run, req.nodes)
        qres = self.take_qpus(run, req.qpus)
        run.deadline = self.now + req.walltime
        self.emit(K.ALLOC_GRANT, run, req.phase, [node_id(n) for n in nodes] + qres)
        self.on_granted(run, req)

    # -- queueing -----------------------------------------------------------

    def grow_jobs(self) -> bool:
        """Hand free nodes to running jobs that want more; malleable only."""
        return False

    def try_schedule(self) -> None:
        while True:
            grew = self.grow_jobs()
            req = self.next_startable()
            if req is not None:
                self.start(req)
            elif not grew:
                return

    def next_startable(self) -> Request | None:
        pending = self.state.pending
        heads: dict[str, Request] = {}
        for req in pending:
            for p in req.partitions:
                heads.setdefault(p, req)
        for req in pending:
            if all(heads[p] is req for p in req.partitions) and self.fits(req):
                return req
        if not self.backfill:
            return None
        reservations = {p: self.reservation(head, p) for p, head in heads.items()}
        for req in pending:
            if not self.fits(req):
                continue
            if all(
                heads[p] is req
                or self.now + req.walltime <= reservations[p][0]
                or req.need(p) <= reservations[p][1]
                for p in req.partitions
            ):
                return req
        return None

    def reservation(self, head: Request, partition: str) -> tuple[float, int]:
        """EASY shadow time and spare units for the head of ``partition``."""
        need = head.need(partition)
        if partition == CLASSICAL:
            avail = len(self.state.free_nodes)
            held = [(r.deadline, len(r.nodes)) for r in self.runs.values() if r.nodes and not r.done]
        else:
            avail = self.free_qpu_units()
            held = [
                (r.deadline, len(r.qpus) + len(r.leases))
                for r in self.runs.values()
                if (r.qpus or r.leases) and not r.done
            ]
        if avail >= need:
            return self.now, avail - need
        for deadline, count in sorted(held):
            avail += count
            if avail >= need:
                return deadline, avail - need
        return math.inf, 0


class CoSchedule(Simulation):
    pass


class Workflow(Simulation):
    name = "workflow"
    supports_backfill = True

    def step_request(self, run: JobRun, index: int) -> Request:
        spec = run.spec
        if spec.phases[index].is_quantum:
            return Request(run, 0, spec.qpu_gres, spec.walltime(QUANTUM), index)
        return Request(run, spec.nodes, 0, spec.walltime(CLASSICAL), index)

    def on_submit(self, run: JobRun) -> None:
        self.state.pending.append(self.step_request(run, 0))

    def on_granted(self, run: JobRun, req: Request) -> None:
        self.start_phase(run, req.phase)

    def advance(self, run: JobRun, index: int) -> None:
        if index + 1 < len(run.spec.phases):
            released = self.release(run)
            self.emit(K.ALLOC_RELEASE, run, index, released)
            self.state.pending.append(self.step_request(run, index + 1))
        else:
            self.terminate(run, phase=index)
        self.try_schedule()


class VirtualQpu(Simulation):
    name = "vqpu"
    virtual = True

    def task_qpu(self, run: JobRun) -> int:
        return run.leases[0][0]


class Malleable(Simulation):
    name = "malleable"
    supports_backfill = True

    def __init__(self, cluster, jobs, *, seed=0, backfill=False, retain: int = 1) -> None:
        if retain < 1:
            raise ValueError("retain must be >= 1")
        super().__init__(cluster, jobs, seed=seed, backfill=backfill)
        self.retain = retain

    def before_phase(self, run: JobRun, index: int) -> None:
        if run.spec.phases[index].is_quantum:
            keep = min(self.retain, run.spec.nodes)
            run.expand_since = None
            if len(run.nodes) > keep:
                surplus = run.nodes[keep:]
                self.give_back_nodes(run, surplus)
                self.emit(K.SHRINK, run, index, [node_id(n) for n in surplus])
        elif len(run.nodes) < run.spec.nodes:
            if run.expand_since is None:
                run.expand_since = self.now
            self.grow_jobs()

    def grow_jobs(self) -> bool:
        waiters = sorted(
            (r for r in self.runs.values() if r.expand_since is not None and not r.done),
            key=lambda r: (r.expand_since, r.job_id),
        )
        grew = False
        for run in waiters:
            if not self.state.free_nodes:
                break
            old = len(run.nodes)
            added = self.take_nodes(run, min(run.spec.nodes - old, len(self.state.free_nodes)))
            grew = True
            self.emit(K.EXPAND, run, run.phase, [node_id(n) for n in added])
            if len(run.nodes) == run.spec.nodes:
                run.expand_since = None
            if run.in_classical:
                done = (self.now - run.segment_start) * old
                run.remaining_work = max(0.0, run.remaining_work - done)
                run.segment_start = self.now
                self.disarm(run)
                self.arm(run, self.now + run.remaining_work / len(run.nodes), K.PHASE_END, run.phase)
        return grew


_CLASSES = {cls.name: cls for cls in (CoSchedule, Workflow, VirtualQpu, Malleable)}


def make_simulation(
    strategy: str,
    cluster: ClusterConfig,
    jobs: Sequence[JobSpec],
    *,
    seed: int = 0,
    retain: int = 1,
    backfill: bool = False,
) -> Simulation:
    try:
        cls = _CLASSES[strategy]
    except KeyError:
        raise ValueError(f"unknown strategy {strategy!r}; valid: {', '.join(STRATEGY_NAMES)}") from None
    if cls is Malleable:
        return cls(cluster, jobs, seed=seed, backfill=backfill, retain=retain)
    return cls(cluster, jobs, seed=seed, backfill=backfill)


def simulate(
    cluster: ClusterConfig,
    jobs: Sequence[JobSpec],
    strategy: str = "coschedule",
    *,
    seed: int = 0,
    retain: int = 1,
    backfill: bool = False,
) -> Trace:
    """Run one strategy over ``jobs`` and return the event trace."""
    return make_simulation(strategy, cluster, jobs, seed=seed, retain=retain, backfill=backfill).run()
