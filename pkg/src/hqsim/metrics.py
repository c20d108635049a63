"""Utilization, idle time, queue waits and makespan, recomputed from a trace.

Metrics never look at strategy internals: everything is derived by replaying
the event trace. Time sums use exact rational arithmetic on the float
timestamps, so two different decompositions of the same busy set (per
interval here, per elementary time slice in :func:`brute_force_analyze`)
agree to the last bit.

A job's classical nodes count as *busy* while the job is inside a phase and
not waiting on a quantum task, i.e. during classical phases and during the
per-task preparation of quantum phases.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

from .core import ClusterConfig, EventKind, SimEvent, node_id, physical_qpu, qpu_id
from .engine import Trace

K = EventKind
ZERO = Fraction(0)

SUMMARY_FIELDS = (
    "qpu_utilization",
    "qpu_window_utilization",
    "node_utilization",
    "node_idle_allocated",
    "node_idle_fraction",
    "makespan",
    "mean_wait",
    "max_wait",
    "mean_qtask_wait",
    "max_qtask_wait",
    "mean_qtask_duration",
    "mean_busy_segment",
    "jobs_completed",
    "jobs_killed",
)
JOB_FIELDS = ("job_id", "strategy", "submit", "start", "end", "turnaround", "total_queue_wait", "killed")


class MalformedTrace(ValueError):
    pass


class MismatchedWorkload(ValueError):
    pass


@dataclass(frozen=True)
class JobMetrics:
    job_id: str
    submit: float
    start: float | None
    end: float | None
    step_waits: tuple[float, ...]
    killed: bool

    @property
    def turnaround(self) -> float | None:
        return None if self.end is None else self.end - self.submit

    @property
    def total_queue_wait(self) -> float:
        return math.fsum(self.step_waits)


@dataclass(frozen=True)
class MetricsReport:
    makespan: float
    qpu_busy: dict[str, float]
    qpu_allocated: dict[str, float]
    qpu_utilization: float  # busy / allocated, all QPUs
    qpu_window_utilization: float  # busy / (QPUs x makespan)
    node_busy: float
    node_allocated: float
    node_utilization: float
    node_idle_allocated: float
    node_idle_fraction: float
    mean_wait: float
    max_wait: float
    mean_qtask_wait: float
    max_qtask_wait: float
    mean_qtask_duration: float
    mean_busy_segment: float
    jobs_completed: int
    jobs_killed: int
    jobs: tuple[JobMetrics, ...] = field(repr=False)

    @property
    def workload_key(self) -> tuple[tuple[str, float], ...]:
        return tuple(sorted((j.job_id, j.submit) for j in self.jobs))

    def qpu_alloc_utilization(self, qpu: str) -> float:
        alloc = self.qpu_allocated[qpu]
        return self.qpu_busy[qpu] / alloc if alloc else 0.0

    def qpu_window_share(self, qpu: str) -> float:
        return self.qpu_busy[qpu] / self.makespan if self.makespan else 0.0

    def summary(self) -> dict[str, float | int]:
        return {name: getattr(self, name) for name in SUMMARY_FIELDS}

    def to_dict(self) -> dict:
        out = dict(self.summary())
        out["qpus"] = {
            q: {
                "busy": self.qpu_busy[q],
                "allocated": self.qpu_allocated[q],
                "utilization": self.qpu_alloc_utilization(q),
                "window_utilization": self.qpu_window_share(q),
            }
            for q in self.qpu_busy
        }
        out["jobs"] = [
            {
                "job_id": j.job_id,
                "submit": j.submit,
                "start": j.start,
                "end": j.end,
                "turnaround": j.turnaround,
                "total_queue_wait": j.total_queue_wait,
                "step_waits": list(j.step_waits),
                "killed": j.killed,
            }
            for j in self.jobs
        ]
        return out


def _ratio(num: Fraction, den: Fraction) -> float:
    return float(num / den) if den else 0.0


def _mean(values: Sequence[Fraction]) -> float:
    return float(sum(values, ZERO) / len(values)) if values else 0.0


def _build_report(
    cluster: ClusterConfig,
    start: Fraction,
    end: Fraction,
    qpu_busy: dict[str, Fraction],
    qpu_alloc: dict[str, Fraction],
    node_busy: Fraction,
    node_alloc: Fraction,
    job_waits: list[tuple[str, Fraction, Fraction | None, Fraction | None, list[Fraction], bool]],
    qtask_waits: list[Fraction],
    qtask_durations: list[Fraction],
    segments: list[Fraction],
) -> MetricsReport:
    """Shared tail of both analyzers: turn exact totals into a report."""
    makespan = end - start
    busy_total = sum(qpu_busy.values(), ZERO)
    alloc_total = sum(qpu_alloc.values(), ZERO)
    totals = [sum(waits, ZERO) for *_, waits, _ in job_waits]
    jobs = tuple(
        JobMetrics(
            job_id,
            float(submit),
            None if first is None else float(first),
            None if last is None else float(last),
            tuple(float(w) for w in waits),
            killed,
        )
        for job_id, submit, first, last, waits, killed in sorted(job_waits, key=lambda j: j[0])
    )
    return MetricsReport(
        makespan=float(makespan),
        qpu_busy={q: float(v) for q, v in qpu_busy.items()},
        qpu_allocated={q: float(v) for q, v in qpu_alloc.items()},
        qpu_utilization=_ratio(busy_total, alloc_total),
        qpu_window_utilization=_ratio(busy_total, makespan * cluster.qpu_count),
        node_busy=float(node_busy),
        node_allocated=float(node_alloc),
        node_utilization=_ratio(node_busy, makespan * cluster.classical_nodes),
        node_idle_allocated=float(node_alloc - node_busy),
        node_idle_fraction=_ratio(node_alloc - node_busy, node_alloc),
        mean_wait=_mean(totals),
        max_wait=float(max(totals, default=ZERO)),
        mean_qtask_wait=_mean(qtask_waits),
        max_qtask_wait=float(max(qtask_waits, default=ZERO)),
        mean_qtask_duration=_mean(qtask_durations),
        mean_busy_segment=_mean(segments),
        jobs_completed=sum(1 for *_, last, _, killed in job_waits if last is not None and not killed),
        jobs_killed=sum(1 for *_, killed in job_waits if killed),
        jobs=jobs,
    )


# -- streaming analyzer --------------------------------------------------------


@dataclass
class _JobState:
    submit: Fraction
    phase: int | None = None  # open phase
    last_phase_end: int = -1
    ready: Fraction = ZERO
    waiting_task: bool = False
    task_enqueued: Fraction | None = None
    task_started: bool = False
    done: bool = False
    killed: bool = False
    first_start: Fraction | None = None
    end: Fraction | None = None
    nodes: set[str] = field(default_factory=set)
    resources: set[str] = field(default_factory=set)
    waits: list[Fraction] = field(default_factory=list)
    active_since: Fraction | None = None
    segments: list[list[Fraction]] = field(default_factory=list)

    @property
    def active(self) -> bool:
        return self.phase is not None and not self.waiting_task and not self.done


def analyze(trace: Trace | Iterable[SimEvent], cluster: ClusterConfig) -> MetricsReport:
    """Single pass over ``trace``; raises :class:`MalformedTrace` on causality violations."""
    events = list(trace)
    if not any(ev.kind is K.JOB_SUBMIT for ev in events):
        raise MalformedTrace("trace has no JobSubmit")

    qpus = [qpu_id(i) for i in range(cluster.qpu_count)]
    jobs: dict[str, _JobState] = {}
    node_owner: dict[str, str] = {}
    node_busy_since: dict[str, Fraction] = {}
    node_alloc_since: dict[str, Fraction] = {}
    node_busy = node_alloc = ZERO
    qpu_holders: dict[str, set[str]] = {q: set() for q in qpus}
    qpu_alloc_since: dict[str, Fraction] = {}
    qpu_running: dict[str, tuple[str, Fraction]] = {}
    qpu_busy = {q: ZERO for q in qpus}
    qpu_alloc = {q: ZERO for q in qpus}
    qtask_waits: list[Fraction] = []
    qtask_durations: list[Fraction] = []
    valid_nodes = {node_id(i) for i in range(cluster.classical_nodes)}

    def fail(ev: SimEvent, reason: str) -> MalformedTrace:
        return MalformedTrace(f"seq {ev.seq} ({ev.kind} {ev.job_id} t={ev.time!r}): {reason}")

    def set_activity(job: _JobState, was: bool, t: Fraction) -> None:
        nonlocal node_busy
        now = job.active
        if now == was:
            return
        if now:
            for n in job.nodes:
                node_busy_since[n] = t
            if job.segments and job.segments[-1][1] == t:
                job.active_since = job.segments.pop()[0]
            else:
                job.active_since = t
        else:
            for n in job.nodes:
                node_busy += t - node_busy_since.pop(n)
            job.segments.append([job.active_since, t])
            job.active_since = None

    first = last = None
    prev: SimEvent | None = None
    for ev in events:
        if prev is not None and (ev.time, ev.seq) <= (prev.time, prev.seq):
            raise fail(ev, "events out of (time, seq) order")
        prev = ev
        t = Fraction(ev.time)
        last = t

        if ev.kind is K.JOB_SUBMIT:
            if ev.job_id in jobs:
                raise fail(ev, "duplicate JobSubmit")
            jobs[ev.job_id] = _JobState(submit=t, ready=t)
            first = t if first is None else min(first, t)
            continue
        job = jobs.get(ev.job_id)
        if job is None:
            raise fail(ev, "event before JobSubmit")
        was = job.active
        after_end_ok = ev.kind in (K.QTASK_END, K.ALLOC_RELEASE)
        if job.done and not after_end_ok:
            raise fail(ev, "event after job termination")

        if ev.kind in (K.ALLOC_GRANT, K.EXPAND):
            for r in ev.resource_ids:
                if r.startswith("n"):
                    if r not in valid_nodes:
                        raise fail(ev, f"unknown node {r}")
                    if r in node_owner:
                        raise fail(ev, f"node {r} already held by {node_owner[r]}")
                    node_owner[r] = ev.job_id
                    node_alloc_since[r] = t
                    job.nodes.add(r)
                    if was:
                        node_busy_since[r] = t
                else:
                    q = physical_qpu(r)
                    if q not in qpu_holders:
                        raise fail(ev, f"unknown QPU {r}")
                    if not qpu_holders[q]:
                        qpu_alloc_since[q] = t
                    qpu_holders[q].add(r)
                job.resources.add(r)
        elif ev.kind in (K.ALLOC_RELEASE, K.SHRINK):
            for r in ev.resource_ids:
                if r not in job.resources:
                    raise fail(ev, f"release of {r} not held by job")
                job.resources.discard(r)
                if r.startswith("n"):
                    del node_owner[r]
                    job.nodes.discard(r)
                    node_alloc += t - node_alloc_since.pop(r)
                    if was:
                        node_busy += t - node_busy_since.pop(r)
                else:
                    q = physical_qpu(r)
                    qpu_holders[q].discard(r)
                    if not qpu_holders[q]:
                        qpu_alloc[q] += t - qpu_alloc_since.pop(q)
        elif ev.kind is K.PHASE_START:
            if job.phase is not None or ev.phase_index != job.last_phase_end + 1:
                raise fail(ev, "PhaseStart out of order")
            job.phase = ev.phase_index
            job.waits.append(t - job.ready)
            if job.first_start is None:
                job.first_start = t
        elif ev.kind is K.PHASE_END:
            if job.phase is None or job.phase != ev.phase_index or job.waiting_task:
                raise fail(ev, "PhaseEnd without matching PhaseStart")
            job.last_phase_end = job.phase
            job.phase = None
            job.ready = t
        elif ev.kind is K.QTASK_ENQUEUE:
            if job.phase is None or job.waiting_task:
                raise fail(ev, "QTaskEnqueue outside a phase or with a task in flight")
            job.waiting_task = True
            job.task_enqueued = t
            job.task_started = False
        elif ev.kind is K.QTASK_START:
            if not job.waiting_task or job.task_started:
                raise fail(ev, "QTaskStart without QTaskEnqueue")
            (q,) = ev.resource_ids
            if q in qpu_running:
                raise fail(ev, f"{q} already running a task of {qpu_running[q][0]}")
            qpu_running[q] = (ev.job_id, t)
            job.task_started = True
            qtask_waits.append(t - job.task_enqueued)
        elif ev.kind is K.QTASK_END:
            (q,) = ev.resource_ids
            running = qpu_running.pop(q, None)
            if running is None or running[0] != ev.job_id:
                raise fail(ev, "QTaskEnd without QTaskStart")
            qpu_busy[q] += t - running[1]
            qtask_durations.append(t - running[1])
            job.waiting_task = False
            job.task_started = False
        elif ev.kind is K.JOB_END:
            if job.phase is not None or job.last_phase_end < 0:
                raise fail(ev, "JobEnd before the last PhaseEnd")
            job.done = True
            job.end = t
        elif ev.kind is K.WALLTIME_KILL:
            job.done = True
            job.killed = True
            job.end = t
            if not job.task_started:
                job.waiting_task = False
        set_activity(job, was, t)

    dangling = [r for j in jobs.values() for r in j.resources]
    if dangling or qpu_running:
        raise MalformedTrace(f"resources still held at end of trace: {sorted(dangling) or sorted(qpu_running)}")
    if any(j.active for j in jobs.values()):
        raise MalformedTrace("job still active at end of trace")

    segments = [b - a for j in jobs.values() for a, b in j.segments if b > a]
    job_rows = [(jid, j.submit, j.first_start, j.end, j.waits, j.killed) for jid, j in jobs.items()]
    return _build_report(
        cluster, first, last, qpu_busy, qpu_alloc, node_busy, node_alloc,
        job_rows, qtask_waits, qtask_durations, segments,
    )


# -- brute-force oracle ----------------------------------------------------------


def brute_force_analyze(trace: Trace | Iterable[SimEvent], cluster: ClusterConfig) -> MetricsReport:
    """Reference implementation of :func:`analyze`.

    Rescans the whole trace once per resource and once per job, and
    integrates over elementary slices between consecutive distinct event
    times, using the state after all events at the slice's left end.
    O(events x (resources + jobs)). No causality checks.
    """
    events = list(trace)
    if not any(ev.kind is K.JOB_SUBMIT for ev in events):
        raise MalformedTrace("trace has no JobSubmit")
    times = sorted({Fraction(ev.time) for ev in events})
    slice_len = {t: (times[i + 1] - t) for i, t in enumerate(times[:-1])}
    job_ids = sorted({ev.job_id for ev in events if ev.kind is K.JOB_SUBMIT})

    def job_activity(jid: str) -> dict[Fraction, bool]:
        """Activity of ``jid`` on each slice, keyed by slice start."""
        in_phase = waiting = done = False
        state = {}
        for ev in events:
            if ev.job_id == jid:
                if ev.kind is K.PHASE_START:
                    in_phase = True
                elif ev.kind is K.PHASE_END:
                    in_phase = False
                elif ev.kind is K.QTASK_ENQUEUE:
                    waiting = True
                elif ev.kind is K.QTASK_END:
                    waiting = False
                elif ev.kind in (K.JOB_END, K.WALLTIME_KILL):
                    done = True
            state[Fraction(ev.time)] = in_phase and not waiting and not done
        return state

    activity = {jid: job_activity(jid) for jid in job_ids}

    node_busy = node_alloc = ZERO
    for i in range(cluster.classical_nodes):
        nid = node_id(i)
        holder = None
        after: dict[Fraction, str | None] = {}
        for ev in events:
            if nid in ev.resource_ids:
                if ev.kind in (K.ALLOC_GRANT, K.EXPAND):
                    holder = ev.job_id
                elif ev.kind in (K.ALLOC_RELEASE, K.SHRINK):
                    holder = None
            after[Fraction(ev.time)] = holder
        for t, length in slice_len.items():
            h = after[t]
            if h is not None:
                node_alloc += length
                if activity[h][t]:
                    node_busy += length

    qpu_busy, qpu_alloc = {}, {}
    for i in range(cluster.qpu_count):
        qid = qpu_id(i)
        holders: set[str] = set()
        running = False
        after_alloc: dict[Fraction, bool] = {}
        after_run: dict[Fraction, bool] = {}
        for ev in events:
            for r in ev.resource_ids:
                if physical_qpu(r) != qid:
                    continue
                if ev.kind is K.ALLOC_GRANT:
                    holders.add(r)
                elif ev.kind is K.ALLOC_RELEASE:
                    holders.discard(r)
                elif ev.kind is K.QTASK_START:
                    running = True
                elif ev.kind is K.QTASK_END:
                    running = False
            after_alloc[Fraction(ev.time)] = bool(holders)
            after_run[Fraction(ev.time)] = running
        qpu_alloc[qid] = sum((slice_len[t] for t in slice_len if after_alloc[t]), ZERO)
        qpu_busy[qid] = sum((slice_len[t] for t in slice_len if after_run[t]), ZERO)

    job_rows = []
    qtask_waits: list[Fraction] = []
    qtask_durations: list[Fraction] = []
    segments: list[Fraction] = []
    for jid in job_ids:
        mine = [ev for ev in events if ev.job_id == jid]
        submit = Fraction(next(ev.time for ev in mine if ev.kind is K.JOB_SUBMIT))
        starts = {ev.phase_index: Fraction(ev.time) for ev in mine if ev.kind is K.PHASE_START}
        ends = {ev.phase_index: Fraction(ev.time) for ev in mine if ev.kind is K.PHASE_END}
        waits = [starts[i] - (ends[i - 1] if i else submit) for i in sorted(starts)]
        finish = [ev for ev in mine if ev.kind in (K.JOB_END, K.WALLTIME_KILL)]
        end = Fraction(finish[0].time) if finish else None
        killed = any(ev.kind is K.WALLTIME_KILL for ev in mine)
        job_rows.append((jid, submit, min(starts.values(), default=None), end, waits, killed))

        enqueued = started = None
        for ev in mine:
            if ev.kind is K.QTASK_ENQUEUE:
                enqueued = Fraction(ev.time)
            elif ev.kind is K.QTASK_START:
                started = Fraction(ev.time)
                qtask_waits.append(started - enqueued)
            elif ev.kind is K.QTASK_END and started is not None:
                qtask_durations.append(Fraction(ev.time) - started)
                started = None

        run_len = ZERO
        for t in times[:-1]:
            if activity[jid][t]:
                run_len += slice_len[t]
            elif run_len:
                segments.append(run_len)
                run_len = ZERO
        if run_len:
            segments.append(run_len)

    start = min(Fraction(ev.time) for ev in events if ev.kind is K.JOB_SUBMIT)
    return _build_report(
        cluster, start, times[-1], qpu_busy, qpu_alloc, node_busy, node_alloc,
        job_rows, qtask_waits, qtask_durations, segments,
    )


# -- trace invariants ------------------------------------------------------------


def conservation_violations(trace: Trace | Iterable[SimEvent], cluster: ClusterConfig) -> list[str]:
    """Replay ``trace`` and list every breach of node/QPU exclusivity."""
    problems = []
    owner: dict[str, str] = {}
    exclusive: dict[str, str] = {}
    leases: dict[str, str] = {}
    running: dict[str, str] = {}
    nodes = cluster.classical_nodes
    for ev in trace:
        for r in ev.resource_ids:
            where = f"t={ev.time!r} seq={ev.seq} {ev.kind} {ev.job_id}"
            if ev.kind in (K.ALLOC_GRANT, K.EXPAND):
                if r.startswith("n"):
                    if r in owner:
                        problems.append(f"{where}: {r} granted while held by {owner[r]}")
                    owner[r] = ev.job_id
                    if len(owner) > nodes:
                        problems.append(f"{where}: {len(owner)} nodes granted > {nodes}")
                elif "." in r:
                    q = physical_qpu(r)
                    if r in leases:
                        problems.append(f"{where}: lease {r} bound twice")
                    if q in exclusive:
                        problems.append(f"{where}: lease on {q} held exclusively by {exclusive[q]}")
                    leases[r] = ev.job_id
                else:
                    if r in exclusive or any(physical_qpu(l) == r for l in leases):
                        problems.append(f"{where}: {r} granted while in use")
                    exclusive[r] = ev.job_id
            elif ev.kind in (K.ALLOC_RELEASE, K.SHRINK):
                table = owner if r.startswith("n") else leases if "." in r else exclusive
                if table.get(r) != ev.job_id:
                    problems.append(f"{where}: {r} released but not held")
                table.pop(r, None)
            elif ev.kind is K.QTASK_START:
                if r in running:
                    problems.append(f"{where}: {r} starts a task while running one for {running[r]}")
                running[r] = ev.job_id
            elif ev.kind is K.QTASK_END:
                running.pop(r, None)
    return problems


def task_waits(trace: Trace | Iterable[SimEvent]) -> list[tuple[str, float, float]]:
    """(job_id, enqueue time, start time) of every started quantum task."""
    enqueued: dict[str, float] = {}
    out = []
    for ev in trace:
        if ev.kind is K.QTASK_ENQUEUE:
            enqueued[ev.job_id] = ev.time
        elif ev.kind is K.QTASK_START:
            out.append((ev.job_id, enqueued.pop(ev.job_id), ev.time))
    return out


# -- comparison and export -------------------------------------------------------


def imbalance_direction(report: MetricsReport) -> str:
    """``quantum-starved`` when quantum tasks are shorter than the classical
    stretches between them (the QPU idles), ``classical-starved`` otherwise."""
    if report.mean_qtask_duration < report.mean_busy_segment:
        return "quantum-starved"
    return "classical-starved"


@dataclass(frozen=True)
class ComparisonTable:
    strategies: tuple[str, ...]
    reports: tuple[MetricsReport, ...]
    imbalance: str

    def deltas(self) -> list[dict[str, float]]:
        """Per strategy, each summary metric minus the first (baseline) strategy's."""
        base = self.reports[0].summary()
        return [{k: v - base[k] for k, v in r.summary().items()} for r in self.reports]

    def rows(self) -> list[dict]:
        out = []
        for name, report, delta in zip(self.strategies, self.reports, self.deltas()):
            row = {"strategy": name, "imbalance": self.imbalance}
            row.update(report.summary())
            row.update({f"delta_{k}": v for k, v in delta.items()})
            out.append(row)
        return out

    def to_csv(self) -> str:
        return rows_to_csv(self.rows())

    def render(self) -> str:
        cols = ("qpu_utilization", "node_utilization", "node_idle_fraction", "makespan", "mean_wait", "max_qtask_wait")
        header = ["strategy", *cols]
        body = [[name] + [_fmt(r.summary()[c]) for c in cols] for name, r in zip(self.strategies, self.reports)]
        widths = [max(len(row[i]) for row in [header, *body]) for i in range(len(header))]
        lines = [f"imbalance: {self.imbalance} (baseline {self.strategies[0]})"]
        for row in [header, *body]:
            lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        return "\n".join(lines)


def compare(reports: Sequence[tuple[str, MetricsReport]]) -> ComparisonTable:
    if len(reports) < 2:
        raise MismatchedWorkload("comparison needs at least two reports")
    key = reports[0][1].workload_key
    for name, report in reports[1:]:
        if report.workload_key != key:
            raise MismatchedWorkload(f"{name} ran a different workload than {reports[0][0]}")
    return ComparisonTable(
        tuple(name for name, _ in reports),
        tuple(r for _, r in reports),
        imbalance_direction(reports[0][1]),
    )


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.4f}" if abs(value) < 10 else f"{value:.1f}"
    return str(value)


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def rows_to_csv(rows: Sequence[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _cell(v) for k, v in row.items()})
    return buf.getvalue()


def job_rows(strategy: str, report: MetricsReport) -> list[dict]:
    return [
        {
            "job_id": j.job_id,
            "strategy": strategy,
            "submit": j.submit,
            "start": j.start,
            "end": j.end,
            "turnaround": j.turnaround,
            "total_queue_wait": j.total_queue_wait,
            "killed": int(j.killed),
        }
        for j in report.jobs
    ]


def summary_row(strategy: str, report: MetricsReport) -> dict:
    return {"strategy": strategy, **report.summary()}
