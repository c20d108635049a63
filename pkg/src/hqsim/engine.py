"""Deterministic discrete-event kernel: pending-event queue, dispatch loop, trace."""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, TextIO

from .core import EventKind, SimEvent


class TimeInPast(ValueError):
    pass


class HandlerFault(RuntimeError):
    """A handler raised; the partial trace up to and including ``event`` is attached."""

    def __init__(self, event: SimEvent, reason: str, trace: "Trace") -> None:
        self.event = event
        self.reason = reason
        self.trace = trace
        super().__init__(f"handler for {event.kind} at t={event.time!r} (seq {event.seq}) failed: {reason}")


@dataclass
class Trace:
    events: list[SimEvent] = field(default_factory=list)
    horizon: float = 0.0

    def append(self, event: SimEvent) -> None:
        if self.events and event < self.events[-1]:
            raise ValueError("trace is append-only in (time, seq) order")
        self.events.append(event)
        self.horizon = event.time

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    def dump(self, out: TextIO) -> None:
        """One tab-separated line per event: time, seq, kind, job_id, phase_index, resource_ids."""
        for ev in self.events:
            out.write(format_event(ev))
            out.write("\n")

    def dumps(self) -> str:
        return "".join(format_event(ev) + "\n" for ev in self.events)

    @classmethod
    def loads(cls, text: str) -> "Trace":
        trace = cls()
        for line in text.splitlines():
            if line.strip():
                trace.append(parse_event(line))
        return trace


def format_event(ev: SimEvent) -> str:
    return "\t".join(
        (
            repr(float(ev.time)),
            str(ev.seq),
            ev.kind.value,
            ev.job_id if ev.job_id is not None else "-",
            str(ev.phase_index) if ev.phase_index is not None else "-",
            ",".join(ev.resource_ids) if ev.resource_ids else "-",
        )
    )


def parse_event(line: str) -> SimEvent:
    time, seq, kind, job_id, phase, resources = line.rstrip("\n").split("\t")
    return SimEvent(
        float(time),
        int(seq),
        EventKind(kind),
        None if job_id == "-" else job_id,
        None if phase == "-" else int(phase),
        () if resources == "-" else tuple(resources.split(",")),
    )


class EventQueue:
    """Pending events keyed by (time, seq); seq is assigned at schedule time.

    Cancellation is lazy: cancelled entries stay in the heap and are skipped
    on pop.
    """

    def __init__(self, start: float = 0.0) -> None:
        self._heap: list[SimEvent] = []
        self._pending: set[int] = set()
        self.next_seq = 0
        self.now = start
        self.scheduled = 0
        self.dispatched = 0
        self.cancelled = 0

    def __len__(self) -> int:
        return len(self._pending)

    def schedule(
        self,
        at: float,
        kind: EventKind,
        job_id: str | None = None,
        phase_index: int | None = None,
        resource_ids: Iterable[str] = (),
    ) -> int:
        """Insert an event and return its handle (the seq number)."""
        if at < self.now:
            raise TimeInPast(f"cannot schedule {kind} at t={at!r} before now={self.now!r}")
        ev = SimEvent(float(at), self.next_seq, kind, job_id, phase_index, tuple(resource_ids))
        self.next_seq += 1
        heapq.heappush(self._heap, ev)
        self._pending.add(ev.seq)
        self.scheduled += 1
        return ev.seq

    def cancel(self, handle: int) -> bool:
        if handle in self._pending:
            self._pending.remove(handle)
            self.cancelled += 1
            return True
        return False

    def is_pending(self, handle: int | None) -> bool:
        return handle is not None and handle in self._pending

    def pop(self) -> SimEvent | None:
        while self._heap:
            ev = heapq.heappop(self._heap)
            if ev.seq in self._pending:
                self._pending.remove(ev.seq)
                self.now = ev.time
                self.dispatched += 1
                return ev
        return None


Handler = Callable[[SimEvent], None]


def run(queue: EventQueue, handlers: Mapping[EventKind, Handler]) -> Trace:
    """Dispatch until the queue is empty, recording every dispatched event."""
    trace = Trace()
    while (ev := queue.pop()) is not None:
        trace.append(ev)
        handler = handlers.get(ev.kind)
        if handler is None:
            raise HandlerFault(ev, f"no handler for {ev.kind}", trace)
        try:
            handler(ev)
        except HandlerFault:
            raise
        except Exception as exc:
            raise HandlerFault(ev, f"{type(exc).__name__}: {exc}", trace) from exc
    return trace
