import io

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hqsim.core import EventKind as K
from hqsim.engine import EventQueue, HandlerFault, TimeInPast, Trace, run
from hqsim.metrics import analyze
from hqsim.strategies import STRATEGY_NAMES, simulate
from hqsim.workload import contended_scenario

from randomized import random_scenario


def noop(ev):
    pass


def test_same_time_runs_after_earlier_seq():
    q = EventQueue()
    first = q.schedule(0.0, K.JOB_SUBMIT, "a")
    log = []

    def submit(ev):
        log.append(ev.seq)
        if ev.job_id == "a":
            q.schedule(q.now, K.JOB_SUBMIT, "c")

    q.schedule(0.0, K.JOB_SUBMIT, "b")
    run(q, {K.JOB_SUBMIT: submit})
    assert log == [first, 1, 2]


def test_time_in_past():
    q = EventQueue()
    q.schedule(5.0, K.JOB_SUBMIT)
    q.pop()
    with pytest.raises(TimeInPast):
        q.schedule(4.0, K.JOB_END)


def test_fifo_tie_break():
    q = EventQueue()
    q.schedule(5.0, K.JOB_SUBMIT, "A")
    q.schedule(5.0, K.JOB_SUBMIT, "B")
    trace = run(q, {K.JOB_SUBMIT: noop})
    assert [ev.job_id for ev in trace] == ["A", "B"]


def test_empty_queue():
    trace = run(EventQueue(), {})
    assert len(trace) == 0 and trace.horizon == 0.0


def test_two_event_chain():
    q = EventQueue()
    q.schedule(0.0, K.JOB_SUBMIT, "j")
    trace = run(q, {K.JOB_SUBMIT: lambda ev: q.schedule(10.0, K.JOB_END, ev.job_id), K.JOB_END: noop})
    assert [(ev.time, ev.kind) for ev in trace] == [(0.0, K.JOB_SUBMIT), (10.0, K.JOB_END)]
    assert trace.horizon == 10.0


def test_cancel():
    q = EventQueue()
    q.schedule(0.0, K.JOB_SUBMIT, "j")
    kill = q.schedule(100.0, K.WALLTIME_KILL, "j")
    assert q.cancel(kill) is True
    assert q.cancel(kill) is False
    trace = run(q, {K.JOB_SUBMIT: noop})
    assert all(ev.kind is not K.WALLTIME_KILL for ev in trace)
    done = q.schedule(q.now, K.JOB_END, "j")
    run(q, {K.JOB_END: noop})
    assert q.cancel(done) is False


def test_handler_fault_keeps_partial_trace():
    q = EventQueue()
    q.schedule(0.0, K.JOB_SUBMIT, "a")
    q.schedule(1.0, K.JOB_END, "a")
    q.schedule(2.0, K.JOB_SUBMIT, "b")

    def boom(ev):
        raise KeyError("x")

    with pytest.raises(HandlerFault) as info:
        run(q, {K.JOB_SUBMIT: noop, K.JOB_END: boom})
    assert info.value.event.kind is K.JOB_END
    assert [ev.time for ev in info.value.trace] == [0.0, 1.0]


def test_missing_handler_is_a_fault():
    q = EventQueue()
    q.schedule(0.0, K.JOB_SUBMIT)
    with pytest.raises(HandlerFault):
        run(q, {})


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 100), st.booleans()), max_size=40), st.data())
def test_no_lost_events(items, data):
    q = EventQueue()
    handles = [q.schedule(t, K.JOB_SUBMIT) for t, _ in items]
    for h, (_, drop) in zip(handles, items):
        if drop:
            q.cancel(h)
    trace = run(q, {K.JOB_SUBMIT: noop})
    assert q.scheduled == q.dispatched + q.cancelled
    assert len(trace) == q.dispatched
    times = [ev.time for ev in trace]
    assert times == sorted(times)


@pytest.mark.parametrize("seed", range(5))
def test_dump_round_trip_and_replay(seed):
    cluster, jobs = random_scenario(seed)
    for name in STRATEGY_NAMES:
        trace = simulate(cluster, jobs, name, seed=seed)
        buf = io.StringIO()
        trace.dump(buf)
        loaded = Trace.loads(buf.getvalue())
        assert loaded.events == trace.events
        assert analyze(loaded, cluster) == analyze(trace, cluster)


def test_trace_is_append_only():
    cluster, jobs = contended_scenario("superconducting")
    trace = simulate(cluster, jobs, "vqpu")
    with pytest.raises(ValueError):
        trace.append(trace.events[0])
