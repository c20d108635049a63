"""Acceptance gate: one check per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` or directly with
``python tests/test_acceptance.py``.
"""

from __future__ import annotations

import contextlib
import io
import math
import sys
import time
from pathlib import Path
from typing import Callable

import pytest

from hqsim import cli
from hqsim.hetjob import HetjobSyntaxError, parse_hetjob
from hqsim.core import CLASSICAL, QUANTUM, ResourceRequest
from hqsim.metrics import (
    analyze,
    brute_force_analyze,
    compare,
    conservation_violations,
    job_rows,
    rows_to_csv,
    task_waits,
)
from hqsim.strategies import STRATEGY_NAMES, simulate
from hqsim.workload import contended_scenario, paper_scenario

sys.path.insert(0, str(Path(__file__).parent))
from corpus import LISTING, MALFORMED  # noqa: E402
from randomized import random_scenario  # noqa: E402


class Check:
    def __init__(self) -> None:
        self.failures: list[str] = []
        self.notes: list[str] = []

    def expect(self, ok: bool, message: str) -> None:
        if not ok:
            self.failures.append(message)


def c1_superconducting(check: Check) -> None:
    cluster, jobs = paper_scenario("superconducting")
    util = analyze(simulate(cluster, jobs, "coschedule"), cluster).qpu_utilization
    check.notes.append(f"qpu_utilization={util!r}")
    check.expect(math.isclose(util, 600 / 3600, rel_tol=1e-9, abs_tol=0.0), f"got {util!r}")


def c2_neutral_atoms(check: Check) -> None:
    cluster, jobs = paper_scenario("neutral-atoms")
    idle = analyze(simulate(cluster, jobs, "coschedule"), cluster).node_idle_fraction
    check.notes.append(f"node_idle_fraction={idle!r}")
    check.expect(abs(idle - 0.5) <= 1e-9, f"got {idle!r}")


def c3_vqpu_delay_bound(check: Check) -> None:
    tasks = delayed = 0
    for seed in range(100):
        d = (10.0, 30.0, 240.0)[seed % 3]
        for k in (1, 2, 3, 4):
            cluster, jobs = random_scenario(seed, task_seconds=d, k=k)
            for job_id, enqueued, started in task_waits(simulate(cluster, jobs, "vqpu", seed=seed)):
                tasks += 1
                delayed += started > enqueued
                check.expect(
                    started - enqueued <= (k - 1) * d,
                    f"seed {seed} K={k} {job_id}: waited {started - enqueued!r} > {(k - 1) * d}",
                )
    check.notes.append(f"{tasks} tasks, {delayed} delayed")
    check.expect(delayed > 0, "no task ever waited; the property was not exercised")


def c4_degeneracy(check: Check) -> None:
    check.notes.append("50 workloads x 3 equivalences")
    for seed in range(50):
        cluster, jobs = random_scenario(seed, k=1)
        base = analyze(simulate(cluster, jobs, "coschedule", seed=seed), cluster).summary()
        vq = analyze(simulate(cluster, jobs, "vqpu", seed=seed), cluster).summary()
        check.expect(vq == base, f"seed {seed}: vqpu(K=1) differs")
        retain = max(j.nodes for j in jobs)
        ma = analyze(simulate(cluster, jobs, "malleable", seed=seed, retain=retain), cluster).summary()
        check.expect(ma == base, f"seed {seed}: malleable(retain=nodes) differs")

        cluster, jobs = random_scenario(seed, single_phase=True)
        base = analyze(simulate(cluster, jobs, "coschedule", seed=seed), cluster).summary()
        wf = analyze(simulate(cluster, jobs, "workflow", seed=seed), cluster).summary()
        check.expect(wf == base, f"seed {seed}: workflow(single-phase) differs")


def c5_directional(check: Check) -> None:
    cluster, jobs = contended_scenario("superconducting", vqpus_per_qpu=2)
    co = analyze(simulate(cluster, jobs, "coschedule"), cluster).qpu_utilization
    vq = analyze(simulate(cluster, jobs, "vqpu"), cluster).qpu_utilization
    check.notes.append(f"qpu_utilization vqpu={vq:.4f} coschedule={co:.4f}")
    check.expect(vq > co, f"vqpu {vq!r} <= coschedule {co!r}")

    cluster, jobs = contended_scenario("neutral-atoms")
    co = analyze(simulate(cluster, jobs, "coschedule"), cluster).node_utilization
    ma = analyze(simulate(cluster, jobs, "malleable"), cluster).node_utilization
    check.notes.append(f"node_utilization malleable={ma:.4f} coschedule={co:.4f}")
    check.expect(ma > co, f"malleable {ma!r} <= coschedule {co!r}")


def c6_oracle(check: Check) -> None:
    traces = 0
    for seed in range(50):
        cluster, jobs = random_scenario(seed)
        for name in STRATEGY_NAMES:
            trace = simulate(cluster, jobs, name, seed=seed)
            traces += 1
            check.expect(analyze(trace, cluster) == brute_force_analyze(trace, cluster), f"seed {seed} {name}")
    check.notes.append(f"{traces} traces")


def _outputs(cluster, jobs, seed: int) -> tuple[str, str]:
    traces, reports = [], []
    for name in STRATEGY_NAMES:
        trace = simulate(cluster, jobs, name, seed=seed)
        traces.append(trace.dumps())
        reports.append((name, analyze(trace, cluster)))
    csv = compare(reports).to_csv() + rows_to_csv([row for n, r in reports for row in job_rows(n, r)])
    return "".join(traces), csv


def c7_determinism(check: Check, tmp: Path) -> None:
    scenarios = [paper_scenario(t) for t in ("superconducting", "neutral-atoms")]
    scenarios += [contended_scenario(t) for t in ("superconducting", "neutral-atoms")]
    scenarios += [random_scenario(seed) for seed in range(20)]
    for index, (cluster, jobs) in enumerate(scenarios):
        check.expect(_outputs(cluster, jobs, index) == _outputs(cluster, jobs, index), f"scenario {index}")

    config = tmp / "scenario.toml"
    config.write_text(
        "seed = 17\n[cluster]\nclassical_nodes = 12\nvqpus_per_qpu = 2\n"
        'qpus = [{technology = "superconducting", count = 2}]\n'
        '[workload]\njob_count = 12\narrival = "poisson"\nrate_per_hour = 30\nnodes = [1, 12]\nqpu_gres = 2\n'
        'phases = [{kind = "classical", classical_work = [500, 5000]}, '
        '{kind = "quantum", quantum_tasks = [1, 20], prep_time = [0, 40]}]\n'
    )
    runs = []
    for attempt in ("a", "b"):
        out = tmp / attempt
        argv = ["compare", "--config", str(config), "--strategies", ",".join(STRATEGY_NAMES), "--out", str(out), "--trace"]
        with contextlib.redirect_stdout(io.StringIO()):
            check.expect(cli.main(argv) == 0, "cli compare failed")
        runs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    check.expect(runs[0] == runs[1], "cli outputs differ between runs")
    check.notes.append(f"{len(scenarios)} scenarios, {len(runs[0])} cli files")


def c8_parser(check: Check) -> None:
    expected = [
        ResourceRequest(0, CLASSICAL, nodes=10, qpu_gres=0, walltime=3600.0),
        ResourceRequest(1, QUANTUM, nodes=0, qpu_gres=1, walltime=3600.0),
    ]
    check.expect(parse_hetjob(LISTING) == expected, "listing mismatch")
    for name, script, kind, line in MALFORMED:
        try:
            parse_hetjob(script)
        except HetjobSyntaxError as exc:
            check.expect((exc.kind, exc.line) == (kind, line), f"{name}: got {exc.kind} at {exc.line}")
        else:
            check.failures.append(f"{name}: parsed without error")
    check.notes.append(f"{len(MALFORMED)} malformed cases")


def c9_conservation(check: Check) -> None:
    runs = 0
    variants = [
        ("coschedule", {}),
        ("workflow", {}),
        ("workflow", {"backfill": True}),
        ("vqpu", {}),
        ("malleable", {"retain": 1}),
        ("malleable", {"retain": 2, "backfill": True}),
    ]
    seed = 0
    while runs < 500:
        cluster, jobs = random_scenario(seed)
        for name, options in variants:
            if runs == 500:
                break
            trace = simulate(cluster, jobs, name, seed=seed, **options)
            problems = conservation_violations(trace, cluster)
            check.expect(not problems, f"seed {seed} {name} {options}: {problems[:2]}")
            runs += 1
        seed += 1
    check.notes.append(f"{runs} runs")


CRITERIA: list[tuple[int, str, float | None, Callable]] = [
    (1, "superconducting coschedule QPU utilization = 600/3600", 1.0, c1_superconducting),
    (2, "neutral-atoms coschedule idle node fraction = 0.5", 1.0, c2_neutral_atoms),
    (3, "VQPU wait <= (K-1)*d", 30.0, c3_vqpu_delay_bound),
    (4, "degenerate strategies equal coschedule", 60.0, c4_degeneracy),
    (5, "VQPU and malleability improve utilization", None, c5_directional),
    (6, "streaming analyzer equals brute-force oracle", 60.0, c6_oracle),
    (7, "byte-identical reruns", None, c7_determinism),
    (8, "hetjob parser", None, c8_parser),
    (9, "node conservation and QPU exclusion", 300.0, c9_conservation),
]


def evaluate(number: int, title: str, limit: float | None, fn: Callable, tmp: Path) -> tuple[bool, str]:
    check = Check()
    tmp.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    if fn is c7_determinism:
        fn(check, tmp)
    else:
        fn(check)
    elapsed = time.perf_counter() - start
    if limit is not None and elapsed >= limit:
        check.failures.append(f"took {elapsed:.1f}s, limit {limit:.0f}s")
    ok = not check.failures
    detail = "; ".join(check.notes + check.failures[:3])
    line = f"[{'PASS' if ok else 'FAIL'}] {number}. {title} ({elapsed:.2f}s) {detail}"
    return ok, line


@pytest.mark.parametrize("number, title, limit, fn", CRITERIA, ids=[f"criterion-{c[0]}" for c in CRITERIA])
def test_criterion(number, title, limit, fn, tmp_path, capsys):
    ok, line = evaluate(number, title, limit, fn, tmp_path)
    with capsys.disabled():
        print(f"\n{line}")
    assert ok, line


if __name__ == "__main__":
    import tempfile

    results = []
    with tempfile.TemporaryDirectory() as tmp:
        for number, title, limit, fn in CRITERIA:
            ok, line = evaluate(number, title, limit, fn, Path(tmp) / str(number))
            print(line, flush=True)
            results.append(ok)
    sys.exit(0 if all(results) else 1)
