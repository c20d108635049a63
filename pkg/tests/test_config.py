import pytest

from hqsim.config import ConfigError, apply_overrides, build_config, load_config, parse_value

BASE = {
    "seed": 3,
    "cluster": {"classical_nodes": 8, "qpus": [{"technology": "superconducting", "count": 1}]},
    "workload": {"job_count": 3, "nodes": [1, 4], "phases": [{"kind": "quantum", "quantum_tasks": 2}]},
}


def config(**sections):
    data = {k: dict(v) if isinstance(v, dict) else v for k, v in BASE.items()}
    data.update(sections)
    return data


def test_minimal():
    cfg = build_config(config())
    assert cfg.cluster.classical_nodes == 8 and cfg.cluster.vqpus_per_qpu == 1
    assert len(cfg.jobs) == 3 and cfg.strategy.name == "coschedule"
    assert (cfg.output_format, cfg.output_dir, cfg.trace) == ("csv", None, False)


def test_custom_technology():
    cluster = {
        "classical_nodes": 4,
        "technologies": {"ion": {"task_duration": [60, 600], "calibration_overhead": 5}},
        "qpus": [{"technology": "ion", "count": 2}],
    }
    cfg = build_config(config(cluster=cluster))
    assert [p.name for p in cfg.cluster.qpu_profiles()] == ["ion", "ion"]


@pytest.mark.parametrize(
    "data, field",
    [
        (config(cluster={**BASE["cluster"], "vqpus_per_qpu": 0}), "cluster.vqpus_per_qpu"),
        (config(cluster={**BASE["cluster"], "classical_nodes": 0}), "cluster.classical_nodes"),
        (config(cluster={"classical_nodes": 2, "qpus": [{"technology": "x", "count": 1}]}), "cluster.qpus[0].technology"),
        (config(cluster={"classical_nodes": 2, "qpus": []}), "cluster.qpus"),
        (config(strategy={"name": "fifo"}), "strategy.name"),
        (config(strategy={"name": "vqpu", "backfill": True}), "strategy.backfill"),
        (config(strategy={"name": "malleable", "retain": 0}), "strategy.retain"),
        (config(output={"format": "xml"}), "output.format"),
        (config(seed=-1), "seed"),
        (config(workload={"job_count": 1}), "workload"),
        (config(workload={"file": "missing.jsonl"}), "workload.file"),
        (config(workload={"scenario": "trapped-ion"}), "workload.scenario"),
        (config(workload={"phases": [{"kind": "quantum", "quantum_tasks": "many"}]}), "workload.phases[0].quantum_tasks"),
        ({"workload": {"scenario": "superconducting"}, "cluster": {"classical_nodes": 4}}, "cluster.classical_nodes"),
    ],
)
def test_errors_name_the_field(data, field, tmp_path):
    with pytest.raises(ConfigError) as info:
        build_config(data, tmp_path)
    assert info.value.field == field


def test_scenario_workload():
    cfg = build_config({"workload": {"scenario": "neutral-atoms"}, "cluster": {"vqpus_per_qpu": 3}})
    assert cfg.cluster.classical_nodes == 10 and cfg.cluster.vqpus_per_qpu == 3
    assert [j.job_id for j in cfg.jobs] == ["hybrid"]


def test_hetjob_requests(tmp_path):
    (tmp_path / "job.sh").write_text("#SBATCH --partition quantum\n#SBATCH --gres=qpu:1\n#SBATCH --time=00:10:00\n")
    workload = {"hetjob": "job.sh", "job_count": 2, "phases": [{"kind": "quantum"}]}
    cfg = build_config(config(workload=workload), tmp_path)
    assert all(j.walltime() == 600.0 and j.nodes == 0 for j in cfg.jobs)
    (tmp_path / "job.sh").write_text("#SBATCH --partition quantum\n#SBATCH --gres=qpu:0\n#SBATCH --time=00:10:00\n")
    with pytest.raises(ConfigError, match="job.sh:2: MalformedGres"):
        build_config(config(workload=workload), tmp_path)


def test_overrides():
    assert parse_value("3") == 3 and parse_value('"x"') == "x" and parse_value("abc") == "abc"
    data = apply_overrides(config(), ["cluster.vqpus_per_qpu=4", "strategy.name=vqpu", "seed=9"])
    cfg = build_config(data)
    assert (cfg.cluster.vqpus_per_qpu, cfg.strategy.name, cfg.seed) == (4, "vqpu", 9)
    with pytest.raises(ConfigError):
        apply_overrides(config(), ["novalue"])


def test_load_config(tmp_path):
    path = tmp_path / "s.toml"
    path.write_text(
        'seed = 1\n[cluster]\nclassical_nodes = 4\nqpus = [{technology = "superconducting", count = 1}]\n'
        '[workload]\njob_count = 2\nphases = [{kind = "classical", classical_work = 100}]\n'
        '[output]\ndir = "out"\n'
    )
    cfg = load_config(path)
    assert cfg.output_dir == tmp_path / "out"
    path.write_text("seed = \n")
    with pytest.raises(ConfigError):
        load_config(path)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.toml")
