import csv
import io
import json

import numpy as np
import pytest

from qcnet import cli, experiments
from qcnet.exceptions import ConfigError
from qcnet.tasks import IprTask, OverlapTask, load_substrates

TINY = {"pso": {"swarm_size": 8, "iterations": 10}, "gd": {"iterations": 3}}


def cfg(task, M=3, **extra):
    out = {"task": task, "network": {"M": M}, **TINY}
    if task["kind"] != "chemical":
        out["validation"] = {"N_v": 40}
    out.update(extra)
    return out


OVERLAP = {"kind": "overlap", "L": 2, "G": 2, "N_G": 1, "x": 0.3}
IPR = {"kind": "ipr", "L": 3, "N_TS": 4, "lo": 1.5, "hi": 2.5}
CHEM = {"kind": "chemical", "N_TS": 6, "n_descriptors": 4, "synthetic_rows": 18}


def test_defaults_filled():
    full = experiments.validate_config(cfg(OVERLAP))
    assert full["network"]["L"] == 2 and full["network"]["N_c"] == 2
    assert full["network"]["train_onsite"] is False
    assert full["rates"] == {"gamma_in": 1.0, "gamma": 1.0, "dephasing": 0.0,
                             "eval_dephasing": None}
    chem = experiments.validate_config({"task": {"kind": "chemical", "N_TS": 10},
                                        "network": {"M": 7}})
    assert chem["network"]["train_onsite"] is True and chem["network"]["L"] == 10
    assert chem["network"]["N_c"] == 3 and chem["validation"]["N_v"] is None


@pytest.mark.parametrize("bad,path", [
    ({"network": {"M": 3}}, "task"),
    ({"task": OVERLAP}, "network"),
    ({"task": {**OVERLAP, "G": 1}, "network": {"M": 3}}, "task.G"),
    ({"task": {"kind": "spiral"}, "network": {"M": 3}}, "task.kind"),
    ({"task": OVERLAP, "network": {"M": 0}}, "network.M"),
    ({"task": OVERLAP, "network": {"M": 3, "L": 4}}, "network.L"),
    ({"task": OVERLAP, "network": {"M": 3, "N_c": 3}}, "network.N_c"),
    ({"task": OVERLAP, "network": {"M": 3}, "rates": {"gamma": -1}}, "rates.gamma"),
    ({"task": OVERLAP, "network": {"M": 3}, "pso": {"w": 1.5}}, "pso.w"),
    ({"task": OVERLAP, "network": {"M": 3}, "colour": 1}, "colour"),
    ({"task": {**IPR, "N_TS": 5}, "network": {"M": 3}}, "task.N_TS"),
    ({"task": {**IPR, "lo": 3, "hi": 2}, "network": {"M": 3}}, "task.lo"),
    ({"task": {**OVERLAP, "N_G": 3}, "network": {"M": 3}}, "task.x"),
    ({"task": {"kind": "chemical", "N_TS": 10}, "network": {"M": 7, "train_onsite": False}},
     "network.train_onsite"),
    ({"task": {"kind": "chemical", "N_TS": 50}, "network": {"M": 7},
      "validation": {"N_v": 20}}, "validation.N_v"),
])
def test_config_errors_carry_paths(bad, path):
    with pytest.raises(ConfigError) as info:
        experiments.validate_config(bad)
    assert info.value.path == path


def test_config_hash_ignores_output_location():
    a = experiments.validate_config(cfg(OVERLAP))
    b = experiments.validate_config(cfg(OVERLAP, output_dir="elsewhere", n_jobs=3))
    c = experiments.validate_config(cfg(OVERLAP, seed=1))
    assert experiments.config_hash(a) == experiments.config_hash(b) != experiments.config_hash(c)


@pytest.mark.parametrize("task", [OVERLAP, IPR, CHEM])
def test_run_bundle(tmp_path, task):
    summary = experiments.run(cfg(task, repetitions=2), tmp_path)
    for name in ("metrics.json", "summary.json", "config.json", "rep00_model.json",
                 "rep01_cost_trace.csv"):
        assert (tmp_path / name).exists()
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    h = metrics["config_hash"]
    assert summary["config_hash"] == h and summary["repetitions"] == 2
    for key in ("macro_P", "macro_R", "accuracy"):
        assert set(summary[key]) == {"mean", "std", "n"}
    rep = metrics["repetitions"][0]
    assert set(rep["metrics"]) >= {"confusion", "per_class", "macro_P", "macro_R", "accuracy",
                                   "excluded_count"}
    trace = (tmp_path / "rep00_cost_trace.csv").read_text().splitlines()
    assert trace[0] == f"# config_hash={h}, seed={rep['seed']}"
    assert trace[1] == "epoch,train_cost,val_cost"
    model = json.loads((tmp_path / "rep00_model.json").read_text())
    assert model["config_hash"] == h and model["seed"] == rep["seed"]
    assert (tmp_path / "rep00_balance.csv").exists() == (task is OVERLAP)
    assert not list(tmp_path.glob(".*tmp"))


def test_ipr_validation_excludes_band(tmp_path):
    experiments.run(cfg(IPR), tmp_path)
    rep = json.loads((tmp_path / "metrics.json").read_text())["repetitions"][0]
    m = rep["metrics"]
    assert np.sum(m["confusion"]) == 40 and m["excluded_count"] > 0


def test_sample_std_and_single_rep(tmp_path):
    s = experiments.run(cfg(IPR, repetitions=1), tmp_path)
    assert s["accuracy"]["std"] is None
    s = experiments.run(cfg(IPR, repetitions=3), tmp_path / "b")
    reps = json.loads((tmp_path / "b" / "metrics.json").read_text())["repetitions"]
    acc = [r["metrics"]["accuracy"] for r in reps]
    assert s["accuracy"]["std"] == pytest.approx(np.std(acc, ddof=1))


def test_determinism_and_parallel_equivalence(tmp_path):
    c = cfg(IPR, repetitions=2)
    experiments.run(c, tmp_path / "a")
    experiments.run(c, tmp_path / "b")
    experiments.run({**c, "n_jobs": 2}, tmp_path / "c")
    a = (tmp_path / "a" / "metrics.json").read_bytes()
    assert a == (tmp_path / "b" / "metrics.json").read_bytes()
    assert a == (tmp_path / "c" / "metrics.json").read_bytes()


def test_repetition_seeds_do_not_depend_on_count(tmp_path):
    experiments.run(cfg(IPR, repetitions=1), tmp_path / "one")
    experiments.run(cfg(IPR, repetitions=2), tmp_path / "two")
    one = json.loads((tmp_path / "one" / "metrics.json").read_text())["repetitions"][0]
    two = json.loads((tmp_path / "two" / "metrics.json").read_text())["repetitions"][0]
    assert one["seed"] == two["seed"] and one["metrics"] == two["metrics"]


def test_failed_repetition_is_recorded(tmp_path, monkeypatch):
    import qcnet.experiments as ex
    from qcnet.train import TrainingError

    real = ex.train_network
    calls = {"n": 0}

    def flaky(spec, *a, **k):
        calls["n"] += 1
        if calls["n"] == 1:
            raise TrainingError("no particle found a non-degenerate network", None)
        return real(spec, *a, **k)

    monkeypatch.setattr(ex, "train_network", flaky)
    s = experiments.run(cfg(OVERLAP, repetitions=2), tmp_path)
    reps = json.loads((tmp_path / "metrics.json").read_text())["repetitions"]
    assert reps[0]["status"] == "failed" and "non-degenerate" in reps[0]["error"]
    assert reps[1]["status"] == "ok" and s["n_failed"] == 1 and s["accuracy"]["n"] == 1


def test_output_dir_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv(experiments.OUTPUT_ENV, str(tmp_path / "env"))
    experiments.run(cfg(OVERLAP))
    assert (tmp_path / "env" / "summary.json").exists()


def test_dephasing_sweep_trains_once(tmp_path, monkeypatch):
    import qcnet.experiments as ex

    calls = {"n": 0}
    real = ex.train_network

    def counting(*a, **k):
        calls["n"] += 1
        return real(*a, **k)

    monkeypatch.setattr(ex, "train_network", counting)
    text = experiments.sweep(cfg(IPR), "dephasing_rate", [0, 1, 10, 100], tmp_path)
    assert calls["n"] == 1
    lines = text.splitlines()
    assert lines[0].startswith("# config_hash=")
    rows = list(csv.DictReader(io.StringIO("\n".join(lines[1:]))))
    assert [r["dephasing_rate"] for r in rows] == ["0", "1", "10", "100"]
    assert set(rows[0]) >= {"macro_P_mean", "macro_P_std", "macro_R_mean", "accuracy_mean"}
    assert (tmp_path / "dephasing_rate=10" / "metrics.json").exists()
    assert (tmp_path / "sweep_dephasing_rate.csv").read_text() == text


def test_single_value_sweep_equals_run(tmp_path):
    c = cfg(IPR)
    experiments.sweep(c, "ts_size", [4], tmp_path / "sw")
    experiments.run(c, tmp_path / "run")
    a = json.loads((tmp_path / "sw" / "ts_size=4" / "metrics.json").read_text())
    b = json.loads((tmp_path / "run" / "metrics.json").read_text())
    assert a == b


def test_hidden_size_sweep(tmp_path):
    text = experiments.sweep(cfg(CHEM, M=2), "hidden_size", [2, 5], tmp_path)
    rows = list(csv.reader(io.StringIO(text)))
    assert [r[0] for r in rows[2:]] == ["2", "5"]
    c2 = json.loads((tmp_path / "hidden_size=2" / "config.json").read_text())
    assert c2["network"]["train_onsite"] is True


def test_sweep_errors():
    with pytest.raises(ConfigError):
        experiments.sweep(cfg(IPR), "temperature", [1])
    with pytest.raises(ConfigError):
        experiments.sweep(cfg(IPR), "hidden_size", [])


@pytest.mark.parametrize("kind,params", [("substrates", {}), ("overlap", {"N_G": 5}),
                                         ("ipr", {"L": 5, "N_TS": 10})])
def test_gen_data_is_reproducible(tmp_path, kind, params):
    a = experiments.gen_data(kind, params, 3, tmp_path / "a")
    b = experiments.gen_data(kind, params, 3, tmp_path / "b")
    c = experiments.gen_data(kind, params, 4, tmp_path / "c")
    assert a.read_bytes() == b.read_bytes() != c.read_bytes()
    if kind == "substrates":
        assert a.read_text().startswith("# seed=3")
        table = load_substrates(a)
        assert len(table) == 60 and set(table.labels) == {1, 2, 3}
    elif kind == "overlap":
        task = OverlapTask.from_json(a.read_text())
        assert task.groups.shape == (2, 5, 2) and task.params["seed"] == 3
    else:
        task = IprTask.from_json(a.read_text())
        assert len(task.labels) == 10 and task.params["seed"] == 3
    with pytest.raises(ConfigError):
        experiments.gen_data("weather", {}, 0, tmp_path / "d")


def test_csv_path_resolves_next_to_config(tmp_path):
    experiments.gen_data("substrates", {"n": 18, "n_descriptors": 4}, 0, tmp_path / "d.csv")
    (tmp_path / "c.json").write_text(json.dumps(cfg({**CHEM, "csv": "d.csv"})))
    loaded = experiments.load_config(tmp_path / "c.json")
    assert loaded["task"]["csv"] == str((tmp_path / "d.csv").resolve())
    experiments.run(loaded, tmp_path / "out")
    assert (tmp_path / "out" / "summary.json").exists()


# ------------------------------------------------------------------ CLI


def write_cfg(tmp_path, c):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(c))
    return path


def test_cli_validate_config(tmp_path, capsys):
    assert cli.main(["validate-config", str(write_cfg(tmp_path, cfg(OVERLAP)))]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["network"]["L"] == 2 and len(out["config_hash"]) == 16


def test_cli_config_error_json(tmp_path, capsys):
    path = write_cfg(tmp_path, {"task": OVERLAP, "network": {"M": -1}})
    assert cli.main(["validate-config", str(path)]) == cli.EXIT_CONFIG
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "config" and err["path"] == "network.M"


def test_cli_bad_json_and_missing_file(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["run", str(bad)]) == cli.EXIT_CONFIG
    assert json.loads(capsys.readouterr().err)["error"] == "config"
    assert cli.main(["run", str(tmp_path / "missing.json")]) == cli.EXIT_CONFIG
    assert "cannot read" in json.loads(capsys.readouterr().err)["message"]


def test_cli_run_and_sweep(tmp_path, capsys):
    path = write_cfg(tmp_path, cfg(OVERLAP))
    assert cli.main(["run", str(path), "-o", str(tmp_path / "r")]) == 0
    assert json.loads(capsys.readouterr().out)["macro_P"]["n"] == 1
    assert cli.main(["sweep", str(path), "--axis", "hidden_size", "--values", "2,3",
                     "-o", str(tmp_path / "s")]) == 0
    assert capsys.readouterr().out.splitlines()[1].startswith("hidden_size,")
    assert cli.main(["sweep", str(path), "--axis", "hidden_size", "--values", "a,b"]) == 2


def test_cli_gen_data_and_data_error(tmp_path, capsys):
    out = tmp_path / "subs.csv"
    assert cli.main(["gen-data", "substrates", str(out), "--seed", "2",
                     "--params", '{"n": 30}']) == 0
    assert len(load_substrates(out)) == 30
    capsys.readouterr()
    assert cli.main(["gen-data", "ipr", str(tmp_path / "x.json"), "--params", "[1]"]) == 2
    broken = tmp_path / "broken.csv"
    broken.write_text("id,d1,label\nA,1,1\n")
    path = write_cfg(tmp_path, cfg({**CHEM, "csv": str(broken)}))
    capsys.readouterr()
    assert cli.main(["run", str(path), "-o", str(tmp_path / "o")]) == 0
    # a malformed data file fails the repetition, and the run still finishes
    reps = json.loads((tmp_path / "o" / "metrics.json").read_text())["repetitions"]
    assert reps[0]["status"] == "failed" and "row 1" in reps[0]["error"]
