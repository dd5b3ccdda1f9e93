import json

import pytest

from ebblip.cli import main
from ebblip.harness import COLUMNS, read_metrics

SMALL = ["--stream.n_per_batch", "1500", "--stream.n_batches", "3", "--stream.n_test", "500"]


def test_regret_bound(capsys):
    assert main(["regret-bound", "--regret.d", "46", "--regret.T", "1000", "--regret.S", "1"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["c"] == 2.0 and abs(doc["p"] - 0.0855) < 1e-4 and doc["bound"] > 0


def test_regret_bound_missing_key():
    assert main(["regret-bound", "--regret.d", "4"]) == 3


def test_seed_required():
    with pytest.raises(SystemExit) as info:
        main(["run-scenario"])
    assert info.value.code == 3


def test_run_scenario_all(tmp_path):
    out = tmp_path / "m.csv"
    assert main(["run-scenario", "--seed", "1", "--scenario", "all", "--output.path", str(out)]
                + SMALL) == 0
    for name in ("blip", "blip_bayes", "blip_twice"):
        s = read_metrics(tmp_path / f"m_{name}.csv")
        assert len(s) == 3
    header = (tmp_path / "m_blip.csv").read_text().splitlines()[0]
    assert header == ",".join(COLUMNS)


def test_config_document_and_replay(tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(
        "scenario: blip_bayes\nreset_batch: 1\n"
        "bootstrap: {max_epochs: 10, resample: true}\n"
        "stream: {n_per_batch: 1500, n_batches: 3, n_test: 500}\n"
        f"output: {{path: {tmp_path / 'a.jsonl'}, format: jsonl}}\n")
    assert main(["run-scenario", "--seed", "2", "--config", str(cfg)]) == 0
    first = (tmp_path / "a.jsonl").read_bytes()
    assert main(["run-scenario", "--seed", "2", "--config", str(cfg)]) == 0
    assert (tmp_path / "a.jsonl").read_bytes() == first
    assert len(first.splitlines()) == 3


def test_flag_overrides_config(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"scenario": "blip", "output": {"path": str(tmp_path / "x.csv")}}))
    assert main(["run-scenario", "--seed", "0", "--config", str(cfg), "--reset_batch", "2"]
                + SMALL) == 0
    assert [r.batch for r in read_metrics(tmp_path / "x.csv").rows] == [2, 3]


def test_degenerate_exit_code(capsys):
    code = main(["estimate-prior", "--seed", "0", "--stream.n_per_batch", "100",
                 "--stream.n_test", "0", "--bootstrap.max_epochs", "1"])
    assert code == 2
    assert "degenerate" in capsys.readouterr().err


def test_estimate_prior(capsys):
    assert main(["estimate-prior", "--seed", "0"] + SMALL) == 0
    doc = json.loads(capsys.readouterr().out)
    assert set(doc["estimates"]) == {"first_order", "second_order"}
    assert doc["epochs_used"] >= 1


@pytest.mark.parametrize("argv", [
    ["run-scenario", "--seed", "0", "--scenario", "bogus"],
    ["run-scenario", "--seed", "0", "--reset_batch", "x"],
    ["run-scenario", "--seed", "0", "--prior_override.tau1_sq", "1"],
    ["bandit-ab", "--seed", "0", "--env.widgets", "3", "--env.variations", "2,2"],
    ["ingest", "--data.path", "a.csv"],
])
def test_config_errors(argv):
    assert main(argv) == 3


def test_unknown_key_in_document(tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("bandit: {T: 10}\n")
    assert main(["run-scenario", "--seed", "0", "--config", str(cfg)]) == 3
    cfg.write_text("colour: red\n")
    assert main(["run-scenario", "--seed", "0", "--config", str(cfg)]) == 3


def test_io_errors(tmp_path):
    assert main(["run-scenario", "--seed", "0", "--config", str(tmp_path / "none.yaml")]) == 4
    assert main(["run-scenario", "--seed", "0", "--scenario", "blip",
                 "--output.path", str(tmp_path / "no" / "dir.csv")] + SMALL) == 4
    assert main(["ingest", "--data.path", str(tmp_path / "none.csv"), "--data.label_column", "y",
                 "--data.positive_label", "1", "--output.path", str(tmp_path / "s.jsonl")]) == 4


def test_ingest_then_scenario(tmp_path):
    rows = ["a,b,y"] + [f"{i % 3},{(i * 7) % 4},{int((i % 3) + (i % 2) > 1)}" for i in range(600)]
    (tmp_path / "d.csv").write_text("\n".join(rows) + "\n")
    (tmp_path / "t.csv").write_text("\n".join(rows[:100]) + "\n")
    out = tmp_path / "s.jsonl"
    assert main(["ingest", "--data.path", str(tmp_path / "d.csv"), "--data.label_column", "y",
                 "--data.positive_label", "1", "--data.test_path", str(tmp_path / "t.csv"),
                 "--data.n_batches", "3", "--output.path", str(out)]) == 0
    assert (tmp_path / "s.schema.json").exists()
    assert main(["run-scenario", "--seed", "0", "--scenario", "blip", "--data.path", str(out),
                 "--output.path", str(tmp_path / "m.csv")]) == 0
    assert len(read_metrics(tmp_path / "m.csv")) == 3


def test_tau_sweep(tmp_path):
    out = tmp_path / "sweep.csv"
    assert main(["tau-sweep", "--seed", "3", "--sweep.overrides", "5,5;0.01,0.01",
                 "--output.path", str(out)] + SMALL) == 0
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["sweep_blip.csv", "sweep_optimal.csv", "sweep_tau1_0.01_tau2_0.01.csv",
                     "sweep_tau1_5_tau2_5.csv"]


def test_bandit_ab(tmp_path):
    out = tmp_path / "ab.csv"
    assert main(["bandit-ab", "--seed", "0", "--seeds", "2", "--bandit.T", "3000",
                 "--bandit.random_phase", "1000", "--output.path", str(out)]) == 0
    summary = json.loads((tmp_path / "ab_summary.json").read_text())
    assert summary["seeds"] == [0, 1]
    assert len(summary["final_regret"]["eb"]) == 2
    assert (tmp_path / "ab_eb_seed1.csv").exists()
