import json
import subprocess
import sys

import numpy as np
import pytest

from gridcascade.cli import level_path, main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def artifacts(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["simulate", "--loading", "1.2,1.5", "--samples", "40", "--seed", "3",
                 "--out", str(d / "pool.jsonl")]) == 0
    assert main(["train", "--pool", str(d / "pool_c1.50.jsonl"), "--out", str(d / "model.json")]) == 0
    return d


def test_level_path():
    assert level_path("a/pool.jsonl", 1.2, False) == "a/pool.jsonl"
    assert level_path("a/pool.jsonl", 1.2, True) == "a/pool_c1.20.jsonl"


def test_simulate_writes_one_pool_per_level(artifacts):
    for c in ("1.20", "1.50"):
        lines = (artifacts / f"pool_c{c}.jsonl").read_text().splitlines()
        manifest = json.loads((artifacts / f"pool_c{c}.jsonl.manifest.json").read_text())
        assert manifest["case_hash"] and manifest["config_hash"] and manifest["master_seed"] == 3
        assert len(lines) == 40


def test_manifest_split(tmp_path, capsys):
    code, out, _ = run(capsys, "simulate", "--samples", "300", "--loading", "0.9", "--seed", "1",
                       "--out", str(tmp_path / "p.jsonl"))
    assert code == 0
    from gridcascade.cascade import read_pool
    pool = read_pool(str(tmp_path / "p.jsonl"))
    assert (len(pool.train), len(pool.test)) == (270, 30)
    assert pool.meta["master_seed"] == 1 and pool.meta["policy"] == "none"


def test_simulate_repeat_is_byte_identical(tmp_path, artifacts):
    assert main(["simulate", "--loading", "1.2,1.5", "--samples", "40", "--seed", "3",
                 "--out", str(tmp_path / "pool.jsonl")]) == 0
    for c in ("1.20", "1.50"):
        name = f"pool_c{c}.jsonl"
        assert (tmp_path / name).read_bytes() == (artifacts / name).read_bytes()


def test_full_redispatch_skips_infeasible_levels(tmp_path, capsys):
    code, out, _ = run(capsys, "simulate", "--policy", "redispatch-full", "--loading", "1.3,1.4",
                       "--samples", "10", "--out", str(tmp_path / "p.jsonl"))
    assert code == 0
    res = json.loads(out)
    assert [p["loading_c"] for p in res["pools"]] == [1.3]
    assert res["skipped"][0]["loading_c"] == 1.4 and res["skipped"][0]["reason"]


def test_train_output(artifacts):
    doc = json.loads((artifacts / "model.json").read_text())
    assert doc["meta"]["case_hash"] and doc["meta"]["config_hash"] and doc["meta"]["model_id"]
    assert doc["meta"]["policy"] == "none"


def test_predict_advisory_and_eval(artifacts, capsys):
    code, out, _ = run(capsys, "predict", "--model", str(artifacts / "model.json"), "--contingency", "3,17",
                       "--loading", "1.5")
    assert code == 0
    doc = json.loads(out)
    assert doc["mode"] == "advisory" and doc["contingency"] == [3, 17]
    assert len(doc["ever_shed"]) == 30
    S = np.array(doc["cascade"]["states"])
    assert S[0, 3] == 0 and S[0, 17] == 0
    first = json.loads((artifacts / "pool_c1.50.jsonl").read_text().splitlines()[0])
    pair = ",".join(map(str, first["initial_failures"]))
    code, out, _ = run(capsys, "predict", "--model", str(artifacts / "model.json"), "--contingency", pair,
                       "--loading", "1.5", "--mode", "eval", "--states", str(artifacts / "pool_c1.50.jsonl"))
    assert code == 0 and json.loads(out)["mode"] == "eval"


def test_predict_errors(artifacts, capsys):
    code, _, err = run(capsys, "predict", "--model", str(artifacts / "model.json"), "--contingency", "3,3")
    assert code == 1 and json.loads(err)["code"] == "invalid_argument"
    code, _, err = run(capsys, "predict", "--model", str(artifacts / "model.json"), "--contingency", "1,2",
                       "--mode", "eval")
    assert code == 1 and "states" in json.loads(err)["message"]


def test_evaluate_train_and_test_side_by_side(artifacts, capsys):
    code, out, _ = run(capsys, "evaluate", "--model", str(artifacts / "model.json"),
                       "--pool", str(artifacts / "pool_c1.50.jsonl"))
    assert code == 0
    row = json.loads(out)["results"][0]
    for side in ("train", "test"):
        assert 0 <= row[side]["link_accuracy"] <= 1 and 0 <= row[side]["shed_accuracy"] <= 1


def test_report_from_artifacts(artifacts, tmp_path, capsys):
    code, _, _ = run(capsys, "report", "--pool", str(artifacts / "pool_c1.50.jsonl"),
                     "--model", str(artifacts / "model.json"), "--out", str(tmp_path / "rep"))
    assert code == 0
    rep = tmp_path / "rep"
    for name in ("losses.csv", "accuracy.csv", "report.json", "criticality.json", "timing.json",
                 "heatmaps/D_none_c1.50.csv", "heatmaps/E_none_c1.50.csv"):
        assert (rep / name).exists(), name
    timing = json.loads((rep / "timing.json").read_text())["rows"][0]
    assert timing["oracle_mean_s"] > 0 and timing["predict_mean_s"] > 0
    D = np.loadtxt(rep / "heatmaps/D_none_c1.50.csv", delimiter=",", skiprows=1)
    assert D.shape == (41, 41)


def test_report_all_smart_policy_diagonal(tmp_path, capsys):
    code, _, _ = run(capsys, "report", "--all", "--policy", "redispatch-smart", "--loading", "1.5",
                     "--samples", "30", "--no-timing", "--out", str(tmp_path))
    assert code == 0
    D = np.loadtxt(tmp_path / "heatmaps/D_redispatch-smart_c1.50.csv", delimiter=",", skiprows=1)
    off = D - np.diag(np.diag(D))
    assert np.all(off.sum(axis=1) < 1e-6)
    assert not (tmp_path / "timing.json").exists()


def test_case_mismatch_refused(artifacts, tmp_path, capsys):
    from conftest import make_net
    from gridcascade.cascade import read_pool
    from gridcascade.cli import CLIError, _train_from
    from gridcascade.grid import ieee30, to_json

    tiny = make_net([0.0, 10.0, 10.0], [(0, 1, 0.1, 50), (1, 2, 0.1, 50), (0, 2, 0.1, 50)], [(0, 100.0)])
    path = tmp_path / "tiny.json"
    path.write_text(to_json(tiny))
    assert main(["simulate", "--case", str(path), "--samples", "5", "--out", str(tmp_path / "t.jsonl")]) == 0
    capsys.readouterr()
    # the CLI checks every pool against the case it was given
    code, _, err = run(capsys, "train", "--pool", str(tmp_path / "t.jsonl"), "--out", str(tmp_path / "m.json"))
    assert code == 1 and "case" in json.loads(err)["message"]
    pools = [read_pool(str(tmp_path / "t.jsonl")), read_pool(str(artifacts / "pool_c1.50.jsonl"))]
    with pytest.raises(CLIError) as exc:
        _train_from(pools, ["a", "b"], ieee30(), 0.9, 0.9)
    assert exc.value.code == "case_mismatch"


def test_missing_and_corrupt_inputs(tmp_path, capsys):
    code, _, err = run(capsys, "train", "--pool", str(tmp_path / "nope.jsonl"), "--out", str(tmp_path / "m.json"))
    assert code == 1 and set(json.loads(err)) == {"code", "message", "detail"}
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    code, _, err = run(capsys, "evaluate", "--model", str(bad), "--pool", str(bad))
    assert code == 1 and json.loads(err)["message"]
    code, _, err = run(capsys, "simulate", "--split", "1.5", "--out", str(tmp_path / "p.jsonl"))
    assert code == 1
    code, _, err = run(capsys, "train", "--pool", "x")
    assert code == 1 and "--out" in json.loads(err)["message"]


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "gridcascade.cli", "predict", "--model", str(tmp_path / "none.json"),
                           "--contingency", "1,2"], capture_output=True, text=True)
    assert proc.returncode == 1
    assert json.loads(proc.stderr.strip().splitlines()[-1])["code"]
