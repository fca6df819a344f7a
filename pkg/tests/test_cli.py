import csv
import io
import json

import pytest

from hybridattn import cli
from hybridattn.tasks import loads_instance, oracle


def run(argv, capsys):
    code = cli.main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_gen_is_deterministic_and_valid(tmp_path, capsys):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert cli.main(["gen", "eva", "n=16", "--seed", "1", "--out", str(a)]) == 0
    assert cli.main(["gen", "eva", "n=16", "--seed", "1", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    obj = json.loads(a.read_text())
    assert obj["task"] == "eva" and obj["params"]["n"] == "16" and len(obj["payload"]["f"]) == 16
    inst = loads_instance(a.read_text())
    assert 1 <= oracle(inst) <= 16


def test_gen_funccomp_is_oracle_runnable(tmp_path):
    path = tmp_path / "f.json"
    assert cli.main(["gen", "funccomp", "L=2", "m=2", "ns=2", "--seed", "3", "--out", str(path)]) == 0
    inst = loads_instance(path.read_text())
    assert oracle(inst) in range(1, inst.spec.Ns[-1] + 1)


def test_solve_retrieval_and_starved_precision(tmp_path, capsys):
    path = tmp_path / "e.json"
    cli.main(["gen", "eva", "n=16", "--seed", "1", "--out", str(path)])
    code, out, _ = run(["solve", str(path)], capsys)
    rec = json.loads(out)
    assert code == 0 and rec["agreement"] is True and rec["Hdp"] == rec["H"] * rec["d"] * rec["p"]
    code, out, _ = run(["solve", str(path), "--p", "1", "--frac-bits", "0"], capsys)
    rec = json.loads(out)
    assert code == 0 and (rec["agreement"] is False or rec["error"]) and "Hdp" in rec


def test_solve_hybrid(tmp_path, capsys):
    path = tmp_path / "f.json"
    cli.main(["gen", "funccomp", "L=2", "m=2", "ns=2", "--seed", "3", "--out", str(path)])
    code, out, _ = run(["solve", str(path), "--mechanism", "hybrid", "--schedule", "1,0"], capsys)
    assert code == 0 and json.loads(out)["agreement"] is True


def test_solve_mismatch_is_validation_error(tmp_path, capsys):
    path = tmp_path / "e.json"
    cli.main(["gen", "eva", "n=4", "--out", str(path)])
    code, _, err = run(["solve", str(path), "--mechanism", "hybrid"], capsys)
    assert code == 2 and "error" in err


def test_collide_examples(capsys):
    code, out, _ = run(["collide", "rnn_eva", "--n", "3", "--budget", "4"], capsys)
    obj = json.loads(out)
    s = obj["summary"]
    assert code == 0 and s["found"] and s["verified"] and s["classes"] <= 2**4
    assert sum(int(k) * v for k, v in s["class_size_histogram"].items()) == s["inputs"] == 27
    code, out, _ = run(["collide", "rnn_eva", "--n", "2", "--budget", "8", "--strategy", "injective"], capsys)
    obj = json.loads(out)
    assert code == 0 and not obj["summary"]["found"] and obj["witness"] is None


def test_collide_sparse(capsys):
    code, out, _ = run(["collide", "sparse_twosum", "--n", "8", "--M", "8", "--B", "4", "--budget", "5", "--strategy", "hash"], capsys)
    obj = json.loads(out)
    assert code == 0 and obj["summary"]["verified"] and obj["witness"]["oracle_a"] != obj["witness"]["oracle_b"]


@pytest.mark.parametrize("argv", [
    ["collide", "rnn_eva", "--n", "9", "--budget", "8"],
    ["collide", "linear_twosum", "--n", "8", "--M", "400", "--budget", "8"],
])
def test_resource_cap_exit_code(argv, capsys):
    code, _, err = run(argv, capsys)
    assert code == 3 and "cap" in err


@pytest.mark.parametrize("argv", [
    ["gen", "eva", "n=0"],
    ["gen", "eva", "n"],
    ["gen", "eva", "n=4", "--seed", "-1"],
    ["table", "nope"],
    ["params", "1", "2", "1", "9"],
])
def test_validation_exit_code(argv, capsys):
    code, _, err = run(argv, capsys)
    assert code == 2 and err.startswith("error:")


def test_params_report(capsys):
    code, out, _ = run(["params", "1", "2", "1", "2"], capsys)
    rep = json.loads(out)
    assert code == 0 and rep["K"]["log2"] == "40" and rep["equalities_hold"]
    assert rep["size_bound"]["holds"] and rep["hybrid_budget"]["holds"]
    for key in ("x", "n", "log2_Delta", "Theta"):
        assert key in rep
    # big integers are strings, never floats
    assert isinstance(rep["K"]["decimal"], str)


def test_budget_hybrid(capsys):
    code, out, _ = run(["budget", "hybrid_funccomp", "--L", "2", "--m", "2", "--ns", "2", "--schedule", "1,0", "--d", "2", "--p", "2"], capsys)
    b = json.loads(out)
    assert code == 0 and b["channels"]["linear"] == 12 and b["channels"]["soft->1"] == 16


def test_config_overrides_flags(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seed": 5}))
    _, a, _ = run(["gen", "eva", "n=4", "--config", str(cfg)], capsys)
    _, b, _ = run(["gen", "eva", "n=4", "--seed", "5"], capsys)
    _, c, _ = run(["gen", "eva", "n=4", "--seed", "6"], capsys)
    assert a == b != c
    cfg.write_text(json.dumps({"bogus": 1}))
    assert run(["gen", "eva", "n=4", "--config", str(cfg)], capsys)[0] == 2


def test_output_env_var(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "out"))
    code, out, _ = run(["gen", "eva", "n=4", "--seed", "2"], capsys)
    assert code == 0 and out == ""
    files = list((tmp_path / "out").iterdir())
    assert len(files) == 1 and json.loads(files[0].read_text())["task"] == "eva"


@pytest.mark.slow
def test_hierarchy_table_deterministic(capsys):
    code, first, _ = run(["table", "hierarchy", "--seed", "0"], capsys)
    _, second, _ = run(["table", "hierarchy", "--seed", "0"], capsys)
    assert code == 0 and first == second
    rows = list(csv.DictReader(io.StringIO(first)))
    assert len(rows) == len(cli.hierarchy_rows(0))
    mechanisms = {r["mechanism"] for r in rows}
    tasks = {r["task"] for r in rows}
    assert {"full", "linear", "loglinear", "sparse"} <= mechanisms
    assert {"eva", "percom", "twosum", "funccomp"} <= tasks
