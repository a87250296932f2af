import json

import pytest

from arwssm.cli import main, records_csv


def run(tmp_path, *argv):
    out = tmp_path / "out"
    code = main([*argv, "--out", str(out)])
    return code, out


def test_stabilize_writes_csv_and_manifest(tmp_path):
    code, out = run(tmp_path, "stabilize", "--model", "arw", "--lambda", "1", "--mu", "0.8", "--L", "30")
    assert code == 0
    head = (out / "stabilize.csv").read_text().splitlines()[0]
    assert head == "site,half_count,topplings,initial,final"
    man = json.loads((out / "manifest.json").read_text())
    assert man["subcommand"] == "stabilize" and man["config"]["mu"] == "0.8"
    assert "timestamp" in man and man["outputs"] == ["stabilize.csv"]


def test_engines_agree(tmp_path):
    args = ["stabilize", "--model", "ssm", "--mu", "0.9", "--L", "40", "--seed", "3"]
    main([*args, "--engine", "generic", "--out", str(tmp_path / "a")])
    main([*args, "--engine", "compiled", "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "stabilize.csv").read_text() == (tmp_path / "b" / "stabilize.csv").read_text()


@pytest.mark.parametrize("argv", [
    ["stabilize", "--model", "foo", "--mu", "1"],
    ["stabilize", "--mu", "x"],
    ["stabilize", "--lambda", "-2", "--mu", "1"],
    ["stabilize", "--format", "xml", "--mu", "1"],
    ["stabilize"],
    ["frobnicate"],
    ["scan", "--mu", "0.5,0.2"],
])
def test_usage_errors_exit_two(tmp_path, argv, capsys):
    assert main([*argv, "--out", str(tmp_path)]) == 2
    assert "--" in capsys.readouterr().err or argv[0] == "frobnicate"


def test_certificate_failure_exits_one(tmp_path):
    # seed 7 puts a particle at the origin
    code, out = run(tmp_path, "certify", "--model", "arw", "--lambda", "1", "--mu", "0.3", "--n", "50", "--seed", "7")
    assert code == 1
    assert "success false" in (out / "certificate.txt").read_text()


def test_certificate_success_exits_zero(tmp_path):
    code, out = run(tmp_path, "certify", "--model", "ssm", "--mu", "0.1", "--n", "2", "--seed", "2")
    text = (out / "verification.csv").read_text()
    assert code == 0 and "True" in text.splitlines()[1]


def test_sample_increments_mean_column(tmp_path):
    code, out = run(tmp_path, "sample-increments", "--model", "arw", "--count", "20000", "--seed", "1")
    rows = (out / "increments.csv").read_text().splitlines()
    head, row = rows[0].split(","), rows[1].split(",")
    assert code == 0 and abs(float(row[head.index("mean")]) - 2.0) < 0.05


def test_records_format(tmp_path):
    code, out = run(tmp_path, "dynamics", "--model", "arw", "--mu", "0.5", "--L", "10", "--format", "records")
    lines = (out / "dynamics.jsonl").read_text().splitlines()
    assert code == 0 and all(json.loads(line) is not None for line in lines)


def test_determinism_across_workers(tmp_path):
    args = ["scan", "--model", "ssm", "--mu", "0.3,0.9", "--L", "20,40", "--replicas", "8", "--seed", "5"]
    main([*args, "--workers", "1", "--out", str(tmp_path / "a")])
    main([*args, "--workers", "2", "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "scan.csv").read_bytes() == (tmp_path / "b" / "scan.csv").read_bytes()


def test_config_precedence_and_manifest_replay(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("model = arw\nlambda = 2\nmu = 0.4\nL = 15\nseed = 4\n")
    main(["stabilize", "--config", str(cfg), "--seed", "6", "--out", str(tmp_path / "a")])
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["config"]["lambda"] == "2" and man["seed"] == 6
    main(["stabilize", "--config", str(tmp_path / "a" / "manifest.json"), "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "stabilize.csv").read_text() == (tmp_path / "b" / "stabilize.csv").read_text()


def test_bad_config_is_usage_error(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("colour = blue\n")
    assert main(["stabilize", "--config", str(cfg), "--mu", "1"]) == 2
    assert main(["stabilize", "--config", str(tmp_path / "missing.cfg"), "--mu", "1"]) == 2


def test_output_directory_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("ARWSSM_OUT", str(tmp_path / "env"))
    assert main(["stabilize", "--mu", "0.5", "--L", "5"]) == 0
    assert (tmp_path / "env" / "stabilize.csv").exists()


def test_records_csv_union_of_keys():
    text = records_csv([{"a": 1, "b": [1, 2]}, {"c": 0.5}])
    assert text == "a,b,c\n1,1;2,\n,,0.5\n"
