import json
import subprocess
import sys

import pytest

from palmscore.cli import main
from palmscore.io import load_predictions

SMALL = ["--n", "30", "--N", "150", "--p", "30", "--q", "3", "--seed", "4"]


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def sim(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim")
    assert run("simulate", *SMALL, "--out-dir", d) == 0
    return d


def pipeline(d, sim, threads):
    assert run("fit", "--data", sim / "data.csv", "--basis", sim / "basis.csv", "--mode", "semisup",
               "--T", 2, "--out", d / "model.json", "--report", d / "report.json",
               "--truth", sim / "truth.json", "--threads", threads) == 0
    assert run("embed", "--model", d / "model.json", "--basis", sim / "basis.csv", "--data", sim / "data.csv",
               "--out", d / "pred.csv", "--threads", threads) == 0
    assert run("eval", "--truth", sim / "truth.json", "--model", d / "model.json", "--predictions",
               d / "pred.csv", "--data", sim / "data.csv", "--out", d / "metrics.json") == 0
    return (d / "metrics.json").read_bytes()


def test_pipeline(tmp_path, sim):
    out = json.loads(pipeline(tmp_path, sim, 1))
    assert {"err_B", "err_Lambda", "Err", "auc", "prauc", "brier", "cosine"} <= set(out)
    assert out["n_scored"] == 120
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["mode"] == "semisup" and len(rep["err_trace"]) == 3
    assert "wall_time" not in rep


def test_threads_byte_identical(tmp_path, sim):
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir()
    b.mkdir()
    assert pipeline(a, sim, 1) == pipeline(b, sim, 8)
    assert (a / "model.json").read_bytes() == (b / "model.json").read_bytes()


@pytest.mark.parametrize("mode", ["sup", "unsup"])
def test_other_modes(tmp_path, sim, mode):
    assert run("fit", "--data", sim / "data.csv", "--basis", sim / "basis.csv", "--mode", mode, "--T", 1,
               "--out", tmp_path / "m.json") == 0
    assert json.loads((tmp_path / "m.json").read_text())["meta"]["mode"] == mode


def test_predict_single_subject(tmp_path, sim):
    assert run("fit", "--data", sim / "data.csv", "--basis", sim / "basis.csv", "--mode", "sup",
               "--out", tmp_path / "m.json") == 0
    lines = (sim / "data.csv").read_text().splitlines()
    (tmp_path / "one.csv").write_text(lines[0] + "\n" + lines[5] + "\n")
    assert run("predict", "--model", tmp_path / "m.json", "--basis", sim / "basis.csv", "--data",
               tmp_path / "one.csv", "--out", tmp_path / "p.csv") == 0
    ids, gamma, E = load_predictions(str(tmp_path / "p.csv"))
    assert len(ids) == 1 and 0 < gamma[0] < 1 and E.shape == (1, 0)


def test_no_labels_exit_5(tmp_path, sim, capsys):
    rows = (sim / "data.csv").read_text().splitlines()
    header = rows[0].split(",")
    yi = header.index("y")
    out = [rows[0]]
    for r in rows[1:]:
        cells = r.split(",")
        cells[yi] = ""
        out.append(",".join(cells))
    (tmp_path / "d.csv").write_text("\n".join(out) + "\n")
    code = run("fit", "--data", tmp_path / "d.csv", "--basis", sim / "basis.csv", "--out", tmp_path / "m.json")
    assert code == 5
    rec = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert rec["exit_code"] == 5


def test_schema_error_exit_3(tmp_path, sim):
    (tmp_path / "d.csv").write_text("id,y,x1\na,1,3.5\n")
    assert run("fit", "--data", tmp_path / "d.csv", "--basis", sim / "basis.csv", "--out", tmp_path / "m") == 3


def test_checksum_exit_4(tmp_path, sim):
    run("fit", "--data", sim / "data.csv", "--basis", sim / "basis.csv", "--mode", "sup", "--out", tmp_path / "m.json")
    obj = json.loads((tmp_path / "m.json").read_text())
    obj["b"][0] += 1
    (tmp_path / "m.json").write_text(json.dumps(obj))
    assert run("predict", "--model", tmp_path / "m.json", "--basis", sim / "basis.csv", "--data",
               sim / "data.csv", "--out", tmp_path / "p.csv") == 4


def test_config_file(tmp_path, sim):
    (tmp_path / "c.json").write_text(json.dumps({"mode": "sup", "outer_max_iters": 2}))
    assert run("fit", "--config", tmp_path / "c.json", "--data", sim / "data.csv", "--basis", sim / "basis.csv",
               "--out", tmp_path / "m.json") == 0
    (tmp_path / "bad.json").write_text(json.dumps({"nope": 1}))
    assert run("fit", "--config", tmp_path / "bad.json", "--data", sim / "data.csv", "--basis",
               sim / "basis.csv", "--out", tmp_path / "m.json") == 3


def test_usage_errors():
    with pytest.raises(SystemExit) as info:
        main(["fit", "--bogus"])
    assert info.value.code == 2
    proc = subprocess.run([sys.executable, "-m", "palmscore", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "exit status" in proc.stdout


def test_benchmark_command(tmp_path):
    grid = {"grid": [{"n": 20, "N": 60, "p": 20, "q": 2, "seed": 1}], "replications": 2}
    (tmp_path / "g.json").write_text(json.dumps(grid))
    assert run("benchmark", "--grid", tmp_path / "g.json", "--methods", "sup,semisup", "--T", 1,
               "--out-dir", tmp_path / "out") == 0
    res = json.loads((tmp_path / "out" / "results.json").read_text())
    assert [r["method"] for r in res] == ["sup", "semisup"]
    assert all(r["replications"] == 2 for r in res)
    assert (tmp_path / "out" / "results.csv").read_text().count("\n") == 3
