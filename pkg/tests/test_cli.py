import json
import subprocess
import sys

import pytest

from trigcopy.checkpoint import load_checkpoint
from trigcopy.cli import main
from trigcopy.datagen import read_jsonl
from trigcopy.experiments import METRIC_COLUMNS, read_metrics_csv

SMALL = ["--N", "16", "--L", "30", "--M-V", "128", "--M-KQ", "128"]


def run(capsys, *argv):
    rc = main(list(argv))
    out = capsys.readouterr().out
    return rc, out


def run_json(capsys, *argv):
    rc, out = run(capsys, *argv)
    assert rc == 0, out
    return json.loads(out)


def test_lp(capsys):
    rep = run_json(capsys, "lp", "--n-trg", "2", "--U", "3", "--resolution", "30")
    assert rep["objective"] == "3" and rep["kkt"]["satisfied"]


def test_lp_invalid(capsys):
    rc, _ = run(capsys, "lp", "--n-trg", "4", "--U", "2")
    assert rc == 2


def test_config_error(capsys, tmp_path):
    rc, _ = run(capsys, "train", "--out", str(tmp_path), "--L", "10")
    assert rc == 2


def test_generate(capsys, tmp_path):
    path = tmp_path / "s.jsonl"
    run(capsys, "generate", *SMALL, "--n", "7", "--output", str(path))
    seqs, meta = read_jsonl(path)
    assert len(seqs) == 7 and meta["kind"] == "train"


def test_train_is_content_addressed(capsys, tmp_path):
    a = run_json(capsys, "train", *SMALL, "--out", str(tmp_path / "a"))
    b = run_json(capsys, "train", *SMALL, "--out", str(tmp_path / "b"))
    name = lambda p: p.rsplit("/", 1)[1]
    assert name(a["checkpoint"]) == name(b["checkpoint"])
    assert name(a["manifest"]) == name(b["manifest"])
    man = json.loads(open(a["manifest"]).read())
    assert man["config"]["N"] == 16 and "wall_time_s" in man
    params, meta = load_checkpoint(a["checkpoint"])
    assert params.N == 16 and meta["kind"] == "trained"


def test_eval_and_heatmap(capsys, tmp_path):
    out = str(tmp_path)
    ck = run_json(capsys, "train", *SMALL, "--out", out)["checkpoint"]
    rc, _ = run(capsys, "eval", "--checkpoint", ck, "--out", out)
    assert rc == 2  # default ell_max = 15 does not fit L = 30
    ev = run_json(capsys, "eval", "--checkpoint", ck, "--out", out, "--n-test", "64", "--ell-max", "10")
    rows = read_metrics_csv(ev["table"])
    assert len(rows) == 1 and set(rows[0]) == set(METRIC_COLUMNS)
    assert 0 <= ev["ood_accuracy"] <= 1
    hm = run_json(capsys, "heatmap", "--checkpoint", ck, "--out", out, "--rows", "prev", "--cols", "token")
    assert [f.rsplit(".", 1)[1] for f in hm["files"]] == ["txt", "pgm"]


def test_oracle_reports_witness(capsys, tmp_path):
    rep = run_json(capsys, "oracle", "--N", "64", "--dist", '{"family": "point", "ell": 3}', "--out", str(tmp_path))
    assert rep["max_sum_ratio"] == 1.0
    assert not rep["certificate"]["generalizes"]
    assert rep["certificate"]["witness"]["ell1"] not in {2, 3, 4, 5}


def test_sweep_is_resumable(capsys, tmp_path):
    args = ["sweep", *SMALL, "--n-trg-list", "2", "--ell-min-list", "3", "--ell-max-list", "4", "5",
            "--seeds", "0", "--out", str(tmp_path)]
    first = run_json(capsys, *args)
    assert (first["rows"], first["computed"]) == (2, 2)
    table = open(first["table"]).read()
    second = run_json(capsys, *args)
    assert (second["computed"], second["reused"]) == (0, 2)
    assert open(second["table"]).read() == table


def test_concentration_zero_rate(capsys):
    rep = run_json(capsys, "concentration", "--N", "8", "--L", "20", "--eta-V", "0", "--eta-KQ", "0",
                   "--dist", '{"family": "uniform", "lo": 4, "hi": 5}', "--m-list", "10", "20",
                   "--seeds", "0", "--no-write")
    assert rep["err_V"] == [0.0, 0.0] and rep["err_KQ"] == [0.0, 0.0]


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "trigcopy.cli", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.strip()


@pytest.mark.parametrize("cmd", ["generate", "train", "eval", "sweep", "oracle", "concentration", "lp", "heatmap"])
def test_help(cmd):
    with pytest.raises(SystemExit) as e:
        main([cmd, "--help"])
    assert e.value.code == 0
