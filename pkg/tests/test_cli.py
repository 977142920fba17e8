import csv
import io
import json
import subprocess
import sys

import pytest

from tiedlab.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_summary_with_baseline_shows_quarter_ratio(capsys, tmp_path):
    out_csv = tmp_path / "s.csv"
    code, out, _ = run(capsys, "summary", "toy_tied.json", "--baseline", "toy_untied.json", "--csv", str(out_csv))
    assert code == 0
    assert "weight_ratio" in out
    rows = {r["name"]: r for r in csv.DictReader(out_csv.open())}
    for name in ("conv1", "conv2"):
        assert rows[name]["kind"] == "tbc"
        assert float(rows[name]["weight_ratio"]) == 0.25


def test_summary_input_shape_flag(capsys):
    code, out, _ = run(capsys, "summary", "toy_untied.json", "--input-shape", "4,1,16,16", "--csv", "-")
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert rows[0]["macs"] == str(4 * 16 * 16 * 16)


def test_summary_empty_layers(capsys, tmp_path):
    path = tmp_path / "empty.json"
    path.write_text(json.dumps({"name": "empty", "input": [1, 4, 4], "classes": 2, "layers": []}))
    code, out, _ = run(capsys, "summary", str(path), "--csv", "-")
    assert code == 0
    assert out.strip().splitlines()[-1] == "total,total,0,0,"


def test_summary_malformed_json(capsys, tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"name": "x",\n "layers": [}')
    code, _, err = run(capsys, "summary", str(path))
    assert code == 2
    assert "line 2" in err


def test_summary_validation_error_names_layer(capsys, tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"name": "x", "input": [6, 4, 4], "classes": 2,
                                "layers": [{"kind": "tbc", "c_i": 6, "c_o": 8, "blocks": 4}]}))
    code, _, err = run(capsys, "summary", str(path))
    assert code == 2 and "layer 0" in err


def test_usage_error_exit_code(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["verify", "--suite", "nope"])
    assert exc.value.code == 2


def test_verify_counts(capsys):
    code, out, _ = run(capsys, "verify", "--suite", "counts", "--seeds", "50")
    assert code == 0
    assert out.splitlines()[0] == "tiedlab verify suite=counts seeds=50 seed=0"
    assert "PASS counts.ratio_identities 50/50" in out


def test_verify_reports_failure(capsys, monkeypatch):
    from tiedlab import verify

    monkeypatch.setattr(verify, "FIXED_COUNTS", verify.FIXED_COUNTS + (("broken", lambda: 1, 2),))
    code, out, _ = run(capsys, "verify", "--suite", "counts", "--seeds", "2", "--seed", "5")
    assert code == 1
    assert "FAIL counts.fixed_examples" in out and "broken: got 1, expected 2" in out


def test_verify_seed_env_fallback(capsys, monkeypatch):
    monkeypatch.setenv("TIEDLAB_SEED", "17")
    code, out, _ = run(capsys, "verify", "--suite", "counts", "--seeds", "1")
    assert code == 0 and "seed=17" in out.splitlines()[0]


def test_bench_csv_contract(capsys, tmp_path):
    out_csv = tmp_path / "b.csv"
    code, _, err = run(capsys, "bench", "--c", "16", "--b-list", "1,2,4", "--hw", "4", "--reps", "2",
                       "--paths", "direct,fast,conv", "--csv", str(out_csv))
    assert code == 0
    rows = list(csv.DictReader(out_csv.open()))
    assert list(rows[0]) == ["op", "path", "B", "c", "hw", "reps", "median_ms"]
    assert len(rows) == 9
    assert "fast/direct" in err


def test_bench_illegal_shape(capsys):
    code, _, _ = run(capsys, "bench", "--c", "10", "--b-list", "4")
    assert code == 2


def test_train_epochs_zero(capsys, tmp_path):
    out_csv = tmp_path / "t.csv"
    code, out, _ = run(capsys, "train", "toy_tied.json", "--epochs", "0", "--n", "40", "--csv", str(out_csv))
    assert code == 0
    assert "holdout accuracy:" in out
    assert out_csv.read_text() == "epoch,loss,train_acc\n"


def test_train_shape_mismatch(capsys, tmp_path):
    path = tmp_path / "m.json"
    path.write_text(json.dumps({"name": "m", "input": [3, 16, 16], "classes": 2, "layers": []}))
    code, _, err = run(capsys, "train", str(path), "--epochs", "1", "--n", "10")
    assert code == 2 and "do not match" in err


def test_executable_entry_point():
    proc = subprocess.run([sys.executable, "-m", "tiedlab", "summary", "tied_se_demo.json"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "tied_bottleneck" in proc.stdout
