import json
import subprocess
import sys

import pytest

from cluelab.cli import EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_OK, main

CONFIG = {"dataset": {"name": "blobs", "n_classes": 3, "n": 300},
          "model": {"hidden_widths": [16], "activation": "relu", "dropout_rate": 0.3},
          "pretrain_epochs": 2, "clue_epochs": 2, "K_train": 3, "K_eval": 3, "lr": 0.05}


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(CONFIG))
    return path


def test_run_twice_byte_identical(config_file, tmp_path):
    for name in ("a.json", "b.json"):
        assert main(["run", "--config", str(config_file), "--out", str(tmp_path / name), "--quiet"]) == EXIT_OK
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_csv_format_from_suffix(config_file, tmp_path):
    out = tmp_path / "r.csv"
    assert main(["run", "--config", str(config_file), "--out", str(out), "--quiet"]) == EXIT_OK
    assert out.read_text().startswith("alpha,")


def test_seed_override(config_file, tmp_path):
    out = tmp_path / "r.json"
    main(["run", "--config", str(config_file), "--out", str(out), "--seed", "7", "--quiet"])
    assert json.loads(out.read_text())[0]["seed"] == 7


def test_sweeps(config_file, tmp_path, capsys):
    assert main(["sweep-k", "--config", str(config_file), "--ks", "1,3", "--quiet"]) == EXIT_OK
    rows = json.loads(capsys.readouterr().out)
    assert [r["k_eval"] for r in rows] == [1, 3]
    out = tmp_path / "a.csv"
    assert main(["sweep-alpha", "--config", str(config_file), "--alphas", "0,1", "--out", str(out),
                 "--quiet"]) == EXIT_OK
    assert len(out.read_text().strip().splitlines()) == 3


def test_config_error(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"dataset": {"name": "blobs"}, "K_eval": 0}')
    assert main(["run", "--config", str(bad), "--quiet"]) == EXIT_CONFIG
    bad.write_text("{not json")
    assert main(["run", "--config", str(bad), "--quiet"]) == EXIT_CONFIG


def test_io_errors(config_file, tmp_path):
    assert main(["run", "--config", str(tmp_path / "missing.json"), "--quiet"]) == EXIT_IO
    assert main(["run", "--config", str(config_file), "--out", str(tmp_path / "no" / "r.json"),
                 "--quiet"]) == EXIT_IO
    csv_cfg = tmp_path / "csv.json"
    csv_cfg.write_text(json.dumps({"dataset": {"name": "csv", "path": "absent.csv", "target_column": "y"}}))
    assert main(["run", "--config", str(csv_cfg), "--data-dir", str(tmp_path), "--quiet"]) == EXIT_IO


def test_numeric_abort_leaves_no_report(tmp_path):
    cfg = tmp_path / "hot.json"
    cfg.write_text(json.dumps({"dataset": {"name": "heteroscedastic", "n": 200}, "lr": 50.0,
                               "pretrain_epochs": 3, "K_train": 2, "K_eval": 2}))
    out = tmp_path / "r.json"
    assert main(["run", "--config", str(cfg), "--out", str(out), "--quiet"]) == EXIT_NUMERIC
    assert not out.exists()


def test_bad_list_argument(config_file):
    with pytest.raises(SystemExit) as exc:
        main(["sweep-k", "--config", str(config_file), "--ks", "one,two"])
    assert exc.value.code == 2


def test_module_entry_point(config_file):
    proc = subprocess.run([sys.executable, "-m", "cluelab", "run", "--config", str(config_file), "--quiet"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)[0]["method"] == "clue"
