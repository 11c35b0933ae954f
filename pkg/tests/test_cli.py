import json

import pandas as pd
import pytest

from app.main import main
from app.services.errors import EXIT_CONFIG, EXIT_DATA, EXIT_OK
from conftest import TINY_RUN, write_config


@pytest.fixture
def tiny_config(tmp_path):
    return write_config(tmp_path / "tiny.conf", **TINY_RUN)


def test_train_then_report_and_analyze(tiny_config, tmp_path, capsys):
    run = tmp_path / "run"
    assert main(["--config", str(tiny_config), "--out", str(run), "train"]) == EXIT_OK
    assert capsys.readouterr().out.strip() == str(run)
    assert (run / "trace.csv").exists()
    checkpoint = run / "checkpoints" / "theta_100.bin"
    assert checkpoint.exists()

    assert main(["report", str(run)]) == EXIT_OK
    assert (run / "summary.md").exists()

    out = tmp_path / "analyze"
    code = main(["--config", str(tiny_config), "--out", str(out), "analyze", "--checkpoint", str(checkpoint), "--limit", "5"])
    assert code == EXIT_OK
    assert len(pd.read_csv(out / "analyze.csv")) == 6


def test_seed_flag_overrides_config(tiny_config, tmp_path):
    assert main(["--config", str(tiny_config), "--seed", "3", "--out", str(tmp_path / "a"), "train"]) == EXIT_OK
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summary["seed"] == 3


def test_unknown_key_exits_with_config_code(tmp_path, capsys):
    path = write_config(tmp_path / "bad.conf", optimizer__learning_rate=0.1)
    assert main(["--config", str(path), "--out", str(tmp_path / "run"), "train"]) == EXIT_CONFIG
    assert "optimizer.learning_rate" in capsys.readouterr().err
    assert not (tmp_path / "run").exists()


def test_missing_idx_files_exit_with_data_code(tiny_config, tmp_path, capsys):
    path = write_config(
        tmp_path / "idx.conf",
        data__source="idx",
        data__images_path=tmp_path / "missing-images",
        data__labels_path=tmp_path / "missing-labels",
    )
    assert main(["--config", str(path), "--out", str(tmp_path / "run"), "train"]) == EXIT_DATA
    assert "missing-images" in capsys.readouterr().err


def test_threads_must_be_positive(tiny_config, tmp_path, capsys):
    assert main(["--config", str(tiny_config), "--threads", "0", "train"]) == EXIT_CONFIG
    assert "threads" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["--config", str(tmp_path / "absent.conf"), "train"]) == EXIT_CONFIG


def test_depth_sweep_command(tiny_config, tmp_path):
    out = tmp_path / "depth"
    code = main(["--config", str(tiny_config), "--out", str(out), "depth-sweep", "--k-list", "0, 1", "--seeds", "2"])
    assert code == EXIT_OK
    frame = pd.read_csv(out / "depth_sweep.csv")
    assert len(frame) == 2 * 2 * 2


def test_gic_command_with_monte_carlo(tmp_path):
    path = write_config(
        tmp_path / "gic.conf",
        gic__mc_theta_count=2001,
        gic__mc_output_dim=20,
        gic__mc_trials=3,
        **TINY_RUN,
    )
    out = tmp_path / "gic"
    assert main(["--config", str(path), "--out", str(out), "gic", "--monte-carlo"]) == EXIT_OK
    assert (out / "gic.csv").exists()
    summary = json.loads((out / "gic.json").read_text())
    assert summary["monte_carlo"]["trials"] == 3


def test_output_root_is_used_without_out(tiny_config, tmp_path):
    assert main(["--config", str(tiny_config), "train"]) == EXIT_OK
    assert (tmp_path / "runs" / "train" / "trace.csv").exists()
