# tests/test_cli.py
import json

from app import main
from core.errors import EXIT_OK, EXIT_VALIDATION


def test_solve_prints_summary(write_ini, capsys, tmp_path):
    path = write_ini(asymptotics="false")
    assert main(["solve", "--config", str(path)]) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert out["status"] == "completed"
    assert out["run_dir"].startswith(str(tmp_path / "runs"))


def test_out_flag_overrides_config(write_ini, capsys, tmp_path):
    path = write_ini(asymptotics="false")
    assert main(["solve", "--config", str(path), "--out", str(tmp_path / "elsewhere")]) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert out["run_dir"].startswith(str(tmp_path / "elsewhere"))


def test_missing_config(tmp_path):
    assert main(["run", "--config", str(tmp_path / "nope.ini")]) == EXIT_VALIDATION


def test_invalid_config_exits_before_running(write_ini, tmp_path):
    path = write_ini(text="[model]\nkind = euclidean\n\n[output]\nout_dir = {}\n".format(tmp_path / "runs"))
    assert main(["run", "--config", str(path)]) == EXIT_VALIDATION
    assert not (tmp_path / "runs").exists()


def test_sweep_empty_values(write_ini):
    path = write_ini()
    assert main(["sweep", "--config", str(path), "--axis", "m", "--values", ""]) == EXIT_VALIDATION
