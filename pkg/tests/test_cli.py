import csv
import subprocess
import sys

import pytest

from neural_levelset import acceptance
from neural_levelset.cli import main
from neural_levelset.config import make_config, write_config


@pytest.fixture
def small_config(tmp_path):
    cfg = make_config("heat", mesh={"nx": 10, "ny": 10}, output_dir=str(tmp_path / "out"))
    return write_config(cfg, tmp_path / "heat.toml")


def test_gradcheck_writes_report(tmp_path, capsys):
    out = tmp_path / "gc.csv"
    rc = main(["gradcheck", "--problem", "heat", "--mesh", "12", "--output", str(out)])
    assert rc == 0
    rows = list(csv.reader(open(out)))
    assert rows[0] == ["direction", "analytic", "fd", "rel_error", "pass"]
    assert len(rows) == 1 + 5 and all(r[4] == "1" for r in rows[1:])
    assert "max relative error" in capsys.readouterr().out


def test_gradcheck_failure_exit_code(tmp_path):
    # an absurd tolerance makes every direction fail
    rc = main(["gradcheck", "--problem", "heat", "--mesh", "8", "--directions", "1", "--tol", "0",
               "--output", str(tmp_path / "gc.csv")])
    assert rc == 1


def test_run_outputs(small_config, tmp_path, capsys):
    rc = main(["run", "--config", str(small_config), "--seed", "7", "--iterations", "2"])
    assert rc == 0
    out = tmp_path / "out"
    assert (out / "config.toml").is_file() and (out / "summary.txt").is_file()
    for name in ("log.csv", "params.bin", "final.vtk", "final.pgm"):
        assert (out / "seed_7" / name).is_file()
    assert "best seed 7" in capsys.readouterr().out


def test_multiseed_and_export(small_config, tmp_path):
    rc = main(["multiseed", "--config", str(small_config), "--n-seeds", "2", "--iterations", "1"])
    assert rc == 0
    out = tmp_path / "out"
    assert (out / "seed_0").is_dir() and (out / "seed_1").is_dir()
    rc = main(["export", "--config", str(small_config), "--checkpoint", str(out / "seed_1" / "params.bin"),
               "--output", str(tmp_path / "exp")])
    assert rc == 0
    assert (tmp_path / "exp" / "design.vtk").is_file() and (tmp_path / "exp" / "design.pgm").is_file()


def test_export_size_mismatch(small_config, tmp_path):
    main(["run", "--config", str(small_config), "--iterations", "0"])
    other = write_config(make_config("heat", mesh={"nx": 12, "ny": 12}), tmp_path / "other.toml")
    rc = main(["export", "--config", str(other), "--checkpoint", str(tmp_path / "out" / "seed_0" / "params.bin"),
               "--output", str(tmp_path / "exp")])
    assert rc == 1


def test_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text('problem = "heat"\nvolume_fraction = 1.5\n')
    assert main(["run", "--config", str(bad)]) == 2
    assert "volume fraction must lie in (0,1)" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "missing.toml")]) == 2


@pytest.mark.parametrize("argv", [[], ["frobnicate"], ["run"], ["gradcheck", "--mesh", "x"]])
def test_usage_errors(argv, capsys):
    with pytest.raises(SystemExit) as info:
        main(argv)
    assert info.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_benchsuite_table(capsys):
    assert main(["benchsuite", "--only", "2"]) == 0
    out = capsys.readouterr().out
    assert "[PASS]  2 area conservation" in out and "1/1 criteria passed" in out


def test_benchsuite_failure_exit_code(monkeypatch, capsys):
    monkeypatch.setitem(acceptance.CRITERIA, 2, ("stub", lambda ctx: (False, "forced")))
    assert main(["benchsuite", "--only", "2"]) == 1
    assert "[FAIL]" in capsys.readouterr().out


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "neural_levelset", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "benchsuite" in r.stdout
