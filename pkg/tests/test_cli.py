import numpy as np
import pytest

from fvproj import mesh as meshmod
from fvproj.cli import main
from fvproj.config import (ConfigError, config_hash, parse_config,
                           serialize_config)


def test_parse_minimal_config():
    cfg = parse_config("mesh.generate = 8x8\ntime.k = 0.01\n"
                       "time.T = 0.1\nfluid.re = 100\n")
    assert cfg["mesh.generate"] == "8x8"
    assert cfg["fluid.re"] == 100.0
    assert cfg["output.snapshot_every"] == 10   # default applied


def test_parse_unknown_key():
    with pytest.raises(ConfigError) as err:
        parse_config("fluid.viscosity = 3\n")
    assert err.value.key == "fluid.viscosity"
    assert err.value.line == 1


def test_parse_bad_value_and_duplicates():
    with pytest.raises(ConfigError):
        parse_config("fluid.re = not-a-number\n")
    with pytest.raises(ConfigError):
        parse_config("fluid.re = 1\nfluid.re = 2\n")
    with pytest.raises(ConfigError):
        parse_config("just a line without equals\n")


def test_config_round_trip():
    cfg = parse_config("mesh.generate = 8x8\ntime.k = 0.02\ntime.T = 0.1\n"
                       "fluid.re = 50\nsolver.rtol = 1e-11\n")
    text = serialize_config(cfg)
    again = parse_config(text)
    assert again == cfg
    assert config_hash(again) == config_hash(cfg)


def test_config_validation_rules():
    with pytest.raises(ConfigError):
        parse_config("mesh.generate = 8by8\n")
    with pytest.raises(ConfigError):
        parse_config("time.k = 0.03\ntime.T = 0.1\n")
    with pytest.raises(ConfigError):
        parse_config("study.alpha = 1.0\n")


def test_run_command(tmp_path):
    out = tmp_path / "out"
    code = main(["run", "--mesh", "generate:8x8", "--re", "10",
                 "--dt", "0.02", "--tend", "0.1", "--out", str(out),
                 "--no-timestamp"])
    assert code == 0
    assert (out / "diagnostics.csv").exists()
    assert (out / "monitors.png").exists()
    assert (out / "config.txt").exists()
    vtks = sorted(out.glob("snapshot_*.vtk"))
    assert vtks
    text = vtks[-1].read_text()
    assert "DATASET UNSTRUCTURED_GRID" in text
    assert "written=" not in text     # timestamp suppressed
    header = (out / "diagnostics.csv").read_text().splitlines()[0]
    assert header.startswith("# config=") and "mesh=" in header


def test_run_determinism(tmp_path):
    argv = ["run", "--mesh", "generate:8x8", "--re", "10", "--dt", "0.02",
            "--tend", "0.1", "--out", str(tmp_path / "o"), "--no-timestamp"]
    assert main(argv) == 0
    first = (tmp_path / "o" / "diagnostics.csv").read_bytes()
    assert main(argv) == 0
    assert (tmp_path / "o" / "diagnostics.csv").read_bytes() == first


def test_run_exit_codes(tmp_path):
    assert main(["run", "--re", "-5"]) == 2
    assert main(["run", "--dt", "0.03", "--tend", "0.1"]) == 2
    assert main(["run", "--mesh", "bogus"]) == 2
    assert main(["run", "--config", str(tmp_path / "missing.cfg")]) == 2


def test_verify_command(capsys):
    assert main(["verify", "--mesh", "generate:8x8", "--seed", "0"]) == 0
    out = capsys.readouterr().out
    assert "adjointness" in out and "PASS" in out


def test_converge_command(tmp_path, capsys):
    out = tmp_path / "study"
    code = main(["converge", "--mesh", "generate:8x8", "--re", "10",
                 "--dt", "0.05", "--tend", "0.25", "--levels", "2",
                 "--out", str(out)])
    assert code == 0
    csv = (out / "study.csv").read_text().splitlines()
    assert csv[1] == "level,h,k,err_l2l2_u,eoc"
    assert len(csv) == 4
    assert (out / "convergence.png").exists()


def test_mesh_info_commands(tmp_path, capsys):
    assert main(["mesh-info", "--mesh", "generate:8x8"]) == 0
    diag = tmp_path / "diag.msh"
    diag.write_text("4 2\n0 0\n1 0\n1 1\n0 1\n0 1 2\n0 2 3\n")
    assert main(["mesh-info", "--mesh", "file:%s" % diag]) == 1
    out = capsys.readouterr().out
    assert "NOT admissible" in out


def test_run_rejects_inadmissible_mesh(tmp_path):
    diag = tmp_path / "diag.msh"
    diag.write_text("4 2\n0 0\n1 0\n1 1\n0 1\n0 1 2\n0 2 3\n")
    assert main(["run", "--mesh", "file:%s" % diag]) == 1


def test_mesh_file_run(tmp_path):
    m = meshmod.generate_structured(8, 8)
    path = tmp_path / "m.msh"
    path.write_text(meshmod.dump_mesh(m))
    code = main(["run", "--mesh", "file:%s" % path, "--re", "10",
                 "--dt", "0.02", "--tend", "0.04",
                 "--out", str(tmp_path / "out")])
    assert code == 0
