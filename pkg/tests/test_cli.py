import json

import pytest

from biothdg.cli import RunConfig, ConfigError, main


def _run(*argv):
    return main([str(a) for a in argv])


def test_invalid_poisson_ratio_exits_1(tmp_path, capsys):
    assert _run("solve", "--case", "static", "--nu", "0.5", "--out", tmp_path) == 1
    assert "error" in capsys.readouterr().err


def test_bad_arguments_exit_1(tmp_path):
    assert _run("convergence", "--case", "static", "--levels", "1", "--out", tmp_path) == 1
    with pytest.raises(SystemExit) as exc:
        main(["solve", "--no-such-flag"])
    assert exc.value.code == 1
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"case": "static", "mystery": 1}))
    assert _run("solve", "--config", cfg, "--out", tmp_path) == 1
    assert _run("solve", "--case", "quasistatic", "--kappa", "1", "--out", tmp_path) == 1


def test_config_validation():
    with pytest.raises(ConfigError, match="unknown"):
        RunConfig.from_dict({"colour": "red"})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"k": 1.5})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"gate_rates": [1, 2]})
    assert RunConfig.from_dict({"levels": [2, 4]}).levels == [2, 4]


def test_convergence_gates_and_determinism(tmp_path, capsys):
    common = ["convergence", "--case", "static", "--k", "1", "--levels", "2,4"]
    assert _run(*common, "--out", tmp_path / "a", "--gate-rates", "0,0,0,0") == 0
    assert _run(*common, "--out", tmp_path / "b", "--gate-rates", "9,9,9,9") == 3
    out = capsys.readouterr().out
    assert "FAIL" in out and "PASS" in out
    a = (tmp_path / "a" / "rates.csv").read_bytes()
    assert a == (tmp_path / "b" / "rates.csv").read_bytes()
    manifest = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert manifest["gates"]["u"]["passed"] is False and manifest["levels"] == [8, 32]


def test_config_file_and_flags(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"case": "quasistatic", "k": 1, "n": 2, "dt": 1e-3, "T": 2e-3,
                               "vtk": False}))
    assert _run("solve", "--config", cfg, "--out", tmp_path / "o", "--variant", "edg-hdg") == 0
    m = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert m["config"]["variant"] == "edg-hdg" and m["summary"]["steps"] == 2
    assert (tmp_path / "o" / "errors.json").exists()
    assert not list((tmp_path / "o").glob("*.vtk"))


def test_cantilever_solve_outputs(tmp_path):
    out = tmp_path / "cant"
    assert _run("solve", "--case", "cantilever", "--n", 4, "--k", 1, "--vtk-every", 5,
                "--out", out) == 0
    for x in (0.26, 0.33, 0.40, 0.46):
        assert (out / f"line_x{x:.2f}.csv").exists()
    rows = (out / "observers.csv").read_text().splitlines()
    assert rows[0] == "step,time,X,Y,max_abs_p,u_jump_rel,z_jump_rel" and len(rows) == 6
    assert sorted(p.name for p in out.glob("*.vtk")) == ["fields_000005.vtk"]


def test_restart_reproduces_full_run(tmp_path):
    base = ["solve", "--case", "quasistatic", "--n", 2, "--k", 1, "--T", 6e-3, "--no-vtk"]
    assert _run(*base, "--out", tmp_path / "full", "--checkpoint-every", 3) == 0
    assert _run(*base, "--out", tmp_path / "rest",
                "--restart", tmp_path / "full" / "checkpoint_000003.npz") == 0
    assert ((tmp_path / "full" / "errors.json").read_text()
            == (tmp_path / "rest" / "errors.json").read_text())


def test_verify_command(tmp_path):
    assert _run("verify", "--variants", "hdg", "--degrees", "1", "--out", tmp_path) == 0
    report = json.loads((tmp_path / "verify.json").read_text())
    assert report and all(r["passed"] for r in report)
