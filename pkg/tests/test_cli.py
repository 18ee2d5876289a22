import json
import os

import pytest

from eland.cli import EXIT_CHECK, EXIT_OK, EXIT_USAGE, RunConfig, main, run

SQUARE = json.dumps({"shape": "rectangle", "params": {"width": 12, "height": 12}, "h": 0.1})


def _run(capsys, argv):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_profile_outputs(capsys, tmp_path):
    code, out, _ = _run(capsys, ["profile", "--eps", "0.1", "--out", str(tmp_path)])
    assert code == EXIT_OK
    data = json.loads(out)
    assert data["D_prime"]["value"] == pytest.approx(2.0820327689, rel=1e-9)
    assert "tolerance" in data["D_prime"]
    assert all("tolerance" in c for c in data["checks"])
    csv = (tmp_path / "profile.csv").read_bytes()
    assert csv.startswith(b"s,U,Uprime,mu_minus_U\n") and b"\r" not in csv
    assert json.loads((tmp_path / "profile.json").read_text()) == data


def test_potential_file_and_inline(capsys, tmp_path):
    path = tmp_path / "pp.json"
    path.write_text(json.dumps({"kind": "pure_power", "p": 3.0}))
    _, out_file, _ = _run(capsys, ["profile", "--potential", str(path), "--eps", "0.1"])
    _, out_inline, _ = _run(capsys, ["profile", "--potential", path.read_text(), "--eps", "0.1"])
    assert out_file == out_inline
    # mu - U = 1 / (1 + sqrt2 s) reaches 0.1 at s = 9 / sqrt2
    assert json.loads(out_file)["D_prime"]["value"] == pytest.approx(9 / 2**0.5, rel=1e-10)


@pytest.mark.parametrize(
    "argv",
    [
        ["profile", "--potential", "{not json"],
        ["profile", "--potential", '{"kind": "double_well", "colour": 1}'],
        ["profile", "--potential", "/nonexistent/pot.json"],
        ["profile", "--eps", "1.5"],
        ["radial", "--R", "-3"],
        ["sweep", "--R-list", "5", "3"],
        ["solve2d", "--domain", '{"shape": "disk"'],
        ["solve2d", "--domain", '{"shape": "rectangle", "params": {"width": 1, "height": 1}, "h": 0.3}'],
        ["critical-radius", "--bracket", "2", "1"],
        ["radial", "--R", "10", "--threads", "0"],
    ],
)
def test_usage_errors(capsys, argv):
    code, out, err = _run(capsys, argv)
    assert code == EXIT_USAGE
    assert out == ""
    payload = json.loads(err)
    assert payload["exit_code"] == EXIT_USAGE and payload["message"]


def test_argparse_errors_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["radial"])
    assert exc.value.code == 2


def test_radial_and_determinism(capsys, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        code, _, _ = _run(capsys, ["radial", "--n", "2", "--R", "10", "--out", str(d)])
        assert code == EXIT_OK
    assert (a / "radial.csv").read_bytes() == (b / "radial.csv").read_bytes()
    assert (a / "radial.json").read_bytes() == (b / "radial.json").read_bytes()
    data = json.loads((a / "radial.json").read_text())
    assert data["passed"] and not data["trivial"]


def test_sweep_csv_columns(capsys, tmp_path):
    code, _, _ = _run(capsys, ["sweep", "--n", "1", "--R-list", "1", "10", "--out", str(tmp_path)])
    assert code == EXIT_OK
    lines = (tmp_path / "sweep.csv").read_text().splitlines()
    assert lines[0] == "R,flux,u0,plateau_width,energy_ratio,decay_rate,profile_gap,status"
    assert lines[1].endswith(",trivial") and lines[2].endswith(",ok")


def test_spectrum_keys(capsys):
    code, out, _ = _run(capsys, ["spectrum", "--R", "20"])
    data = json.loads(out)
    assert code == EXIT_OK
    assert {"R", "mu_R", "residual_zeta", "phi_profile_gap"} <= set(data)
    assert data["mu_R"] > 0


def test_spectrum_trivial_is_usage_error(capsys):
    code, _, _ = _run(capsys, ["spectrum", "--R", "1"])
    assert code == EXIT_USAGE


def test_critical_radius(capsys):
    code, out, _ = _run(capsys, ["critical-radius", "--n", "1", "--bracket", "1", "2"])
    assert code == EXIT_OK
    assert json.loads(out)["numeric"] == pytest.approx(1.5708, abs=0.01)


def test_critical_radius_bad_bracket(capsys):
    code, _, err = _run(capsys, ["critical-radius", "--n", "1", "--bracket", "2", "3"])
    assert code == EXIT_USAGE and "bracket" in json.loads(err)["message"]


def test_failed_check_exit_1(capsys):
    # the saddle flux is not within 1e-6 of the target at this coarse mesh
    code, out, _ = _run(capsys, ["saddle", "--L", "20", "--h", "0.1", "--x2", "15", "--tol", "1e-6"])
    assert code == EXIT_CHECK
    assert json.loads(out)["passed"] is False


def test_solve2d(capsys, tmp_path):
    code, out, _ = _run(capsys, ["solve2d", "--domain", SQUARE, "--ball-R", "4", "--out", str(tmp_path)])
    assert code == EXIT_OK
    data = json.loads(out)
    assert data["report_monotone"]["plateau_holds"]
    assert "wall_time" not in out
    assert (tmp_path / "solve2d_monotone.csv").read_text().startswith("x,y,u\n")
    assert (tmp_path / "solve2d_minimizer.csv").exists()


def test_layer_1d(capsys):
    code, out, _ = _run(capsys, ["layer", "--analog-lambdas", "20", "40"])
    assert code == EXIT_OK
    assert len(json.loads(out)["rows"]) == 2


def test_multiwell_requires_multi_well(capsys):
    code, _, _ = _run(capsys, ["multiwell", "--domain", SQUARE])
    assert code == EXIT_USAGE


def test_threads_env(capsys, monkeypatch):
    monkeypatch.delenv("ELAND_THREADS", raising=False)
    code, _, _ = _run(capsys, ["profile", "--threads", "1"])
    assert code == EXIT_OK
    assert os.environ["ELAND_THREADS"] == "1"


def test_verify_subset(capsys):
    code, out, err = _run(capsys, ["verify", "--suite", "primary", "--only", "1", "2"])
    assert code == EXIT_OK
    assert "[PASS]  1" in err
    assert [r["number"] for r in json.loads(out)["results"]] == [1, 2]


def test_run_config_direct(capsys):
    from eland.potentials import double_well

    cfg = RunConfig("profile", double_well(), {"eps": 0.2, "u_max": None, "n_points": 500, "window": None})
    # the divided-difference residual is about 1.7e-6 with only 500 samples
    assert run(cfg) == EXIT_CHECK
    capsys.readouterr()
    cfg.params["residual_tol"] = 1e-5
    assert run(cfg) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["eps"] == 0.2
