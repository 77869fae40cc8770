import json

import pytest

from lorentzgas.cli import EXIT_ABORT, EXIT_FAIL, EXIT_INPUT, EXIT_OK, run_command


def run(scene_dir, tmp_path, *argv, scene="triangular.json"):
    out = tmp_path / "out"
    code = run_command([argv[0], "--scene", str(scene_dir / scene), "--out", str(out), *argv[1:]])
    return code, out


def test_simulate_writes_rows_and_figure(scene_dir, tmp_path):
    code, out = run(scene_dir, tmp_path, "simulate", "--steps", "100", "--seed", "3")
    assert code == EXIT_OK
    lines = (out / "trajectory.csv").read_text().splitlines()
    assert len(lines) == 101
    assert (out / "trajectory.png").read_bytes()[:4] == b"\x89PNG"
    rep = json.loads((out / "simulate.json").read_text())
    assert rep["seed"] == 3 and rep["result"]["steps"] == 100


def test_simulate_zero_steps(scene_dir, tmp_path):
    code, out = run(scene_dir, tmp_path, "simulate", "--steps", "0", "--no-figures")
    assert code == EXIT_OK
    assert (out / "trajectory.csv").read_text().count("\n") == 1


def test_escape_aborts_with_three(scene_dir, tmp_path):
    code, out = run(scene_dir, tmp_path, "simulate", "--alpha", "0:0:-1", "--r", "0.3", "--phi", "1.0",
                    "--steps", "10", "--no-figures", scene="two_disk.json")
    assert code == EXIT_ABORT
    assert json.loads((out / "simulate.json").read_text())["result"]["status"] == "escaped"


@pytest.mark.parametrize("argv", [
    ["simulate", "--phi", "4.0"],
    ["simulate", "--alpha", "0:0:7"],
    ["simulate", "--alpha", "zero"],
    ["simulate", "--samples", "0"],
    ["frobnicate"],
])
def test_input_errors(scene_dir, tmp_path, argv):
    code, _ = run(scene_dir, tmp_path, *argv, "--no-figures")
    assert code == EXIT_INPUT


def test_bad_scene_files(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"lattice": {"basis": [[1, 0], [2, 0]], "motif": [{"center": [0, 0], "radius": 0.1}]}}')
    assert run_command(["verify", "--scene", str(bad), "--out", str(tmp_path)]) == EXIT_INPUT
    bad.write_text("[")
    assert run_command(["verify", "--scene", str(bad), "--out", str(tmp_path)]) == EXIT_INPUT
    assert run_command(["verify", "--scene", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == EXIT_INPUT


def test_verify_passes_on_triangular(scene_dir, tmp_path):
    code, out = run(scene_dir, tmp_path, "verify", "--samples", "300", "--no-figures")
    assert code == EXIT_OK
    assert (out / "verify_checks.csv").exists()


def test_verify_fails_on_square(scene_dir, tmp_path):
    # open corridors break the one-curve-per-branch count
    code, out = run(scene_dir, tmp_path, "verify", "--samples", "300", "--no-figures", scene="square.json")
    assert code == EXIT_FAIL
    assert json.loads((out / "verify.json").read_text())["exit_code"] == EXIT_FAIL


def test_square_horizon_reports_corridor(scene_dir, tmp_path):
    code, out = run(scene_dir, tmp_path, "horizon", "--samples", "2000", "--no-figures", scene="square.json")
    assert code == EXIT_OK
    assert json.loads((out / "horizon.json").read_text())["result"]["corridor_found"] is True


def test_reports_are_byte_identical(scene_dir, tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    argv = ["simulate", "--scene", str(scene_dir / "finite_modification.json"), "--steps", "50", "--seed", "9"]
    assert run_command(argv + ["--out", str(a)]) == EXIT_OK
    assert run_command(argv + ["--out", str(b)]) == EXIT_OK
    for name in ("simulate.json", "trajectory.csv", "trajectory.png"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_recur_threads_do_not_change_output(scene_dir, tmp_path):
    outs = []
    for t in ("1", "3"):
        code, out = run(scene_dir, tmp_path / t, "recur", "--samples", "400", "--steps", "800", "--threads", t,
                        "--no-figures")
        assert code in (EXIT_OK, EXIT_FAIL)
        rep = json.loads((out / "recur.json").read_text())
        rep["spec"]["params"].pop("threads", None)
        outs.append((rep["result"], rep["spec"]["params"]))
    assert outs[0] == outs[1]


def test_singularities_two_disk(scene_dir, tmp_path):
    code, out = run(scene_dir, tmp_path, "singularities", "--target", "0:0:-1", "--samples", "2000", "--grid", "512",
                    "--no-figures", scene="two_disk.json")
    assert code == EXIT_OK
    assert json.loads((out / "singularities.json").read_text())["command"] == "singularities"
