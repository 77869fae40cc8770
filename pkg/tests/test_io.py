import json
import math

import numpy as np
import pytest

from lorentzgas import io
from lorentzgas.dynamics import Orbit, PhasePoint, measure_sample, orbit
from lorentzgas.errors import SchemaError
from lorentzgas.runtime import task_rng

HEAD_ON = PhasePoint((0, 0, -1), 0.0, math.pi / 2)


def tri(**extra):
    d = {"lattice": {"basis": [[2.2, 0.0], [1.1, 1.9053]], "motif": [{"center": [0, 0], "radius": 1.0}]}}
    d.update(extra)
    return d


@pytest.mark.parametrize("data, path", [
    (tri() | {"lattice": {"basis": [[2.2, 0.0], [1.1, 1.9053]], "motif": [{"center": [0, 0], "radius": -1}]}},
     "$.lattice.motif[0].radius"),
    (tri() | {"lattice": {"basis": [[2.2, 0.0]], "motif": [{"center": [0, 0], "radius": 1}]}}, "$.lattice.basis"),
    (tri(color="red"), "$"),
    ({"added": []}, "$"),
    ({"removed": [[0, 0, 0]], "added": [{"center": [0, 0], "radius": 1}]}, "$.removed"),
    (tri(removed=[[0, 0, 3]]), "$.removed[0]"),
    (tri(added=[{"center": [0, "a"], "radius": 1}]), "$.added[0].center[1]"),
])
def test_schema_errors_name_the_field(data, path):
    with pytest.raises(SchemaError) as exc:
        io.scene_from_dict(data)
    assert exc.value.path == path


def test_invalid_json_text():
    with pytest.raises(SchemaError):
        io.parse_scene("{not json")


def test_scene_roundtrip(finite_mod):
    again = io.scene_from_dict(io.scene_to_dict(finite_mod))
    assert again.same_scatterers(finite_mod)
    assert again.origin == finite_mod.origin


def test_head_on_trajectory_csv(two_disk):
    text = io.trajectory_text(orbit(two_disk, HEAD_ON, 2))
    lines = text.split("\n")
    assert "\r" not in text and text.endswith("\n")
    assert lines[0] == "step,alpha,r,phi,x,y,tau,grazing_margin"
    rows = [ln.split(",") for ln in lines[1:-1]]
    assert [r[1] for r in rows] == ["1:0:-1", "0:0:-1"]
    assert [float(r[6]) for r in rows] == pytest.approx([2.0, 2.0])
    assert float(rows[0][4]) == pytest.approx(3.0) and float(rows[1][4]) == pytest.approx(1.0)


def test_empty_orbit_is_header_only():
    orb = Orbit(np.array([[0, 0, 0]]), np.zeros(1), np.full(1, 1.0), np.zeros(1), np.zeros(1), np.zeros(0),
                np.zeros(0))
    assert io.trajectory_text(orb) == ",".join(io.TRAJECTORY_COLUMNS) + "\n"


def test_trajectory_roundtrip_is_bit_exact(triangular, tmp_path):
    x = measure_sample(triangular, [(0, 0, 0)], 1, task_rng(1))[0]
    orb = orbit(triangular, x, 200)
    path = tmp_path / "t.csv"
    io.export_trajectory(orb, path)
    rows = io.read_trajectory(path)
    assert len(rows) == 200
    for k, row in enumerate(rows, start=1):
        assert row["step"] == k and row["alpha"] == tuple(orb.ids[k])
        assert row["r"] == orb.r[k] and row["phi"] == orb.phi[k]
        assert row["x"] == orb.x[k] and row["tau"] == orb.tau[k - 1]
    assert path.read_bytes().count(b"\r") == 0


@pytest.mark.parametrize("v", [0.1, 1 / 3, math.pi, 1e-300, -2.5e17, 5e-324])
def test_fmt_roundtrips(v):
    assert float(io.fmt(v)) == v


@pytest.mark.parametrize("text", ["1:2", "a:b:c", "1:2:3:4"])
def test_bad_ids(text):
    with pytest.raises(ValueError):
        io.parse_id(text)


def test_id_list():
    assert io.parse_id_list("0:0:0, 1:-1:0") == [(0, 0, 0), (1, -1, 0)]


def test_report_layout_and_hash():
    spec = {"b": 1, "a": [1.0, float("nan")]}
    rep = io.build_report("verify", spec, 5, {"x": np.float64(1.5), "y": np.int64(2), "z": math.inf})
    assert list(rep) == ["command", "version", "seed", "spec_hash", "spec", "exit_code", "result"]
    assert rep["result"] == {"x": 1.5, "y": 2, "z": "inf"}
    assert rep["spec"]["a"] == [1.0, None]
    # key order in the input does not change the hash
    assert rep["spec_hash"] == io.spec_hash({"a": [1.0, float("nan")], "b": 1})
    text = io.dumps_report(rep)
    assert json.loads(text) == rep and "time" not in text
