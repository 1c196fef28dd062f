"""Command-line interface: verbs, JSON output, and error records."""

import json

import numpy as np
import pytest

from sherdkit import load_mesh, make_box, save_mesh
from sherdkit.cli import main


def _run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_scale_verb(tmp_path, capsys):
    src = tmp_path / "cube.obj"
    dst = tmp_path / "scaled.obj"
    save_mesh(make_box(), src)
    code, out, _ = _run(
        capsys, "scale", str(src), "--out", str(dst),
        "--point-a", "0,0,0", "--point-b", "1,0,0", "--real-distance", "25",
    )
    assert code == 0
    assert json.loads(out)["factor"] == pytest.approx(25.0)
    mesh = load_mesh(dst)
    assert mesh.vertices.max() == pytest.approx(25.0)


def test_volume_verb(tmp_path, capsys):
    src = tmp_path / "cube.obj"
    save_mesh(make_box((20.0, 20.0, 20.0)), src)
    code, out, _ = _run(capsys, "volume", str(src))
    assert code == 0
    assert json.loads(out)["volume_cm3"] == pytest.approx(8.0, rel=1e-9)


def test_fit_rim_skeleton_revolve_chain(tmp_path, capsys):
    # points on two circles -> circles JSON -> skeleton CSV -> revolve STL
    for z, r, name in ((0.0, 20.0, "a"), (30.0, 30.0, "b")):
        phi = np.linspace(0, 2 * np.pi, 48, endpoint=False)
        pts = np.column_stack([r * np.cos(phi), r * np.sin(phi), np.full(48, z)])
        np.savetxt(tmp_path / f"{name}.csv", pts, delimiter=",")
    circles = tmp_path / "circles.json"
    code, out, _ = _run(
        capsys, "fit-rim",
        "--points-file", str(tmp_path / "a.csv"),
        "--points-file", str(tmp_path / "b.csv"),
        "--out", str(circles),
    )
    assert code == 0
    assert len(json.loads(out)) == 2

    skeleton = tmp_path / "skeleton.csv"
    code, out, _ = _run(capsys, "skeleton", "--circles", str(circles),
                        "--out", str(skeleton))
    assert code == 0
    assert json.loads(out)["rings"] == 2

    mesh_path = tmp_path / "revolved.stl"
    code, out, _ = _run(capsys, "revolve", "--skeleton", str(skeleton),
                        "--segments", "256", "--out", str(mesh_path))
    assert code == 0
    analytic = np.pi * 30.0 / 3.0 * (400.0 + 600.0 + 900.0) / 1000.0
    assert json.loads(out)["volume_cm3"] == pytest.approx(analytic, rel=1e-3)

    code, out, _ = _run(capsys, "hull-volume", "--skeleton", str(skeleton),
                        "--segments", "128")
    doc = json.loads(out)
    assert code == 0
    assert doc["hull_volume_cm3"] == pytest.approx(doc["revolve_volume_cm3"],
                                                   rel=1e-6)


def test_synth_writes_scenario(tmp_path, capsys):
    code, out, _ = _run(capsys, "synth", "--out", str(tmp_path / "scene"),
                        "--segments", "48", "--sherds", "4", "--seed", "3",
                        "--dropout", "0.1", "--scatter")
    assert code == 0
    doc = json.loads(out)
    assert doc["sherds"] == 4
    manifest = json.loads((tmp_path / "scene" / "manifest.json").read_text())
    assert manifest["fracture"]["dropout"] == 0.1
    assert (tmp_path / "scene" / "vessel.stl").exists()
    assert (tmp_path / "scene" / "sherd_0.stl").exists()


def test_run_verb_executes_project(tmp_path, capsys):
    save_mesh(make_box((10.0, 10.0, 10.0)), tmp_path / "cube.obj")
    project = {
        "schema_version": 1,
        "units": "mm",
        "output_dir": "out",
        "fragments": [{"id": "cube", "path": "cube.obj"}],
        "pipeline": [{"task": "volume", "fragment": "cube"},
                     {"task": "report"}],
    }
    path = tmp_path / "project.json"
    path.write_text(json.dumps(project))
    code, out, _ = _run(capsys, "run", str(path))
    assert code == 0
    assert (tmp_path / "out" / "report.txt").exists()


def test_error_record_on_stderr(tmp_path, capsys):
    save_mesh(make_box(), tmp_path / "cube.obj")
    project = {
        "schema_version": 1,
        "units": "mm",
        "output_dir": "out",
        "fragments": [{"id": "cube", "path": "cube.obj"}],
        "pipeline": [{"task": "crop", "fragment": "cube",
                      "box": [[90, 90, 90], [99, 99, 99]]}],
    }
    path = tmp_path / "project.json"
    path.write_text(json.dumps(project))
    code, out, err = _run(capsys, "run", str(path))
    assert code == 1
    record = json.loads(err)
    assert record["task"] == "crop"
    assert "removed every" in record["error"]


def test_mesh_format_error_on_stderr(tmp_path, capsys):
    bad = tmp_path / "bad.obj"
    bad.write_text("v 0 0 0\nf 1 2 9\n")
    code, _, err = _run(capsys, "volume", str(bad))
    assert code == 1
    doc = json.loads(err)
    assert doc["type"] == "MeshFormatError"


def test_report_verb_renders_fixture(tmp_path, capsys):
    records = [{
        "name": "Gr1C", "surfaces": 249999, "vertices": 130234,
        "volume_cm3": "536,4", "photos": 72, "points": 250000,
        "calculation_time": "6 min",
    }]
    rec_path = tmp_path / "records.json"
    rec_path.write_text(json.dumps(records))
    code, out, _ = _run(capsys, "report", "--records", str(rec_path),
                        "--out", str(tmp_path / "out"))
    assert code == 0
    csv_text = (tmp_path / "out" / "report.csv").read_text()
    assert '"Gr1C"' in csv_text
    assert '"536.4"' in csv_text
