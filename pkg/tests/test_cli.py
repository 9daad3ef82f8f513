import io
import json

import pytest

from bscloth.cli import EXIT_CONFIG, EXIT_OK, EXIT_SOLVER, benchmark, build_parser, check, main
from bscloth.io import read_metrics, read_obj


def test_frames_zero_writes_rest_only(tmp_path):
    out = tmp_path / "o"
    assert main(["simulate", "builtin:drape", "--out", str(out), "--frames", "0",
                 "--override", "sheets.0.resolution=[6,6]"]) == EXIT_OK
    assert sorted(p.name for p in out.glob("*.obj")) == ["frame_00000.obj"]
    assert read_metrics(out / "metrics.csv") == []
    rep = json.loads((out / "report.json").read_text())
    assert rep["status"] == "ok" and rep["frames"] == 0


def test_simulate_outputs_and_determinism(tmp_path):
    args = ["simulate", "builtin:hanging", "--frames", "3", "--deterministic", "--workers", "2",
            "--override", "sheets.0.resolution=[8,8]", "--override", "output.cadence=2"]
    assert main(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(args + ["--out", str(tmp_path / "b")]) == EXIT_OK
    a, b = tmp_path / "a", tmp_path / "b"
    assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
    assert sorted(p.name for p in a.glob("*.obj")) == ["frame_00000.obj", "frame_00002.obj"]
    V, _ = read_obj(a / "frame_00002.obj")
    assert V.shape[0] == read_obj(a / "frame_00000.obj")[0].shape[0]
    rep = json.loads((a / "report.json").read_text())
    assert rep["totals"]["wall_s"] == 0.0 and rep["frames"] == 3
    assert rep["versions"]["kernels"] in ("cython", "python")
    assert main(["export", str(a / "state.bscs"), "--out", str(tmp_path / "e.obj")]) == EXIT_OK
    Ve, _ = read_obj(tmp_path / "e.obj")
    assert Ve.shape[0] == read_obj(a / "frame_00000.obj")[0].shape[0]


def test_obj_vertex_count_matches_mesh(tmp_path):
    from bscloth.runtime import World
    from bscloth.scene import builtin_scene

    assert main(["simulate", "builtin:momentum", "--frames", "1", "--out", str(tmp_path),
                 "--override", "sheets.0.resolution=[5,5]", "--override", "sheets.1.resolution=[5,5]"]) == EXIT_OK
    cfg = builtin_scene("momentum").with_overrides(["sheets.0.resolution=[5,5]", "sheets.1.resolution=[5,5]"])
    w = World(cfg)
    V, _ = read_obj(tmp_path / "frame_00001.obj")
    assert V.shape[0] == sum(m.uv.shape[0] for m in w.meshes)


def test_config_errors_exit_1(tmp_path):
    assert main(["simulate", "builtin:nope", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["simulate", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["simulate", "builtin:drape", "--override", "solver.dt=-1", "--out", str(tmp_path)]) == EXIT_CONFIG
    (tmp_path / "junk").write_bytes(b"xx")
    assert main(["export", str(tmp_path / "junk"), "--out", str(tmp_path / "x.obj")]) == EXIT_CONFIG


def test_solver_failure_exit_2(tmp_path):
    # a NaN initial velocity makes the first step's potential non-finite
    scene = {"name": "bad", "sheets": [{"resolution": [5, 5], "velocity": [float("nan"), 0, 0]}], "frames": 2}
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(scene))
    assert main(["simulate", str(p), "--out", str(tmp_path / "o")]) == EXIT_SOLVER
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    assert rep["status"] == "failed" and "frame 1" in rep["error"]


def test_check_and_benchmark_streams():
    buf = io.StringIO()
    assert check("basis", buf) == EXIT_OK
    lines = [json.loads(s) for s in buf.getvalue().splitlines()]
    assert all(r["passed"] for r in lines) and lines[0]["suite"] == "basis"
    buf = io.StringIO()
    assert benchmark("quadrature-ablation", deterministic=True, stream=buf) == EXIT_OK
    head, *rows = buf.getvalue().splitlines()
    assert head.split(",")[:3] == ["benchmark", "resolution", "quantity"] and len(rows) == 5


def test_parser_rejects_unknown():
    p = build_parser()
    with pytest.raises(SystemExit):
        p.parse_args(["benchmark", "nope"])
    with pytest.raises(SystemExit):
        p.parse_args(["frobnicate"])
    a = p.parse_args(["benchmark", "plate", "--resolutions", "4,8"])
    assert a.resolutions == [4, 8]
