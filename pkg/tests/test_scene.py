import json

import numpy as np
import pytest

from bscloth.scene import (BUILTIN, ConfigError, MotionScript, SceneConfig, apply_override, builtin_scene,
                           plate_target, select_controls)


def minimal():
    return {"sheets": [{"resolution": [5, 5]}]}


def test_roundtrip_json(tmp_path):
    cfg = builtin_scene("hanging", n=8)
    p = tmp_path / "s.json"
    p.write_text(cfg.to_json())
    assert SceneConfig.load(p).to_dict() == cfg.to_dict()


@pytest.mark.parametrize("name", sorted(BUILTIN))
def test_builtins_validate(name):
    kw = {"n": 8} if name != "wrinkling" else {"n": 10}
    assert builtin_scene(name, **kw).name == name


@pytest.mark.parametrize("bad", [
    {},
    {"sheets": [{"resolution": [2, 5]}]},
    {"sheets": [{"resolution": [5, 5], "quadrature": "one_point"}]},
    {"sheets": [{"resolution": [3, 3]}]},
    {"sheets": [{"resolution": [5, 5], "size": [0, 1]}]},
    {"sheets": [{"resolution": [5, 5], "colour": "red"}]},
    {"sheets": [{"resolution": [5, 5]}], "frames": -1},
    {"sheets": [{"resolution": [5, 5]}], "pins": [{"sheet": 1}]},
    {"sheets": [{"resolution": [5, 5]}], "pins": [{"select": [[9, 0]]}]},
    {"sheets": [{"resolution": [5, 5]}], "colliders": [{"type": "torus"}]},
    {"sheets": [{"resolution": [5, 5]}], "solver": {"dt": -1}},
    {"sheets": [{"resolution": [5, 5]}], "solver": {"bogus": 1}},
    {"sheets": [{"resolution": [5, 5]}], "contact": {"dhat": 0}},
    {"sheets": [{"resolution": [5, 5], "material": {"E_stretch": -1}}]},
    {"sheets": [{"resolution": [5, 5]}], "bogus": 1},
])
def test_invalid_configs(bad):
    with pytest.raises(ConfigError):
        SceneConfig.from_dict(bad)


def test_invalid_json():
    with pytest.raises(ConfigError):
        SceneConfig.from_json("{not json")
    with pytest.raises(ConfigError):
        SceneConfig.load("/nonexistent/scene.json")


def test_overrides():
    d = minimal()
    apply_override(d, "solver.dt=0.005")
    apply_override(d, "sheets.0.resolution=[7,7]")
    apply_override(d, "name=hello")
    apply_override(d, "contact=null")
    assert d["solver"]["dt"] == 0.005 and d["sheets"][0]["resolution"] == [7, 7]
    assert d["name"] == "hello" and d["contact"] is None
    for bad in ("solver.dt", "sheets.4.resolution=[1]", "sheets.0.resolution.x=1"):
        with pytest.raises(ConfigError):
            apply_override(minimal(), bad)
    cfg = SceneConfig.from_dict(minimal()).with_overrides(["frames=3"])
    assert cfg.frames == 3
    with pytest.raises(ConfigError):
        SceneConfig.from_dict(minimal()).with_overrides(["sheets.0.resolution=[2,2]"])


def test_selectors():
    assert select_controls([4, 5], "corners").tolist() == [0, 4, 15, 19]
    assert select_controls([4, 5], "all").size == 20
    assert select_controls([4, 5], "boundary").size == 20 - 2 * 3
    assert select_controls([4, 5], "edge:u0").tolist() == [0, 1, 2, 3, 4]
    assert select_controls([4, 5], "edge:v1:2").tolist() == [3, 4, 8, 9, 13, 14, 18, 19]
    assert select_controls([4, 5], [[-1, -1], [0, 0], [0, 0]]).tolist() == [0, 19]
    for bad in ("edge:x0", "middle", [[1]]):
        with pytest.raises(ConfigError):
            select_controls([4, 5], bad)


def test_motion_script_exact_integral():
    s = MotionScript([{"t0": 0.0, "t1": 0.1, "velocity": [1, 0, 0]}, (0.2, 0.3, [0, 2, 0])])
    np.testing.assert_allclose(s.displacement(0.05, 0.25), [0.05, 0.1, 0.0])
    np.testing.assert_allclose(s.velocity(0.25), [0, 2, 0])
    assert MotionScript().fixed
    with pytest.raises(ConfigError):
        MotionScript([(0.0, 0.2, [1, 0, 0]), (0.1, 0.3, [1, 0, 0])])
    assert MotionScript(s.to_list()).displacement(0, 1).tolist() == s.displacement(0, 1).tolist()


def test_plate_target_value():
    assert plate_target() == pytest.approx(0.23887, rel=1e-4)


def test_material_modes():
    s = SceneConfig.from_dict({"sheets": [{"resolution": [5, 5], "material": {"mu_st1": 2.0}, "bending": False}]})
    p = s.sheets[0].material_params()
    assert (p.mu_st1, p.mu_st2, p.mu_sh, p.mu_bd) == (2.0, 2.0, 2.0, 0.0)
    assert json.loads(s.to_json())["sheets"][0]["bending"] is False
