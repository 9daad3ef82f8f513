import numpy as np
import pytest

from bscloth.io import load_snapshot, save_snapshot
from bscloth.runtime import StepFailure, World, metrics, run, settle, step
from bscloth.scene import SceneConfig, builtin_scene

MAT = {"density": 200.0, "thickness": 1e-3, "E_stretch": 1e5, "E_bend": 1e5}


def scene(**kw):
    base = {"name": "t", "sheets": [{"resolution": [6, 6], "material": dict(MAT)}], "frames": 5}
    base.update(kw)
    return SceneConfig.from_dict(base)


def test_free_fall_velocity_exact():
    cfg = scene(sheets=[{"resolution": [5, 5], "material": MAT, "membrane": False, "bending": False}],
                solver={"dt": 0.02, "tol": 1e-9})
    w = World(cfg)
    g = np.array(cfg.gravity)
    for k in range(1, 6):
        step(w)
        np.testing.assert_allclose(w.V, np.broadcast_to(k * g * 0.02, w.V.shape), rtol=1e-12, atol=1e-14)
    # position after k implicit Euler steps: sum_j j g dt^2
    np.testing.assert_allclose(w.C - w.C0, np.broadcast_to(15 * g * 0.02**2, w.C.shape), atol=1e-13)


def test_fully_pinned_unchanged():
    w = World(scene(pins=[{"sheet": 0, "select": "all"}]))
    C0 = w.C.copy()
    run(w, 3)
    assert np.array_equal(w.C, C0) and not np.any(w.V)


def test_rest_metrics():
    w = World(scene(gravity=[0.0, 0.0, 0.0]))
    m = metrics(w)
    assert not np.any(m["momentum"]) and m["kinetic"] == 0
    assert m["membrane"] < 1e-20 and m["bending"] < 1e-20
    assert m["max_deflection"] == 0


def test_rigid_translation_momentum():
    v = [0.3, -0.2, 0.1]
    w = World(scene(gravity=[0.0, 0.0, 0.0], sheets=[{"resolution": [6, 6], "material": MAT, "velocity": v}]))
    total = w.masses.sum()
    assert total == pytest.approx(200.0 * 1e-3, rel=1e-12)
    np.testing.assert_allclose(metrics(w)["momentum"], total * np.array(v), atol=1e-10)
    run(w, 3)
    np.testing.assert_allclose(metrics(w)["momentum"], total * np.array(v), atol=1e-10)
    np.testing.assert_allclose(w.C - w.C0, np.broadcast_to(3 * 0.01 * np.array(v), w.C.shape), atol=1e-10)


def test_pin_script_exact():
    w = World(builtin_scene("hanging", n=8, contact=False))
    corner = w.pins[0].indices[0]
    start = w.C[corner].copy()
    run(w, 15)
    np.testing.assert_allclose(w.C[corner] - start, [0.05, 0.0, 0.0], atol=1e-14)


def test_static_equilibrium_reached():
    cfg = builtin_scene("drape", n=6).with_overrides(["solver.dt=0.1", "solver.tol=1e-5", "contact=null"])
    w = World(cfg)
    run(w, 150)
    assert metrics(w)["kinetic"] < 1e-8


def test_settle_restores_dynamics_settings():
    w = World(builtin_scene("plate", n=6))
    dt = w.params.dt
    frames = settle(w, tol=1e-8, max_frames=20, dt=0.5)
    assert 1 <= frames <= 20 and w.params.dt == dt and w.config.quasi_static


def test_restart_from_snapshot_is_bit_identical(tmp_path):
    cfg = builtin_scene("hanging", n=8)
    a = World(cfg, deterministic=True)
    run(a, 3)
    save_snapshot(tmp_path / "s.bscs", a)
    run(a, 3)
    b = load_snapshot(tmp_path / "s.bscs", deterministic=True)
    assert b.frame == 3 and b.time == pytest.approx(0.03)
    run(b, 3)
    assert a.C.tobytes() == b.C.tobytes() and a.V.tobytes() == b.V.tobytes()


def test_moving_collider_script():
    cfg = builtin_scene("cloth_on_sphere", n=6).to_dict()
    cfg["colliders"][1]["script"] = [{"t0": 0.0, "t1": 1.0, "velocity": [0.0, 0.0, -0.1]}]
    w = World(SceneConfig.from_dict(cfg))
    run(w, 2)
    assert w.colliders[1].point[2] == pytest.approx(-0.001 - 0.002, abs=1e-15)


def test_step_failure_carries_frame():
    w = World(scene(gravity=[0.0, 0.0, 0.0]))
    w.V[0, 0] = np.nan
    with pytest.raises(StepFailure) as ei:
        step(w)
    assert ei.value.frame == 1
