"""Convergence and property benchmarks behind ``bscloth benchmark``.

Each benchmark returns rows with the columns of :data:`COLUMNS`; ``target``
is empty where no analytic value exists.
"""

from __future__ import annotations

import csv
import io
import time

import numpy as np

from .assembly import elasticity_triplets, triplet_oracle
from .elasticity import MaterialParams, membrane_batch
from .geometry import precompute_quadpoints
from .quadrature import build_membrane_rule
from .runtime import World, metrics, settle, step
from .scene import builtin_scene, plate_target
from .spline import SplineSheet

COLUMNS = ["benchmark", "resolution", "quantity", "measured", "target", "rel_error", "wall_s"]

DEFAULT_RESOLUTIONS = {
    "plate": [16, 32, 64],
    "wrinkling": [80, 100],
    "momentum": [12],
    "hanging": [32],
    "quadrature-ablation": [6],
}


def _row(name, res, quantity, measured, target=None, rel=None, wall=0.0) -> dict:
    return {"benchmark": name, "resolution": res, "quantity": quantity, "measured": measured,
            "target": "" if target is None else target, "rel_error": "" if rel is None else rel,
            "wall_s": round(wall, 3)}


def run_plate(n: int, workers: int = 1, deterministic: bool = False) -> dict:
    t = time.perf_counter()
    world = World(builtin_scene("plate", n=n), workers=workers, deterministic=deterministic)
    for _ in range(world.config.frames):
        step(world)
    w = metrics(world)["max_deflection"]
    target = plate_target()
    return _row("plate", n, "max_deflection_m", w, target, abs(w - target) / target, time.perf_counter() - t)


def run_momentum(n: int, workers: int = 1, deterministic: bool = False, frames: int | None = None) -> dict:
    """Max drift of total momentum over the run, relative to the sum of per-sheet momentum magnitudes."""
    t = time.perf_counter()
    world = World(builtin_scene("momentum", n=n), workers=workers, deterministic=deterministic)
    m0 = metrics(world)
    p0 = m0["momentum"]
    scale = sum(np.linalg.norm(p) for p in m0["sheet_momentum"])
    drift = 0.0
    for _ in range(world.config.frames if frames is None else frames):
        step(world)
        drift = max(drift, float(np.linalg.norm(metrics(world)["momentum"] - p0)) / scale)
    return _row("momentum", n, "momentum_drift_rel", drift, wall=time.perf_counter() - t)


def run_wrinkling(n: int, workers: int = 1, deterministic: bool = False, max_frames: int = 60) -> dict:
    """Quasi-static stretch; reports the settled out-of-plane deflection."""
    t = time.perf_counter()
    world = World(builtin_scene("wrinkling", n=n), workers=workers, deterministic=deterministic)
    settle(world, tol=1e-8, max_frames=max_frames)
    d = metrics(world)["max_deflection"]
    return _row("wrinkling", n, "max_out_of_plane_m", d, wall=time.perf_counter() - t)


def hanging_pair(n: int = 32, steps: int = 50, workers: int = 1, deterministic: bool = False,
                 settle_frames: int = 300) -> dict:
    """Reduced vs per-span 2x2 membrane quadrature on the hanging scene.

    Returns mean Newton iterations over ``steps`` and the settled control
    points of both runs.
    """
    out = {}
    for rule in ("reduced", "full"):
        world = World(builtin_scene("hanging", n=n, quadrature=rule), workers=workers,
                      deterministic=deterministic)
        iters = [step(world).iterations for _ in range(steps)]
        settle(world, tol=1e-6, max_frames=settle_frames, dt=0.1)
        out[rule] = {"iters": float(np.mean(iters)), "C": world.C.copy(),
                     "size": float(max(world.config.sheets[0].size))}
    return out


def run_hanging(n: int, workers: int = 1, deterministic: bool = False) -> list[dict]:
    t = time.perf_counter()
    res = hanging_pair(n, workers=workers, deterministic=deterministic)
    wall = time.perf_counter() - t
    r, f = res["reduced"], res["full"]
    diff = float(np.abs(r["C"] - f["C"]).max()) / r["size"]
    ratio = max(r["iters"], f["iters"]) / min(r["iters"], f["iters"])
    return [
        _row("hanging", n, "mean_newton_iters_reduced", r["iters"], wall=wall),
        _row("hanging", n, "mean_newton_iters_full", f["iters"], wall=wall),
        _row("hanging", n, "newton_iters_ratio", ratio, wall=wall),
        _row("hanging", n, "equilibrium_diff_rel_size", diff, wall=wall),
    ]


def stiffness_null_count(n: int, interior: str, rel: float = 1e-8, stretch: float = 1.0,
                         in_plane: bool = False) -> tuple[int, np.ndarray]:
    """Eigenvalues of the membrane stiffness of a flat ``n x n`` patch below ``rel * lambda_max``.

    ``in_plane`` restricts to the x/y DOFs; a flat membrane has no stiffness
    against out-of-plane motion, so the full count includes all of those.
    """
    sheet = SplineSheet.rectangle(n, n)
    C = sheet.world_cp.reshape(-1, 3) * np.array([stretch, stretch, 1.0])
    qps = precompute_quadpoints(sheet, build_membrane_rule(sheet, interior=interior))
    _, _, H = membrane_batch(qps, C, MaterialParams(1.0, 1.0, 1.0, 0.0), project=False)
    K = triplet_oracle(sheet.n_ctrl, elasticity_triplets(qps, H)).toarray()
    if in_plane:
        keep = np.arange(K.shape[0]) % 3 < 2
        K = K[np.ix_(keep, keep)]
    ev = np.linalg.eigvalsh(K)
    return int((ev < rel * ev.max()).sum()), ev


def checkerboard_energy_ratio(n: int) -> float:
    """Rayleigh quotient of the control-point checkerboard under the 1x1 vs the reduced rule."""
    sheet = SplineSheet.rectangle(n, n)
    I, J = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    z = np.zeros((sheet.n_ctrl, 3))
    z[:, 0] = ((-1.0) ** (I + J)).ravel()
    C = sheet.world_cp.reshape(-1, 3)
    out = []
    for interior in ("one_point", "reduced"):
        qps = precompute_quadpoints(sheet, build_membrane_rule(sheet, interior=interior))
        _, _, H = membrane_batch(qps, C, MaterialParams(1.0, 1.0, 1.0, 0.0), project=False)
        K = triplet_oracle(sheet.n_ctrl, elasticity_triplets(qps, H))
        out.append(float(z.ravel() @ (K @ z.ravel())))
    return out[0] / out[1]


def run_ablation(n: int) -> list[dict]:
    t = time.perf_counter()
    n_one, _ = stiffness_null_count(n, "one_point")
    n_red, _ = stiffness_null_count(n, "reduced")
    p_one, _ = stiffness_null_count(n, "one_point", in_plane=True)
    p_red, _ = stiffness_null_count(n, "reduced", in_plane=True)
    ratio = checkerboard_energy_ratio(n)
    wall = time.perf_counter() - t
    return [
        _row("quadrature-ablation", n, "near_zero_modes_one_point", n_one, wall=wall),
        _row("quadrature-ablation", n, "near_zero_modes_reduced", n_red, wall=wall),
        _row("quadrature-ablation", n, "near_zero_in_plane_one_point", p_one, wall=wall),
        _row("quadrature-ablation", n, "near_zero_in_plane_reduced", p_red, wall=wall),
        _row("quadrature-ablation", n, "checkerboard_energy_ratio", ratio, wall=wall),
    ]


def run_benchmark(name: str, resolutions=None, workers: int = 1, deterministic: bool = False) -> list[dict]:
    if name not in DEFAULT_RESOLUTIONS:
        raise KeyError(name)
    resolutions = resolutions or DEFAULT_RESOLUTIONS[name]
    rows = []
    for n in resolutions:
        if name == "plate":
            rows.append(run_plate(n, workers, deterministic))
        elif name == "momentum":
            rows.append(run_momentum(n, workers, deterministic))
        elif name == "wrinkling":
            rows.append(run_wrinkling(n, workers, deterministic))
        elif name == "hanging":
            rows.extend(run_hanging(n, workers, deterministic))
        else:
            rows.extend(run_ablation(n))
    if name == "wrinkling":
        for prev, cur in zip(rows, rows[1:]):
            cur["rel_error"] = abs(cur["measured"] - prev["measured"]) / max(abs(prev["measured"]), 1e-300)
    return rows


def to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()
