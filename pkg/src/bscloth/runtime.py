"""World state, the implicit-Euler time loop and per-frame metrics."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .contact import ContactModel, Plane, Sphere
from .elasticity import ElasticModel, IPState, MaterialParams
from .geometry import QuadPoints, build_mass, precompute_quadpoints
from .quadrature import (build_bending_rule, build_full_membrane_rule, build_mass_rule,
                         build_membrane_rule)
from .scene import ConfigError, MotionScript, SceneConfig, select_controls
from .solver import NewtonProblem, StepReport, newton_solve
from .spline import SplineSheet, default_mesh_resolution, sample_embedded_mesh

log = logging.getLogger(__name__)


class StepFailure(RuntimeError):
    """A solver error raised while advancing ``frame``."""

    def __init__(self, frame: int, cause: BaseException):
        super().__init__(f"frame {frame}: {type(cause).__name__}: {cause}")
        self.frame = frame
        self.cause = cause


def _site_arrays(params: MaterialParams, n: int):
    return tuple(np.full(n, getattr(params, k)) for k in ("mu_st1", "mu_st2", "mu_sh", "mu_bd"))


def _membrane_rule(sheet: SplineSheet, kind: str):
    if kind == "full":
        return build_full_membrane_rule(sheet)
    return build_membrane_rule(sheet, interior=kind)


def make_sheet(sc, perturb: bool = True) -> SplineSheet:
    n, m = (int(r) for r in sc.resolution)
    sheet = SplineSheet.rectangle(n, m, size=sc.size, origin=sc.origin, axis_u=sc.axis_u, axis_v=sc.axis_v)
    au = np.asarray(sc.axis_u, float)
    av = np.asarray(sc.axis_v, float)
    X = sheet.material_cp
    W = (np.asarray(sc.origin, float) + sc.stretch[0] * X[..., :1] * au + sc.stretch[1] * X[..., 1:] * av)
    pert = sc.perturbation
    if pert and perturb:
        ku, kv = pert.get("modes", [1, 1])
        s = X[..., 0] / sc.size[0]
        t = X[..., 1] / sc.size[1]
        shape = np.sin(ku * np.pi * s) * np.sin(kv * np.pi * t)
        W = W + float(pert["amplitude"]) * shape[..., None] * np.asarray(pert.get("direction", [0, 0, 1]), float)
    sheet.world_cp = W
    sheet.world_vel = np.broadcast_to(np.asarray(sc.velocity, float), W.shape).copy()
    return sheet


@dataclass
class PinGroup:
    indices: np.ndarray  # global control indices
    script: MotionScript


class World:
    """Simulation state built from a :class:`SceneConfig`."""

    def __init__(self, config: SceneConfig, workers: int = 1, deterministic: bool = False):
        self.config = config
        self.params = config.solver_params(workers=workers, deterministic=deterministic)
        self.sheets = [make_sheet(sc) for sc in config.sheets]
        self.offsets = list(np.cumsum([0] + [s.n_ctrl for s in self.sheets])[:-1])
        self.n = int(sum(s.n_ctrl for s in self.sheets))

        mem, bend, mem_mu, bend_mu, masses = [], [], [], [], []
        for sc, sheet, off in zip(config.sheets, self.sheets, self.offsets):
            prm = sc.material_params()
            qm = precompute_quadpoints(sheet, _membrane_rule(sheet, sc.quadrature)).offset(off)
            qb = precompute_quadpoints(sheet, build_bending_rule(sheet)).offset(off)
            mem.append(qm)
            bend.append(qb)
            mem_mu.append(_site_arrays(prm, len(qm)))
            bend_mu.append(_site_arrays(prm, len(qb)))
            mm = build_mass(sheet, build_mass_rule(sheet), sc.areal_density, 1.0)
            masses.append(mm.lumped)
        cat = lambda parts: tuple(np.concatenate(a) for a in zip(*parts))  # noqa: E731
        self.elastic = ElasticModel(QuadPoints.concatenate(mem), QuadPoints.concatenate(bend),
                                    cat(mem_mu), cat(bend_mu), self.n)
        self.masses = np.concatenate(masses)

        self.meshes = []
        for sc, sheet in zip(config.sheets, self.sheets):
            res = sc.mesh_resolution or default_mesh_resolution(sheet)
            self.meshes.append(sample_embedded_mesh(sheet, res))

        self.C = np.concatenate([s.world_cp.reshape(-1, 3) for s in self.sheets])
        self.V = np.concatenate([s.world_vel.reshape(-1, 3) for s in self.sheets])
        self.C0 = self.C.copy()

        self.pins = []
        self.pinned = np.zeros(self.n, bool)
        for p in config.pins:
            idx = select_controls(config.sheets[p.sheet].resolution, p.select) + self.offsets[p.sheet]
            self.pins.append(PinGroup(idx, MotionScript(p.script)))
            self.pinned[idx] = True
        self.V[self.pinned] = 0.0
        # pins hold the unperturbed placement; a seed bump never bends the clamps
        for k, sc in enumerate(config.sheets):
            if sc.perturbation:
                sl = self.sheet_slice(k)
                flat = make_sheet(sc, perturb=False).world_cp.reshape(-1, 3)
                pin = self.pinned[sl]
                self.C[sl][pin] = flat[pin]
        self.C0 = self.C.copy()

        self.colliders, self.collider_scripts = [], []
        for c in config.colliders:
            if c.type == "plane":
                col = Plane(c.point, c.normal)
            else:
                col = Sphere(c.center, float(c.radius), c.angular_velocity or [0.0, 0.0, 0.0])
            self.colliders.append(col)
            self.collider_scripts.append(MotionScript(c.script))

        cp = config.contact_params()
        self.contact = None
        if cp is not None:
            self.contact = ContactModel(self.meshes, self.offsets, self.n, cp, self.colliders)
            d = self.contact.min_distance(self.C)
            if d <= 0:
                raise ConfigError(f"initial state is intersecting (min distance {d:.3e})")
        self.problem = NewtonProblem(self.elastic, self.contact, self.masses, self.pinned, self.params)
        self.gravity = np.asarray(config.gravity, float)
        self.time = 0.0
        self.frame = 0
        self.last_report: StepReport | None = None

        # reference planes for out-of-plane deflection
        self.planes = []
        for sc in config.sheets:
            nrm = np.cross(sc.axis_u, sc.axis_v)
            self.planes.append((np.asarray(sc.origin, float), nrm / np.linalg.norm(nrm)))

    # -- state ----------------------------------------------------------------

    def sheet_slice(self, k: int) -> slice:
        return slice(self.offsets[k], self.offsets[k] + self.sheets[k].n_ctrl)

    def mesh_positions(self, k: int) -> np.ndarray:
        return self.meshes[k].positions(self.C[self.sheet_slice(k)])

    def collider_state(self) -> np.ndarray:
        rows = []
        for col in self.colliders:
            rows.append(col.point if isinstance(col, Plane) else col.center)
        return np.array(rows, float).reshape(-1, 3)

    def set_collider_state(self, positions: np.ndarray) -> None:
        for col, p in zip(self.colliders, positions):
            if isinstance(col, Plane):
                col.point = np.array(p, float)
            else:
                col.center = np.array(p, float)


def step(world: World) -> StepReport:
    """Advance one implicit-Euler step; returns the Newton report."""
    prm = world.params
    dt = prm.dt
    ta, tb = world.time, world.time + dt
    C_old = world.C.copy()
    target = C_old.copy()
    for g in world.pins:
        target[g.indices] = C_old[g.indices] + g.script.displacement(ta, tb)
    for col, script in zip(world.colliders, world.collider_scripts):
        if not script.fixed:
            col.translate(script.displacement(ta, tb))

    x_hat = C_old + dt * world.V
    x_hat[world.pinned] = target[world.pinned]
    start = C_old.copy()
    start[world.pinned] = target[world.pinned]
    try:
        if world.contact is None or world.contact.max_step(start, x_hat - start) >= 1.0:
            start = x_hat.copy()
        world.problem.set_state(IPState(x_hat, dt, world.masses, world.gravity, ~world.pinned))
        C, report = newton_solve(world.problem, start, prm)
    except Exception as e:  # annotate and propagate
        raise StepFailure(world.frame + 1, e) from e
    if not report.converged:
        log.warning("frame %d: Newton hit max iterations (residual %.3e)", world.frame + 1, report.residual)
    C[world.pinned] = target[world.pinned]
    world.V = (C - C_old) / dt
    if world.config.quasi_static:
        world.V[:] = 0.0
    world.C = C
    world.time = tb
    world.frame += 1
    world.last_report = report
    return report


def metrics(world: World) -> dict:
    C, V, m = world.C, world.V, world.masses
    mom = (m[:, None] * V).sum(0)
    per_sheet = [(m[world.sheet_slice(k), None] * V[world.sheet_slice(k)]).sum(0)
                 for k in range(len(world.sheets))]
    e_mem, e_bend = world.elastic.energy_parts(C)
    e_bar, d_min = 0.0, float("inf")
    if world.contact is not None:
        e_bar = world.contact.energy(C)
        d_min = world.contact.min_distance(C)
    defl = 0.0
    for k, (o, nrm) in enumerate(world.planes):
        X = world.mesh_positions(k)
        defl = max(defl, float(np.abs((X - o) @ nrm).max()))
    return {
        "frame": world.frame,
        "time": world.time,
        "momentum": mom,
        "sheet_momentum": per_sheet,
        "kinetic": 0.5 * float(np.einsum("n,ni,ni->", m, V, V)),
        "membrane": e_mem,
        "bending": e_bend,
        "barrier": e_bar,
        "max_deflection": defl,
        "min_distance": d_min,
    }


def run(world: World, frames: int | None = None, callback=None) -> list[StepReport]:
    frames = world.config.frames if frames is None else frames
    reports = []
    for _ in range(frames):
        rep = step(world)
        reports.append(rep)
        if callback is not None:
            callback(world, rep)
    return reports


def settle(world: World, tol: float = 1e-7, max_frames: int = 200, dt: float | None = None) -> int:
    """Quasi-static relaxation: zero velocities each step until control points stop moving."""
    old_dt, old_qs = world.params.dt, world.config.quasi_static
    if dt is not None:
        world.params.dt = dt
    world.config.quasi_static = True
    world.V[:] = 0.0
    try:
        for k in range(max_frames):
            C_prev = world.C.copy()
            step(world)
            if np.abs(world.C - C_prev).max() < tol:
                return k + 1
        return max_frames
    finally:
        world.params.dt = old_dt
        world.config.quasi_static = old_qs
