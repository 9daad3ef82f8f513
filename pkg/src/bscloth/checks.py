"""Verification suites run by ``bscloth check``: each property reports a value against a threshold."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
import scipy.sparse as sp

from .assembly import (assemble_elasticity, contact_triplets, convert_contact_hessian,
                       elasticity_triplets, triplet_oracle)
from .elasticity import IPState
from .runtime import World
from .scene import SceneConfig
from .solver import DirectSolver, direct_solve, estimate_trigger, neumann_solve
from .spline import KnotVector, basis_table, eval_basis_order


@dataclass
class CheckResult:
    suite: str
    name: str
    value: float
    threshold: float
    passed: bool

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def _result(suite, name, value, threshold, below=True) -> CheckResult:
    value = float(value)
    ok = value < threshold if below else value > threshold
    return CheckResult(suite, name, value, threshold, bool(ok))


# -- scenes used by the checks ---------------------------------------------------


def small_world(n: int = 6, seed: int = 0, contact: bool = False) -> World:
    mat = {"density": 200.0, "thickness": 1e-3, "E_stretch": 1e5, "E_bend": 1e6, "E_shear": 5e4}
    cfg = {"name": "check", "sheets": [{"resolution": [n, n], "material": mat}],
           "solver": {"dt": 1e-2}, "frames": 1}
    if contact:
        cfg["contact"] = {"dhat": 1e-2, "kappa": 1e1}
    return World(SceneConfig.from_dict(cfg))


def random_configuration(world: World, rng: np.random.Generator, amplitude: float = 0.15) -> np.ndarray:
    """Rest state, randomly rotated, stretched and perturbed by a fraction of the control spacing."""
    C = world.C0.copy()
    spacing = 1.0 / max(world.sheets[0].n_spans)
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    C = (C - C.mean(0)) @ np.diag(rng.uniform(0.8, 1.2, 3)) @ q.T
    return C + amplitude * spacing * rng.normal(size=C.shape)


def contact_world(n: int = 6, gap: float = 6e-4, dhat: float = 1e-3, kappa: float = 1e2,
                  mesh: int | None = None) -> World:
    """Two parallel sheets a fraction of ``dhat`` apart, offset by a quarter of a control cell."""
    mat = {"density": 200.0, "thickness": 1e-3, "E_stretch": 1e5}
    shift = 0.25 / n
    res = [mesh, mesh] if mesh else None
    cfg = {
        "name": "contact-check",
        "sheets": [
            {"resolution": [n, n], "material": mat, "mesh_resolution": res},
            {"resolution": [n, n], "origin": [shift, shift, gap], "material": mat, "mesh_resolution": res},
        ],
        "contact": {"dhat": dhat, "kappa": kappa},
        "gravity": [0.0, 0.0, 0.0],
        "solver": {"dt": 1e-2},
        "frames": 1,
    }
    return World(SceneConfig.from_dict(cfg))


def set_ip_state(world: World, rng: np.random.Generator) -> None:
    x_hat = world.C + 1e-3 * rng.normal(size=world.C.shape)
    free = np.ones(world.n, bool)
    world.problem.set_state(IPState(x_hat, world.params.dt, world.masses, world.gravity, free))


# -- finite-difference oracles -------------------------------------------------


def fd_gradient(f, C: np.ndarray, h: float) -> np.ndarray:
    g = np.zeros(C.size)
    x = C.ravel().copy()
    for k in range(x.size):
        x0 = x[k]
        x[k] = x0 + h
        fp = f(x.reshape(C.shape))
        x[k] = x0 - h
        fm = f(x.reshape(C.shape))
        x[k] = x0
        g[k] = (fp - fm) / (2 * h)
    return g.reshape(C.shape)


def fd_jacobian(grad, C: np.ndarray, h: float) -> np.ndarray:
    n = C.size
    J = np.zeros((n, n))
    x = C.ravel().copy()
    for k in range(n):
        x0 = x[k]
        x[k] = x0 + h
        gp = grad(x.reshape(C.shape)).ravel()
        x[k] = x0 - h
        gm = grad(x.reshape(C.shape)).ravel()
        x[k] = x0
        J[:, k] = (gp - gm) / (2 * h)
    return J


def rel_error(a, b) -> float:
    a, b = np.asarray(a).ravel(), np.asarray(b).ravel()
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def elastic_hessian_dense(world: World, C: np.ndarray, project: bool = False) -> np.ndarray:
    pb = world.problem
    Hm = world.elastic.membrane_hessian_blocks(C, project=project)
    return assemble_elasticity(pb.skel, pb.smap, Hm, pb.bend_data).toarray()


def ip_gradient_error(world: World, C: np.ndarray, h: float = 1e-6) -> float:
    pb = world.problem
    g, _ = pb.gradient(C)
    return rel_error(fd_gradient(pb.value, C, h), g)


def elastic_hessian_error(world: World, C: np.ndarray, h: float = 1e-6) -> float:
    H = elastic_hessian_dense(world, C, project=False)
    J = fd_jacobian(world.elastic.gradient, C, h)
    return rel_error(J, H)


# -- suites -------------------------------------------------------------------------


def suite_basis() -> list[CheckResult]:
    out = []
    rng = np.random.default_rng(1)
    worst_pu = worst_d = worst_ref = 0.0
    for n in (3, 4, 7, 12):
        kv = KnotVector.open_uniform(n)
        x = np.concatenate([rng.uniform(kv.start, kv.end, 200), [kv.start, kv.end], np.arange(kv.n_spans + 1.0)])
        tab = basis_table(kv, x)
        worst_pu = max(worst_pu, np.abs(tab[0].sum(1) - 1).max())
        worst_d = max(worst_d, np.abs(tab[1].sum(1)).max(), np.abs(tab[2].sum(1)).max())
        for k, xi in enumerate(x[:20]):
            ref = np.array([eval_basis_order(kv, i, 2, xi) for i in range(n)])
            worst_ref = max(worst_ref, np.abs(tab[0, k] - ref).max())
    out.append(_result("basis", "partition_of_unity", worst_pu, 1e-12))
    out.append(_result("basis", "derivative_sums", worst_d, 1e-10))
    out.append(_result("basis", "recursive_reference", worst_ref, 1e-12))
    return out


def suite_gradients(resolutions=(4, 6, 8), configs: int = 10, seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    g_err = h_err = 0.0
    for n in resolutions:
        world = small_world(n)
        for _ in range(configs):
            C = random_configuration(world, rng)
            set_ip_state(world, rng)
            g_err = max(g_err, ip_gradient_error(world, C))
            h_err = max(h_err, elastic_hessian_error(world, C))
    cw = contact_world(5)
    set_ip_state(cw, rng)
    b_err = 0.0
    for _ in range(3):
        C = cw.C + 5e-5 * rng.normal(size=cw.C.shape)
        b_err = max(b_err, ip_gradient_error(cw, C, h=1e-8))
    return [
        _result("gradients", "ip_gradient_fd", g_err, 1e-4),
        _result("gradients", "elastic_hessian_fd", h_err, 1e-3),
        _result("gradients", "barrier_gradient_fd", b_err, 1e-4),
    ]


def assembly_case(workers_list=(1, 4, 8), n: int = 6, mesh: int = 9, kappa: float = 0.1):
    """Max abs and relative differences of parallel assembly vs triplet oracles, and the pair count.

    Entries of the contact matrix scale with ``kappa``; the small default
    keeps them O(10) so an absolute bound measures summation-order rounding.
    """
    world = contact_world(n, kappa=kappa, mesh=mesh)
    C = world.C
    pb = world.problem
    Hm = world.elastic.membrane_hessian_blocks(C)
    E_ref = triplet_oracle(world.n, elasticity_triplets(world.elastic.membrane, Hm, world.elastic.bending,
                                                        world.elastic.bend_scalars))
    X = world.contact.vertices(C)
    pairs = world.contact.find_active_pairs(X)
    _, _, Hv = world.contact.pair_derivs(X, pairs)
    C_ref = triplet_oracle(world.n, contact_triplets(pairs.verts, Hv, world.contact.W))
    e_diff = c_diff = 0.0
    for w in workers_list:
        E = assemble_elasticity(pb.skel, pb.smap, Hm, pb.bend_data, workers=w)
        e_diff = max(e_diff, abs(E.to_scipy() - E_ref).max())
        M = convert_contact_hessian(pairs.verts, Hv, world.contact.W, X, world.n, workers=w)
        c_diff = max(c_diff, abs(M.to_scipy() - C_ref).max())
    c_rel = c_diff / abs(C_ref).max()
    return e_diff, c_diff, c_rel, len(pairs)


def suite_assembly() -> list[CheckResult]:
    e_diff, c_diff, c_rel, k = assembly_case()
    return [
        _result("assembly", "elasticity_vs_triplets", e_diff, 1e-12),
        _result("assembly", "contact_vs_triplets", c_diff, 1e-12),
        _result("assembly", "contact_vs_triplets_relative", c_rel, 1e-13),
        _result("assembly", "active_pairs", k, 500, below=False),
    ]


def suite_solver(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    D = sp.identity(2, format="csr") * 2.0
    B = sp.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
    solve_D = lambda b: b / 2.0  # noqa: E731
    x, ok, terms, _ = neumann_solve(solve_D, B, -np.ones(2), tol=1e-11, max_terms=40)
    bound, _ = estimate_trigger(D, B)
    A = rng.normal(size=(30, 30))
    A = A @ A.T + 30 * np.eye(30)
    b = rng.normal(size=30)
    xd = direct_solve(sp.csc_matrix(A), -b, DirectSolver())
    return [
        _result("solver", "neumann_hand_example", np.abs(x - 1 / 3).max() if ok else np.inf, 1e-10),
        _result("solver", "neumann_terms", terms, 40.5),
        _result("solver", "gershgorin_hand_bound", abs(bound - 0.5), 1e-14),
        _result("solver", "direct_vs_dense", np.abs(xd - np.linalg.solve(A, b)).max(), 1e-10),
    ]


SUITES = {
    "basis": suite_basis,
    "gradients": suite_gradients,
    "assembly": suite_assembly,
    "solver": suite_solver,
}


def run_suite(name: str) -> list[CheckResult]:
    if name not in SUITES:
        raise KeyError(name)
    return SUITES[name]()
