"""Projected Newton on the incremental potential with a direct and a Neumann linear solve."""

from __future__ import annotations

import hashlib
import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import (BlockSparseMatrix, ContactAssemblyStats, add_diagonal, apply_pins,
                       assemble_elasticity, bending_blocks, convert_contact_hessian,
                       precompute_sparsity)
from .contact import ContactModel, InterpenetrationError
from .elasticity import ElasticModel, IPState, NonFiniteStateError

log = logging.getLogger(__name__)

try:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        from sksparse import cholmod as _cholmod
except ImportError:  # pragma: no cover - depends on the environment
    _cholmod = None

RESIDUAL_TOL = 1e-10


class LinearSolveError(RuntimeError):
    pass


class LineSearchError(RuntimeError):
    pass


@dataclass
class SolverParams:
    dt: float = 1e-2
    tol: float = 1e-2
    max_newton: int = 50
    ls_shrink: float = 0.5
    ls_min: float = 1e-10
    ccd_scale: float = 0.9
    neumann: bool = True
    neumann_theta: float = 0.5
    neumann_tol: float = 1e-6
    neumann_max_terms: int = 16
    project: bool = True
    workers: int = 1
    deterministic: bool = False

    def __post_init__(self):
        if self.dt <= 0 or self.tol <= 0:
            raise ValueError("dt and tol must be positive")
        if not 0 < self.ls_shrink < 1:
            raise ValueError("ls_shrink must lie in (0, 1)")


@dataclass
class IterationTiming:
    assembly: float = 0.0
    factor: float = 0.0
    solve: float = 0.0
    ccd: float = 0.0
    line_search: float = 0.0


@dataclass
class StepReport:
    iterations: int = 0
    timings: list = field(default_factory=list)
    pf_triggers: int = 0
    pf_accepted: int = 0
    pf_bounds: list = field(default_factory=list)
    neumann_residuals: list = field(default_factory=list)
    residual: float = 0.0
    ip_values: list = field(default_factory=list)
    converged: bool = False
    contact_pairs: int = 0

    def total(self, name: str) -> float:
        return float(sum(getattr(t, name) for t in self.timings))


# -- linear algebra --------------------------------------------------------------


def _pattern_key(A: sp.csc_matrix) -> str:
    h = hashlib.sha1()
    h.update(A.indptr.tobytes())
    h.update(A.indices.tobytes())
    return h.hexdigest()


class DirectSolver:
    """Sparse SPD solve with the symbolic analysis cached per sparsity pattern."""

    def __init__(self, backend: str | None = None):
        if backend is None:
            backend = "cholmod" if _cholmod is not None else "splu"
        if backend == "cholmod" and _cholmod is None:
            raise ImportError("CHOLMOD backend requested but scikit-sparse is not installed")
        self.backend = backend
        self._symbolic = {}
        self.analyses = 0

    def factor(self, A):
        """Numeric factorization; returns a callable ``solve(b)``."""
        A = sp.csc_matrix(A)
        A.sort_indices()
        if self.backend == "cholmod":
            key = _pattern_key(A)
            sym = self._symbolic.get(key)
            if sym is None:
                sym = _cholmod.analyze(A)
                self._symbolic[key] = sym
                self.analyses += 1
            try:
                f = sym.cholesky(A)
            except _cholmod.CholmodNotPositiveDefiniteError as exc:
                raise LinearSolveError(str(exc)) from exc
            return f.solve_A
        try:
            lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A", options={"SymmetricMode": True})
        except RuntimeError as exc:
            raise LinearSolveError(str(exc)) from exc
        self.analyses += 1
        return lu.solve

    def solve(self, A, b) -> np.ndarray:
        return direct_solve(A, b, self)


def _refine(A, b, x, solve):
    nb = np.linalg.norm(b)
    res = np.linalg.norm(A @ x - b) / max(nb, 1e-300)
    for _ in range(2):
        if res < RESIDUAL_TOL:
            break
        x = x + solve(b - A @ x)
        res = np.linalg.norm(A @ x - b) / max(nb, 1e-300)
    return x, res


def direct_solve(H, g, solver: DirectSolver | None = None) -> np.ndarray:
    """Solve ``H dx = -g`` for SPD ``H``; one retry with a small diagonal shift."""
    solver = solver or DirectSolver()
    H = sp.csc_matrix(H)
    g = np.asarray(g, float).ravel()
    b = -g
    if not np.any(b):
        return np.zeros_like(b)
    try:
        solve = solver.factor(H)
    except LinearSolveError:
        d = H.diagonal()
        shift = 1e-8 * max(np.abs(d).max(), 1.0)
        log.warning("factorization failed; retrying with diagonal shift %.3e", shift)
        H = (H + shift * sp.identity(H.shape[0], format="csc")).tocsc()
        solve = solver.factor(H)
    x, res = _refine(H, b, solve(b), solve)
    if not np.all(np.isfinite(x)) or res >= RESIDUAL_TOL:
        raise LinearSolveError(f"direct solve residual {res:.3e}")
    return x


def gershgorin_bounds(A) -> tuple[float, float]:
    """(min_i (A_ii - R_i), max_i (A_ii + R_i)) over scalar rows."""
    A = sp.csr_matrix(A)
    d = A.diagonal()
    R = np.asarray(abs(A).sum(axis=1)).ravel() - np.abs(d)
    if A.shape[0] == 0:
        return 0.0, 0.0
    return float((d - R).min()), float((d + R).max())


def estimate_trigger(D, B, theta: float = 0.5) -> tuple[float, bool]:
    """Upper bound on the norm of ``D^-1 B`` and whether the Neumann path may be used."""
    lam_min_D, _ = gershgorin_bounds(D)
    B = sp.csr_matrix(B)
    if B.nnz == 0:
        return 0.0, lam_min_D > 0
    _, lam_max_B = gershgorin_bounds(B)
    if lam_min_D <= 0:
        return float("inf"), False
    bound = lam_max_B / lam_min_D
    return bound, bound < theta


def neumann_solve(solve_D, B, g, tol: float = 1e-6, max_terms: int = 16):
    """Partial sums ``x_{k+1} = D^-1 (-g - B x_k)`` of the Neumann series.

    With exact solves by ``D`` the residual against ``H = D + B`` is
    ``B (x_{k+1} - x_k)``, so it comes for free. Returns
    ``(x, accepted, terms, residual)``.
    """
    B = sp.csr_matrix(B)
    b = -np.asarray(g, float).ravel()
    nb = np.linalg.norm(b)
    if nb == 0:
        return np.zeros_like(b), True, 0, 0.0
    x = solve_D(b)
    res = np.linalg.norm(B @ x) / nb
    terms = 1
    while res >= tol and terms < max_terms:
        x_new = solve_D(b - B @ x)
        res = np.linalg.norm(B @ (x_new - x)) / nb
        x = x_new
        terms += 1
    return x, res < tol, terms, res


# -- problem -----------------------------------------------------------------------


class NewtonProblem:
    """Incremental potential of one time step and its assembled Hessians."""

    def __init__(self, elastic: ElasticModel, contact: ContactModel | None, masses: np.ndarray,
                 pinned: np.ndarray, params: SolverParams):
        self.elastic = elastic
        self.contact = contact
        self.masses = np.asarray(masses, float)
        self.pinned = np.asarray(pinned, bool)
        self.params = params
        n = elastic.n_ctrl
        self.n = n
        self.skel, self.smap = precompute_sparsity(elastic.membrane, elastic.bending, n)
        self.bend_data = bending_blocks(self.skel, elastic.bending, elastic.bend_scalars)
        self.direct = DirectSolver()
        self.contact_stats = ContactAssemblyStats()
        self.state: IPState | None = None

    def set_state(self, state: IPState) -> None:
        self.state = state

    def value(self, C) -> float:
        st = self.state
        d = C - st.x_hat
        v = 0.5 / st.dt**2 * float(np.einsum("n,ni,ni->", st.masses, d, d))
        v -= float(st.masses @ (C @ st.gravity))
        v += self.elastic.energy(C)
        if self.contact is not None:
            v += self.contact.energy(C)
        if not np.isfinite(v):
            raise NonFiniteStateError("incremental potential is not finite")
        return v

    def gradient(self, C):
        st = self.state
        g = (st.masses / st.dt**2)[:, None] * (C - st.x_hat) - st.masses[:, None] * st.gravity
        g = g + self.elastic.gradient(C)
        pairs = None
        if self.contact is not None:
            X = self.contact.vertices(C)
            pairs = self.contact.find_active_pairs(X)
            if len(pairs):
                _, gv, Hv = self.contact.pair_derivs(X, pairs, project=self.params.project)
                g = g + self.contact.pullback_gradient(pairs.verts, gv)
                pairs = (X, pairs, Hv)
            else:
                pairs = None
        g[self.pinned] = 0.0
        return g, pairs

    def elastic_matrix(self, C) -> BlockSparseMatrix:
        Hm = self.elastic.membrane_hessian_blocks(C, project=self.params.project)
        E = assemble_elasticity(self.skel, self.smap, Hm, self.bend_data, workers=self.params.workers)
        return add_diagonal(E, self.state.masses, self.state.dt, self.pinned)

    def contact_matrix(self, contact_data) -> BlockSparseMatrix | None:
        if contact_data is None:
            return None
        X, pairs, Hv = contact_data
        n_cells = 16 if self.params.deterministic else None
        M = convert_contact_hessian(pairs.verts, Hv, self.contact.W, X, self.n,
                                    workers=self.params.workers, n_cells=n_cells,
                                    stats=self.contact_stats)
        if np.any(self.pinned):
            apply_pins(M, self.pinned, diag_value=0.0)
        return M

    def max_step(self, C, dC) -> float:
        if self.contact is None:
            return 1.0
        return self.contact.max_step(C, dC)


def _contact_split(E: BlockSparseMatrix, Cm: BlockSparseMatrix):
    """D = E + block diagonal of the contact matrix (on E's pattern), B = the rest."""
    _, co = Cm.split_diagonal()
    D = E.copy()
    diag_c = Cm.indices == Cm.col_of
    pos = E.find(Cm.indices[diag_c], Cm.col_of[diag_c])
    D.data[pos] += Cm.data[diag_c]
    return D.to_scipy(), co.to_scipy()


def solve_newton_system(problem: NewtonProblem, E: BlockSparseMatrix, Cm: BlockSparseMatrix | None,
                        g: np.ndarray, report: StepReport, timing: IterationTiming) -> np.ndarray:
    prm = problem.params
    gf = g.ravel()
    if Cm is None or Cm.nnzb == 0:
        t0 = time.perf_counter()
        H = E.to_scipy()
        solve = problem.direct.factor(H)
        timing.factor += time.perf_counter() - t0
        t0 = time.perf_counter()
        x, res = _refine(sp.csc_matrix(H), -gf, solve(-gf), solve)
        timing.solve += time.perf_counter() - t0
        if res >= RESIDUAL_TOL or not np.all(np.isfinite(x)):
            x = direct_solve(H, gf, problem.direct)
        return x.reshape(-1, 3)

    D, B = _contact_split(E, Cm)
    H = (D + B).tocsc()
    if prm.neumann and B.nnz:
        bound, trig = estimate_trigger(D, B, prm.neumann_theta)
        report.pf_bounds.append(bound)
        if trig:
            report.pf_triggers += 1
            t0 = time.perf_counter()
            solve_D = problem.direct.factor(D)
            timing.factor += time.perf_counter() - t0
            t0 = time.perf_counter()
            x, ok, _, res = neumann_solve(solve_D, B, gf, tol=prm.neumann_tol,
                                          max_terms=prm.neumann_max_terms)
            res = float(np.linalg.norm(H @ x + gf) / np.linalg.norm(gf))
            ok = ok and res < prm.neumann_tol
            timing.solve += time.perf_counter() - t0
            if ok:
                report.pf_accepted += 1
                report.neumann_residuals.append(res)
                return x.reshape(-1, 3)
    t0 = time.perf_counter()
    solve = problem.direct.factor(H)
    timing.factor += time.perf_counter() - t0
    t0 = time.perf_counter()
    x, res = _refine(H, -gf, solve(-gf), solve)
    timing.solve += time.perf_counter() - t0
    if res >= RESIDUAL_TOL or not np.all(np.isfinite(x)):
        x = direct_solve(H, gf, problem.direct)
    return x.reshape(-1, 3)


def _safe_value(problem: NewtonProblem, C) -> float:
    try:
        return problem.value(C)
    except InterpenetrationError:
        return np.inf


def newton_solve(problem: NewtonProblem, C0: np.ndarray, params: SolverParams | None = None):
    """Minimize the incremental potential from ``C0``; returns ``(C, StepReport)``."""
    prm = params or problem.params
    C = np.array(C0, float)
    report = StepReport()
    E0 = problem.value(C)
    report.ip_values.append(E0)
    for _ in range(prm.max_newton):
        timing = IterationTiming()
        t0 = time.perf_counter()
        g, cdata = problem.gradient(C)
        E = problem.elastic_matrix(C)
        Cm = problem.contact_matrix(cdata)
        report.contact_pairs = 0 if cdata is None else len(cdata[1])
        timing.assembly = time.perf_counter() - t0

        dC = solve_newton_system(problem, E, Cm, g, report, timing)
        dC[problem.pinned] = 0.0
        step_norm = float(np.abs(dC).max(initial=0.0)) / prm.dt
        report.residual = step_norm
        if step_norm < prm.tol:
            report.timings.append(timing)
            report.converged = True
            break

        t0 = time.perf_counter()
        t_max = problem.max_step(C, dC)
        timing.ccd = time.perf_counter() - t0
        alpha = 1.0 if t_max >= 1.0 else prm.ccd_scale * t_max

        t0 = time.perf_counter()
        while True:
            E1 = _safe_value(problem, C + alpha * dC)
            if E1 <= E0:
                break
            alpha *= prm.ls_shrink
            if alpha < prm.ls_min:
                timing.line_search = time.perf_counter() - t0
                report.timings.append(timing)
                if alpha * step_norm < prm.tol:
                    report.converged = True
                    return C, report
                raise LineSearchError(
                    f"line search stalled: |dC|/dt={step_norm:.3e}, IP={E0:.6e}, trial={E1:.6e}")
        timing.line_search = time.perf_counter() - t0
        C = C + alpha * dC
        E0 = E1
        report.ip_values.append(E0)
        report.iterations += 1
        report.timings.append(timing)
    return C, report
