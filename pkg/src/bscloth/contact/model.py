"""Proximity pairs on embedded meshes, barrier energy on control points and CCD."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .. import kernels
from ..elasticity import LocalSystem
from ..spline import EmbeddedMesh
from .barrier import barrier, barrier_chain
from .broadphase import box_pairs
from .distance import dist_derivs

KIND_PT, KIND_EE, KIND_PLANE, KIND_SPHERE = 0, 1, 2, 3
KIND_NAMES = {KIND_PT: "vertex-triangle", KIND_EE: "edge-edge", KIND_PLANE: "vertex-plane",
              KIND_SPHERE: "vertex-sphere"}


CACHE_FACTOR = 4.0


class InterpenetrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ContactParams:
    dhat: float = 1e-3
    kappa: float = 1e3
    self_contact: bool = True
    ccd_floor: float = 0.01
    ccd_max_iter: int = 64

    def __post_init__(self):
        if self.dhat <= 0 or self.kappa <= 0:
            raise ValueError("dhat and kappa must be positive")


@dataclass
class ContactPair:
    kind: str
    indices: np.ndarray
    distance: float
    grad: np.ndarray | None = None  # (len(indices), 3)
    hess: np.ndarray | None = None  # (3 len, 3 len)
    energy: float = 0.0


@dataclass
class PairSet:
    """Active pairs as arrays; ``verts`` is padded with -1 for collider pairs."""

    kind: np.ndarray
    verts: np.ndarray  # (k, 4)
    code: np.ndarray  # closest-feature code, -1 for collider pairs
    collider: np.ndarray  # collider index, -1 for mesh pairs
    dist: np.ndarray

    def __len__(self) -> int:
        return self.kind.size

    @staticmethod
    def empty() -> "PairSet":
        z = np.zeros(0, np.int64)
        return PairSet(z, np.zeros((0, 4), np.int64), z, z, np.zeros(0))

    @staticmethod
    def concatenate(parts: list["PairSet"]) -> "PairSet":
        parts = [p for p in parts if len(p)]
        if not parts:
            return PairSet.empty()
        return PairSet(*(np.concatenate([getattr(p, f) for p in parts])
                         for f in ("kind", "verts", "code", "collider", "dist")))

    def __getitem__(self, i: int) -> ContactPair:
        v = self.verts[i]
        return ContactPair(KIND_NAMES[int(self.kind[i])], v[v >= 0], float(self.dist[i]))


def _pair_slots(X, verts):
    return X[np.maximum(verts, 0)]


def pt_distances(X, verts):
    sq, code = kernels.classify_pt(X[verts[:, 0]], X[verts[:, 1]], X[verts[:, 2]], X[verts[:, 3]])
    return np.sqrt(sq), code


def ee_distances(X, verts):
    sq, code = kernels.classify_ee(X[verts[:, 0]], X[verts[:, 1]], X[verts[:, 2]], X[verts[:, 3]])
    return np.sqrt(sq), code


class ContactModel:
    """Embedded meshes of all sheets in one global vertex numbering."""

    def __init__(self, meshes: list[EmbeddedMesh], ctrl_offsets: list[int], n_ctrl: int,
                 params: ContactParams, colliders=(), self_contact: bool | None = None):
        self.params = params
        self.colliders = list(colliders)
        self.self_contact = params.self_contact if self_contact is None else self_contact
        self.n_ctrl = n_ctrl
        rows, cols, vals, tris, sheet_of_vertex = [], [], [], [], []
        voff = 0
        self.mesh_offsets = []
        for s, (mesh, coff) in enumerate(zip(meshes, ctrl_offsets)):
            nv = mesh.uv.shape[0]
            rows.append(np.repeat(np.arange(nv) + voff, mesh.weight_index.shape[1]))
            cols.append(mesh.weight_index.ravel() + coff)
            vals.append(mesh.weight_value.ravel())
            tris.append(mesh.triangles + voff)
            sheet_of_vertex.append(np.full(nv, s))
            self.mesh_offsets.append(voff)
            voff += nv
        self.n_vertices = voff
        W = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(voff, n_ctrl))
        W.eliminate_zeros()
        W.sort_indices()
        self.W = W
        self.WT = W.T.tocsr()
        self.triangles = np.concatenate(tris) if tris else np.zeros((0, 3), np.int64)
        self.sheet_of_vertex = np.concatenate(sheet_of_vertex) if sheet_of_vertex else np.zeros(0, np.int64)
        e = np.concatenate([self.triangles[:, [0, 1]], self.triangles[:, [1, 2]], self.triangles[:, [2, 0]]])
        self.edges = np.unique(np.sort(e, axis=1), axis=0)
        self._cache = None  # (X_ref, radius, pt, ee) candidate superset

    # -- geometry -------------------------------------------------------------

    def vertices(self, C) -> np.ndarray:
        return self.W @ np.asarray(C, float).reshape(-1, 3)

    def weights_of(self, v: int) -> tuple[np.ndarray, np.ndarray]:
        a, b = self.W.indptr[v], self.W.indptr[v + 1]
        return self.W.indices[a:b], self.W.data[a:b]

    def _cell(self, X, radius):
        if self.edges.size:
            el = np.linalg.norm(X[self.edges[:, 0]] - X[self.edges[:, 1]], axis=1).mean()
        else:
            el = radius
        return max(radius, el, 1e-9)

    def _candidates(self, X, radius):
        """Non-adjacent PT and EE candidates whose boxes are within ``radius``."""
        tri, edges = self.triangles, self.edges
        if tri.size == 0:
            z = np.zeros((0, 4), np.int64)
            return z, z
        cell = self._cell(X, radius)
        tx = X[tri]
        tlo, thi = tx.min(1) - radius, tx.max(1) + radius
        v, t = box_pairs(X, X, tlo, thi, cell)
        keep = np.all(tri[t] != v[:, None], axis=1)
        v, t = v[keep], t[keep]
        ex = X[edges]
        elo, ehi = ex.min(1), ex.max(1)
        a, b = box_pairs(elo, ehi, elo - radius, ehi + radius, cell, symmetric=True)
        ea, eb = edges[a], edges[b]
        keep = (ea[:, :, None] != eb[:, None, :]).all(axis=(1, 2))
        pt = np.concatenate([v[:, None], tri[t]], 1)
        ee = np.concatenate([ea[keep], eb[keep]], 1)
        if not self.self_contact:
            sv = self.sheet_of_vertex
            pt = pt[sv[pt[:, 0]] != sv[pt[:, 1]]]
            ee = ee[sv[ee[:, 0]] != sv[ee[:, 2]]]
        return pt, ee

    def _cached_candidates(self, X, radius):
        """Candidates from a superset built at ``CACHE_FACTOR * radius``.

        The superset stays valid while ``radius + 2 * max displacement`` is
        below the radius it was built with. Pairs come back sorted either way.
        """
        c = self._cache
        if c is not None and c[0].shape == X.shape:
            delta = float(np.abs(X - c[0]).max(initial=0.0))
            if radius + 2 * delta <= c[1]:
                return c[2], c[3]
        R = CACHE_FACTOR * radius
        pt, ee = self._candidates(X, R)
        self._cache = (X.copy(), R, pt, ee)
        return pt, ee

    def find_active_pairs(self, X) -> PairSet:
        """All pairs with distance below ``dhat`` at vertex positions ``X``."""
        dhat = self.params.dhat
        parts = []
        pt, ee = self._cached_candidates(X, dhat)
        if len(pt):
            d, code = pt_distances(X, pt)
            m = d < dhat
            parts.append(PairSet(np.full(m.sum(), KIND_PT), pt[m], code[m], np.full(m.sum(), -1), d[m]))
        if len(ee):
            d, code = ee_distances(X, ee)
            m = d < dhat
            parts.append(PairSet(np.full(m.sum(), KIND_EE), ee[m], code[m], np.full(m.sum(), -1), d[m]))
        for ci, col in enumerate(self.colliders):
            d = col.distance(X)
            idx = np.flatnonzero(d < dhat)
            kind = KIND_PLANE if col.kind == "plane" else KIND_SPHERE
            verts = np.full((idx.size, 4), -1, np.int64)
            verts[:, 0] = idx
            parts.append(PairSet(np.full(idx.size, kind), verts, np.full(idx.size, -1),
                                 np.full(idx.size, ci), d[idx]))
        pairs = PairSet.concatenate(parts)
        if len(pairs) and pairs.dist.min() <= 0:
            raise InterpenetrationError(f"contact distance {pairs.dist.min():.3e} <= 0")
        return pairs

    # -- barrier --------------------------------------------------------------

    def pair_derivs(self, X, pairs: PairSet, project: bool = True):
        """Barrier value, vertex gradients ``(k, 4, 3)`` and Hessians ``(k, 4, 4, 3, 3)``."""
        k = len(pairs)
        d = np.empty(k)
        gd = np.zeros((k, 4, 3))
        Hd = np.zeros((k, 4, 4, 3, 3))
        mesh = pairs.code >= 0
        if mesh.any():
            d[mesh], gd[mesh], Hd[mesh] = dist_derivs(_pair_slots(X, pairs.verts[mesh]), pairs.code[mesh])
        for ci, col in enumerate(self.colliders):
            m = np.flatnonzero(pairs.collider == ci)
            if m.size:
                dv, gv, Hv = col.distance_derivs(X[pairs.verts[m, 0]])
                d[m], gd[m, 0], Hd[m, 0, 0] = dv, gv, Hv
        p = self.params
        b, g, H = barrier_chain(d, gd, Hd, p.dhat, p.kappa, project=project)
        pad = pairs.verts < 0
        g[pad] = 0.0
        return b, g, H

    def energy(self, C) -> float:
        X = self.vertices(C)
        pairs = self.find_active_pairs(X)
        if not len(pairs):
            return 0.0
        return float(barrier(pairs.dist, self.params.dhat, self.params.kappa).sum())

    def energy_grad(self, C):
        X = self.vertices(C)
        pairs = self.find_active_pairs(X)
        if not len(pairs):
            return 0.0, np.zeros((self.n_ctrl, 3))
        b, g, _ = self.pair_derivs(X, pairs)
        return float(b.sum()), self.pullback_gradient(pairs.verts, g)

    def pullback_gradient(self, verts, g) -> np.ndarray:
        gv = np.zeros((self.n_vertices, 3))
        m = verts >= 0
        for d in range(3):
            gv[:, d] = np.bincount(verts[m], weights=g[..., d][m], minlength=self.n_vertices)
        return self.WT @ gv

    def pullback(self, verts, grad, hess) -> LocalSystem:
        """Map one pair's vertex-space derivatives to its control-point stencil."""
        return pullback(verts, grad, hess, self.W)

    def min_distance(self, C) -> float:
        X = self.vertices(C)
        pt, ee = self._candidates(X, 10 * self.params.dhat)
        ds = [np.inf]
        if len(pt):
            ds.append(pt_distances(X, pt)[0].min())
        if len(ee):
            ds.append(ee_distances(X, ee)[0].min())
        for col in self.colliders:
            ds.append(col.distance(X).min())
        return float(min(ds))

    # -- CCD ------------------------------------------------------------------

    def max_step(self, C, dC) -> float:
        X = self.vertices(C)
        P = self.vertices(dC)
        return ccd_max_step(X, P, self)


def pullback(verts, grad, hess, W: sp.csr_matrix) -> LocalSystem:
    """Pull one pair back: ``g_C = sum c^a g_a``, ``H_C = sum c^a c^b H_ab``."""
    verts = np.asarray(verts)
    live = np.flatnonzero(verts >= 0)
    rows = [W.getrow(int(verts[s])) for s in live]
    stencil = np.unique(np.concatenate([r.indices for r in rows]))
    pos = {c: i for i, c in enumerate(stencil)}
    c = np.zeros((live.size, stencil.size))
    for a, r in enumerate(rows):
        for j, val in zip(r.indices, r.data):
            c[a, pos[j]] += val
    g = np.einsum("ac,ai->ci", c, grad[live])
    H = np.einsum("ac,bd,abij->cdij", c, c, hess[np.ix_(live, live)])
    n = stencil.size
    return LocalSystem(stencil, g, H.transpose(0, 2, 1, 3).reshape(3 * n, 3 * n))


def _lipschitz(P, idx):
    return np.linalg.norm(P[idx], axis=-1).max(axis=1)


def ccd_max_step(X, P, model: ContactModel) -> float:
    """Conservative advancement along ``X + t P`` for every primitive pair and collider.

    Each pair keeps at least ``ccd_floor`` times its starting distance.
    """
    P = np.asarray(P, float)
    speed = np.linalg.norm(P, axis=1)
    vmax = float(speed.max(initial=0.0))
    if vmax == 0.0:
        return 1.0
    prm = model.params
    t_best = 1.0

    for col in model.colliders:
        d0 = col.distance(X)
        if np.any(d0 <= 0):
            raise InterpenetrationError("vertex on or behind collider")
        t_best = min(t_best, float(col.max_step(X, P, prm.ccd_floor * d0).min()))

    pt, ee = model._candidates(X, 2 * vmax * 1.0001)
    for verts, dist_fn, split in ((pt, pt_distances, 1), (ee, ee_distances, 2)):
        if not len(verts):
            continue
        d0, _ = dist_fn(X, verts)
        if np.any(d0 <= 0):
            raise InterpenetrationError("zero initial distance in CCD")
        lip = _lipschitz(P, verts[:, :split]) + _lipschitz(P, verts[:, split:])
        floor = prm.ccd_floor * d0
        live = lip > d0 - floor
        verts, d, floor, lip = verts[live], d0[live], floor[live], lip[live]
        t = np.zeros(verts.shape[0])
        for _ in range(prm.ccd_max_iter):
            if t.size == 0:
                break
            step = (d - floor) / lip
            t_new = t + step
            done = (t_new >= 1) | (step <= 1e-6 * np.maximum(t_new, 1e-3))
            t = np.minimum(t_new, 1.0)
            if done.any():
                t_best = min(t_best, float(t[done].min()))
            keep = ~done
            verts, t, floor, lip = verts[keep], t[keep], floor[keep], lip[keep]
            if t.size == 0:
                break
            # pairs already past the running minimum cannot lower it
            keep = t < t_best
            verts, t, floor, lip = verts[keep], t[keep], floor[keep], lip[keep]
            if t.size == 0:
                break
            d = _dist_at(X, P, verts, t, dist_fn)
        else:
            if t.size:
                t_best = min(t_best, float(t.min()))
    return t_best


def _dist_at(X, P, verts, t, dist_fn):
    sl = X[verts] + t[:, None, None] * P[verts]
    flat = sl.reshape(-1, 3)
    local = np.arange(flat.shape[0]).reshape(-1, 4)
    return dist_fn(flat, local)[0]
