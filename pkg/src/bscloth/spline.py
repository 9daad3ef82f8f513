"""Quadratic B-spline bases, tensor-product sheets and embedded triangle meshes.

Knot vectors are always open and uniform with integer interior knots, so a
sheet with ``n`` control points along a direction spans the parametric
interval ``[0, n - 2]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

DEGREE = 2


class DomainError(ValueError):
    """Parameter or basis index outside the spline's domain."""


@dataclass(frozen=True)
class KnotVector:
    values: np.ndarray
    degree: int = DEGREE

    def __post_init__(self):
        t = np.asarray(self.values, dtype=float)
        p = self.degree
        if t.ndim != 1 or t.size < 2 * (p + 1):
            raise ValueError("knot vector too short")
        if np.any(np.diff(t) < 0):
            raise ValueError("knot vector must be non-decreasing")
        if np.any(t[: p + 1] != t[0]) or np.any(t[-(p + 1):] != t[-1]):
            raise ValueError("knot vector must be open")
        object.__setattr__(self, "values", t)

    @classmethod
    def open_uniform(cls, n_ctrl: int) -> "KnotVector":
        if n_ctrl < DEGREE + 1:
            raise ValueError(f"need at least {DEGREE + 1} control points, got {n_ctrl}")
        n_spans = n_ctrl - DEGREE
        inner = np.arange(1, n_spans, dtype=float)
        t = np.concatenate([np.zeros(DEGREE + 1), inner, np.full(DEGREE + 1, float(n_spans))])
        return cls(t)

    @property
    def n_ctrl(self) -> int:
        return self.values.size - self.degree - 1

    @property
    def start(self) -> float:
        return float(self.values[0])

    @property
    def end(self) -> float:
        return float(self.values[-1])

    @property
    def n_spans(self) -> int:
        return int(np.count_nonzero(np.diff(self.values) > 0))

    def span_index(self, x) -> np.ndarray:
        """Index ``s`` of the knot span ``[t_s, t_{s+1})`` containing ``x``.

        The right end of the domain belongs to the last non-empty span.
        Active basis functions on span ``s`` are ``s-2, s-1, s``.
        """
        x = np.asarray(x, dtype=float)
        s = np.searchsorted(self.values, x, side="right") - 1
        return np.clip(s, self.degree, self.n_ctrl - 1)


def _check_domain(knots: KnotVector, x: np.ndarray) -> None:
    if np.any(~np.isfinite(x)) or np.any(x < knots.start) or np.any(x > knots.end):
        raise DomainError(f"parameter outside [{knots.start}, {knots.end}]")


def _safe_inv(d: np.ndarray) -> np.ndarray:
    # repeated knots: the corresponding recursion term is defined as zero
    out = np.zeros_like(d)
    nz = d != 0
    out[nz] = 1.0 / d[nz]
    return out


def basis_table(knots: KnotVector, x) -> np.ndarray:
    """Dense Cox-de Boor table of all basis functions and derivatives.

    Returns an array of shape ``(3, len(x), n_ctrl)`` holding values, first
    and second derivatives. Second derivatives are those of the polynomial
    piece on the span selected by :meth:`KnotVector.span_index`.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    _check_domain(knots, x)
    t = knots.values
    n0 = t.size - 1
    s = knots.span_index(x)
    N0 = np.zeros((x.size, n0))
    N0[np.arange(x.size), s] = 1.0

    # degree 1
    inv_a = _safe_inv(t[1:n0] - t[: n0 - 1])
    inv_b = _safe_inv(t[2 : n0 + 1] - t[1:n0])
    xc = x[:, None]
    N1 = (xc - t[: n0 - 1]) * inv_a * N0[:, :-1] + (t[2 : n0 + 1] - xc) * inv_b * N0[:, 1:]
    dN1 = inv_a * N0[:, :-1] - inv_b * N0[:, 1:]

    # degree 2
    n2 = n0 - 2
    inv_c = _safe_inv(t[2 : n2 + 2] - t[:n2])
    inv_d = _safe_inv(t[3 : n2 + 3] - t[1 : n2 + 1])
    N2 = (xc - t[:n2]) * inv_c * N1[:, :-1] + (t[3 : n2 + 3] - xc) * inv_d * N1[:, 1:]
    dN2 = 2.0 * (inv_c * N1[:, :-1] - inv_d * N1[:, 1:])
    ddN2 = 2.0 * (inv_c * dN1[:, :-1] - inv_d * dN1[:, 1:])
    return np.stack([N2, dN2, ddN2])


def eval_basis_1d(knots: KnotVector, i: int, xi: float) -> float:
    """Value of the ``i``-th quadratic basis function at ``xi``."""
    return eval_basis_derivs_1d(knots, i, xi)[0]


def eval_basis_derivs_1d(knots: KnotVector, i: int, xi: float) -> tuple[float, float, float]:
    if not 0 <= i < knots.n_ctrl:
        raise DomainError(f"basis index {i} outside [0, {knots.n_ctrl})")
    tab = basis_table(knots, [xi])
    return float(tab[0, 0, i]), float(tab[1, 0, i]), float(tab[2, 0, i])


def eval_basis_order(knots: KnotVector, i: int, p: int, xi: float) -> float:
    """Plain recursive Cox-de Boor of arbitrary order ``p`` (reference path)."""
    t = knots.values
    if p == 0:
        last = knots.span_index(knots.end)
        if xi == knots.end:
            return 1.0 if i == last else 0.0
        return 1.0 if t[i] <= xi < t[i + 1] else 0.0
    left = right = 0.0
    if t[i + p] != t[i]:
        left = (xi - t[i]) / (t[i + p] - t[i]) * eval_basis_order(knots, i, p - 1, xi)
    if t[i + p + 1] != t[i + 1]:
        right = (t[i + p + 1] - xi) / (t[i + p + 1] - t[i + 1]) * eval_basis_order(knots, i + 1, p - 1, xi)
    return left + right


def local_basis(knots: KnotVector, x) -> tuple[np.ndarray, np.ndarray]:
    """Active span and the three local basis functions with derivatives.

    Returns ``(first, table)`` where ``first`` is the index of the first
    active function (``span - 2``) and ``table`` has shape ``(3, len(x), 3)``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    tab = basis_table(knots, x)
    first = knots.span_index(x) - knots.degree
    cols = first[:, None] + np.arange(3)
    rows = np.arange(x.size)[:, None]
    return first, tab[:, rows, cols]


@dataclass
class TensorBasis:
    """Basis data of the 3x3 span stencil at a batch of parametric sites."""

    index: np.ndarray  # (k, 9) flat control indices, i * m + j
    N: np.ndarray
    Nu: np.ndarray
    Nv: np.ndarray
    Nuu: np.ndarray
    Nvv: np.ndarray
    Nuv: np.ndarray


@dataclass
class SplineSheet:
    knots_u: KnotVector
    knots_v: KnotVector
    material_cp: np.ndarray  # (n, m, 2)
    world_cp: np.ndarray  # (n, m, 3)
    world_vel: np.ndarray = field(default=None)  # (n, m, 3)

    def __post_init__(self):
        n, m = self.knots_u.n_ctrl, self.knots_v.n_ctrl
        self.material_cp = np.asarray(self.material_cp, dtype=float)
        self.world_cp = np.asarray(self.world_cp, dtype=float)
        if self.material_cp.shape != (n, m, 2):
            raise ValueError(f"material grid shape {self.material_cp.shape} != {(n, m, 2)}")
        if self.world_cp.shape != (n, m, 3):
            raise ValueError(f"world grid shape {self.world_cp.shape} != {(n, m, 3)}")
        if self.world_vel is None:
            self.world_vel = np.zeros_like(self.world_cp)
        self.world_vel = np.asarray(self.world_vel, dtype=float)

    @classmethod
    def rectangle(cls, n: int, m: int, size=(1.0, 1.0), origin=(0.0, 0.0, 0.0),
                  axis_u=(1.0, 0.0, 0.0), axis_v=(0.0, 1.0, 0.0)) -> "SplineSheet":
        """Flat rectangular sheet with ``n x m`` control points.

        Material control points sit at the Greville abscissae, so the material
        map is exactly affine and the physical size is ``size``.
        """
        ku, kv = KnotVector.open_uniform(n), KnotVector.open_uniform(m)
        gu = greville(ku) * (size[0] / ku.n_spans)
        gv = greville(kv) * (size[1] / kv.n_spans)
        X = np.stack(np.meshgrid(gu, gv, indexing="ij"), axis=-1)
        au, av = np.asarray(axis_u, float), np.asarray(axis_v, float)
        W = np.asarray(origin, float) + X[..., :1] * au + X[..., 1:] * av
        return cls(ku, kv, X, W)

    @property
    def shape(self) -> tuple[int, int]:
        return self.knots_u.n_ctrl, self.knots_v.n_ctrl

    @property
    def n_ctrl(self) -> int:
        n, m = self.shape
        return n * m

    @property
    def n_spans(self) -> tuple[int, int]:
        return self.knots_u.n_spans, self.knots_v.n_spans

    def tensor_basis(self, u, v) -> TensorBasis:
        u = np.atleast_1d(np.asarray(u, float))
        v = np.atleast_1d(np.asarray(v, float))
        fu, bu = local_basis(self.knots_u, u)
        fv, bv = local_basis(self.knots_v, v)
        m = self.shape[1]
        iu = fu[:, None] + np.arange(3)
        iv = fv[:, None] + np.arange(3)
        index = (iu[:, :, None] * m + iv[:, None, :]).reshape(-1, 9)

        def outer(a, b):
            return (a[:, :, None] * b[:, None, :]).reshape(-1, 9)

        return TensorBasis(
            index=index,
            N=outer(bu[0], bv[0]),
            Nu=outer(bu[1], bv[0]),
            Nv=outer(bu[0], bv[1]),
            Nuu=outer(bu[2], bv[0]),
            Nvv=outer(bu[0], bv[2]),
            Nuv=outer(bu[1], bv[1]),
        )


def greville(knots: KnotVector) -> np.ndarray:
    t = knots.values
    return np.array([t[i + 1 : i + 1 + knots.degree].mean() for i in range(knots.n_ctrl)])


def eval_surface(sheet: SplineSheet, field: str, u, v) -> np.ndarray:
    """Evaluate the material (2D) or world (3D) surface at ``(u, v)``."""
    if field == "material":
        cp = sheet.material_cp
    elif field == "world":
        cp = sheet.world_cp
    else:
        raise ValueError(f"unknown field {field!r}")
    scalar = np.ndim(u) == 0 and np.ndim(v) == 0
    tb = sheet.tensor_basis(u, v)
    flat = cp.reshape(-1, cp.shape[-1])
    out = np.einsum("kc,kcd->kd", tb.N, flat[tb.index])
    return out[0] if scalar else out


@dataclass
class EmbeddedMesh:
    """Triangle mesh whose vertices are fixed spline interpolants."""

    uv: np.ndarray  # (nv, 2)
    triangles: np.ndarray  # (nt, 3)
    weight_index: np.ndarray  # (nv, 9) control indices
    weight_value: np.ndarray  # (nv, 9)
    n_ctrl: int

    @property
    def n_vertices(self) -> int:
        return self.uv.shape[0]

    def interpolation_matrix(self) -> sp.csr_matrix:
        nv = self.n_vertices
        rows = np.repeat(np.arange(nv), 9)
        W = sp.csr_matrix(
            (self.weight_value.ravel(), (rows, self.weight_index.ravel())), shape=(nv, self.n_ctrl)
        )
        W.eliminate_zeros()
        return W

    def positions(self, control_points: np.ndarray) -> np.ndarray:
        C = np.asarray(control_points).reshape(self.n_ctrl, 3)
        return np.einsum("vk,vkd->vd", self.weight_value, C[self.weight_index])

    def edges(self) -> np.ndarray:
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)


def sample_embedded_mesh(sheet: SplineSheet, resolution) -> EmbeddedMesh:
    """Regular ``(ru+1) x (rv+1)`` lattice, triangulated with alternating diagonals."""
    ru, rv = int(resolution[0]), int(resolution[1])
    if ru < 1 or rv < 1:
        raise ValueError("embedded mesh resolution must be positive")
    us = np.linspace(sheet.knots_u.start, sheet.knots_u.end, ru + 1)
    vs = np.linspace(sheet.knots_v.start, sheet.knots_v.end, rv + 1)
    U, V = np.meshgrid(us, vs, indexing="ij")
    uv = np.stack([U.ravel(), V.ravel()], axis=1)

    a, b = np.meshgrid(np.arange(ru), np.arange(rv), indexing="ij")
    a, b = a.ravel(), b.ravel()
    v00 = a * (rv + 1) + b
    v10 = v00 + (rv + 1)
    v01 = v00 + 1
    v11 = v10 + 1
    even = (a + b) % 2 == 0
    t1 = np.where(even[:, None], np.stack([v00, v10, v11], 1), np.stack([v00, v10, v01], 1))
    t2 = np.where(even[:, None], np.stack([v00, v11, v01], 1), np.stack([v10, v11, v01], 1))
    tris = np.stack([t1, t2], axis=1).reshape(-1, 3)

    tb = sheet.tensor_basis(uv[:, 0], uv[:, 1])
    val = np.where(np.abs(tb.N) < 1e-15, 0.0, tb.N)
    return EmbeddedMesh(uv=uv, triangles=tris, weight_index=tb.index, weight_value=val,
                        n_ctrl=sheet.n_ctrl)


def default_mesh_resolution(sheet: SplineSheet) -> tuple[int, int]:
    n, m = sheet.shape
    return 2 * n, 2 * m
