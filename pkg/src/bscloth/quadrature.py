"""Quadrature layouts over a sheet's parametric domain.

Membrane energy uses two-point Gauss patterns on the dual grid (cells
centred on interior knot-line intersections) with the single-point
coordinate on a knot line; boundary knot spans get richer tensor rules.
Bending uses one point per dual cell and per boundary span.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .spline import SplineSheet

log = logging.getLogger(__name__)

_GL = {
    1: (np.array([0.5]), np.array([1.0])),
    2: (np.array([0.5 - np.sqrt(3) / 6, 0.5 + np.sqrt(3) / 6]), np.array([0.5, 0.5])),
    3: (np.array([0.5 - np.sqrt(15) / 10, 0.5, 0.5 + np.sqrt(15) / 10]),
        np.array([5 / 18, 8 / 18, 5 / 18])),
}


def gauss_legendre_1d(k: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on ``[0, 1]``."""
    if k not in _GL:
        raise ValueError(f"unsupported Gauss-Legendre order {k}")
    x, w = _GL[k]
    return x.copy(), w.copy()


@dataclass(frozen=True)
class QuadRule:
    u: np.ndarray
    v: np.ndarray
    weight: np.ndarray  # parametric measure
    kind: str
    interior: np.ndarray  # True for dual-grid points

    def __len__(self) -> int:
        return self.u.size

    @property
    def points(self) -> np.ndarray:
        return np.stack([self.u, self.v, self.weight], axis=1)


class _Builder:
    def __init__(self):
        self.u, self.v, self.w, self.inner = [], [], [], []

    def tensor(self, u0, u1, v0, v1, ku, kv, interior=False):
        xu, wu = gauss_legendre_1d(ku)
        xv, wv = gauss_legendre_1d(kv)
        U, V = np.meshgrid(u0 + (u1 - u0) * xu, v0 + (v1 - v0) * xv, indexing="ij")
        W = np.outer(wu, wv) * (u1 - u0) * (v1 - v0)
        self.u.append(U.ravel())
        self.v.append(V.ravel())
        self.w.append(W.ravel())
        self.inner.append(np.full(U.size, interior))

    def line(self, fixed, along0, along1, area, along_u, interior=True):
        """Two Gauss points along one direction, the other coordinate fixed."""
        x, w = gauss_legendre_1d(2)
        a = along0 + (along1 - along0) * x
        f = np.full(2, float(fixed))
        self.u.append(a if along_u else f)
        self.v.append(f if along_u else a)
        self.w.append(w * area)
        self.inner.append(np.full(2, interior))

    def point(self, u, v, area, interior):
        self.u.append(np.array([float(u)]))
        self.v.append(np.array([float(v)]))
        self.w.append(np.array([float(area)]))
        self.inner.append(np.array([interior]))

    def build(self, kind) -> QuadRule:
        cat = lambda xs, dt=float: np.concatenate(xs).astype(dt) if xs else np.zeros(0, dt)  # noqa: E731
        return QuadRule(cat(self.u), cat(self.v), cat(self.w), kind, cat(self.inner, bool))


def _spans(sheet: SplineSheet) -> tuple[int, int]:
    return sheet.knots_u.n_spans, sheet.knots_v.n_spans


def _too_small(sheet: SplineSheet) -> bool:
    su, sv = _spans(sheet)
    return su < 3 or sv < 3


def _dual_cells(su: int, sv: int):
    """Yield (i, j, u0, u1, v0, v1) for dual cells clipped to the interior region."""
    for i in range(1, su):
        u0, u1 = max(1.0, i - 0.5), min(su - 1.0, i + 0.5)
        for j in range(1, sv):
            v0, v1 = max(1.0, j - 0.5), min(sv - 1.0, j + 0.5)
            yield i, j, u0, u1, v0, v1


def _boundary_spans(su: int, sv: int):
    for a in range(su):
        for b in range(sv):
            edge_u = a in (0, su - 1)
            edge_v = b in (0, sv - 1)
            if edge_u or edge_v:
                yield a, b, edge_u, edge_v


def _boundary_membrane(bld: _Builder, su: int, sv: int) -> None:
    for a, b, edge_u, edge_v in _boundary_spans(su, sv):
        if edge_u and edge_v:
            ku, kv = 3, 3
        elif edge_u:
            ku, kv = 3, 2  # three points across the boundary, two along it
        else:
            ku, kv = 2, 3
        bld.tensor(a, a + 1, b, b + 1, ku, kv)


def _per_span(sheet: SplineSheet, k: int, kind: str) -> QuadRule:
    su, sv = _spans(sheet)
    bld = _Builder()
    for a in range(su):
        for b in range(sv):
            bld.tensor(a, a + 1, b, b + 1, k, k)
    return bld.build(kind)


def _fallback(sheet: SplineSheet, kind: str) -> QuadRule:
    warnings.warn(
        f"sheet with spans {_spans(sheet)} has no interior dual grid; using 2x2 Gauss per span",
        stacklevel=3,
    )
    return _per_span(sheet, 2, kind)


def build_membrane_rule(sheet: SplineSheet, interior: str = "reduced") -> QuadRule:
    """Reduced membrane rule.

    ``interior="one_point"`` swaps the dual-grid pairs for a single point per
    dual cell. It is unstable (hourglass modes) and only meant for
    diagnostics.
    """
    if _too_small(sheet):
        return _fallback(sheet, "membrane")
    su, sv = _spans(sheet)
    bld = _Builder()
    for i, j, u0, u1, v0, v1 in _dual_cells(su, sv):
        area = (u1 - u0) * (v1 - v0)
        if interior == "one_point":
            bld.point(i, j, area, True)
            continue
        if interior != "reduced":
            raise ValueError(f"unknown interior rule {interior!r}")
        on_u_edge = i in (1, su - 1)
        on_v_edge = j in (1, sv - 1)
        if on_u_edge:
            along_u = False  # pair runs along the boundary-parallel knot line
        elif on_v_edge:
            along_u = True
        else:
            along_u = (i + j) % 2 == 1
        if along_u:
            bld.line(j, u0, u1, area, along_u=True)
        else:
            bld.line(i, v0, v1, area, along_u=False)
    _boundary_membrane(bld, su, sv)
    return bld.build("membrane")


def build_full_membrane_rule(sheet: SplineSheet) -> QuadRule:
    """Standard 2x2 Gauss rule on every knot span."""
    return _per_span(sheet, 2, "membrane")


def build_bending_rule(sheet: SplineSheet) -> QuadRule:
    if _too_small(sheet):
        return _fallback(sheet, "bending")
    su, sv = _spans(sheet)
    bld = _Builder()
    for i, j, u0, u1, v0, v1 in _dual_cells(su, sv):
        bld.point(i, j, (u1 - u0) * (v1 - v0), True)
    for a, b, _, _ in _boundary_spans(su, sv):
        bld.point(a + 0.5, b + 0.5, 1.0, False)
    return bld.build("bending")


def build_mass_rule(sheet: SplineSheet) -> QuadRule:
    return _per_span(sheet, 3, "mass")


def dual_cell_orientation(sheet: SplineSheet) -> dict[tuple[int, int], str]:
    """Map each full interior dual cell to ``'u'`` or ``'v'`` (direction of its point pair)."""
    su, sv = _spans(sheet)
    out = {}
    for i in range(2, su - 1):
        for j in range(2, sv - 1):
            out[(i, j)] = "u" if (i + j) % 2 == 1 else "v"
    return out
