"""Rest-state precomputation at quadrature sites and mass matrices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .quadrature import QuadRule
from .spline import SplineSheet

_INV_KEYS = ("u1", "u2", "v1", "v2", "u11", "u22", "u12", "v11", "v22", "v12")


class DegenerateGeometryError(ValueError):
    pass


@dataclass
class QuadPoint:
    """Single-site view of :class:`QuadPoints`."""

    u: float
    v: float
    w: float
    stencil: np.ndarray
    basis: np.ndarray  # (|stencil|, 6): N, Nu, Nv, Nuu, Nvv, Nuv
    inv_map: dict
    grad_coeffs: np.ndarray  # (|stencil|, 2)
    lap_coeffs: np.ndarray  # (|stencil|,)


@dataclass
class QuadPoints:
    """Batched quadrature sites; every site carries the 9-slot span stencil.

    ``active`` marks stencil slots whose coefficients are nonzero for the
    rule's energy; inactive slots are kept for uniform array shapes and are
    dropped when building sparsity patterns.
    """

    kind: str
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray
    index: np.ndarray  # (nq, 9) control indices, global after offset()
    N: np.ndarray
    Nu: np.ndarray
    Nv: np.ndarray
    Nuu: np.ndarray
    Nvv: np.ndarray
    Nuv: np.ndarray
    inv: dict
    grad: np.ndarray  # (nq, 9, 2)
    lap: np.ndarray  # (nq, 9)
    active: np.ndarray  # (nq, 9) bool

    def __len__(self) -> int:
        return self.u.size

    def __getitem__(self, q: int) -> QuadPoint:
        a = self.active[q]
        basis = np.stack([self.N[q], self.Nu[q], self.Nv[q], self.Nuu[q], self.Nvv[q], self.Nuv[q]], 1)
        return QuadPoint(
            u=float(self.u[q]), v=float(self.v[q]), w=float(self.w[q]),
            stencil=self.index[q][a], basis=basis[a],
            inv_map={k: float(val[q]) for k, val in self.inv.items()},
            grad_coeffs=self.grad[q][a], lap_coeffs=self.lap[q][a],
        )

    def offset(self, n: int) -> "QuadPoints":
        out = QuadPoints(**{**self.__dict__})
        out.index = self.index + n
        return out

    def take(self, sites) -> "QuadPoints":
        """Subset of sites in the given order."""
        sites = np.asarray(sites, np.int64)
        kw = {"kind": self.kind, "inv": {k: v[sites] for k, v in self.inv.items()}}
        for name in ("u", "v", "w", "index", "N", "Nu", "Nv", "Nuu", "Nvv", "Nuv", "grad", "lap", "active"):
            kw[name] = getattr(self, name)[sites]
        return QuadPoints(**kw)

    @staticmethod
    def concatenate(parts: list["QuadPoints"]) -> "QuadPoints":
        if len(parts) == 1:
            return parts[0]
        kw = {"kind": parts[0].kind}
        for name in ("u", "v", "w", "index", "N", "Nu", "Nv", "Nuu", "Nvv", "Nuv", "grad", "lap", "active"):
            kw[name] = np.concatenate([getattr(p, name) for p in parts])
        kw["inv"] = {k: np.concatenate([p.inv[k] for p in parts]) for k in _INV_KEYS}
        return QuadPoints(**kw)


def material_jacobian(sheet: SplineSheet, tb) -> tuple[np.ndarray, np.ndarray]:
    """Material map Jacobian ``J[b, c] = dX_b/dzeta_c`` and its derivatives."""
    X = sheet.material_cp.reshape(-1, 2)[tb.index]  # (nq, 9, 2)
    J = np.stack([np.einsum("qk,qkb->qb", tb.Nu, X), np.einsum("qk,qkb->qb", tb.Nv, X)], axis=2)
    Xuu = np.einsum("qk,qkb->qb", tb.Nuu, X)
    Xvv = np.einsum("qk,qkb->qb", tb.Nvv, X)
    Xuv = np.einsum("qk,qkb->qb", tb.Nuv, X)
    HX = np.empty(J.shape + (2,))
    HX[:, :, 0, 0] = Xuu
    HX[:, :, 1, 1] = Xvv
    HX[:, :, 0, 1] = Xuv
    HX[:, :, 1, 0] = Xuv
    return J, HX


def precompute_quadpoints(sheet: SplineSheet, rule: QuadRule) -> QuadPoints:
    tb = sheet.tensor_basis(rule.u, rule.v)
    J, HX = material_jacobian(sheet, tb)
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    extent = np.ptp(sheet.material_cp.reshape(-1, 2), axis=0).max()
    scale = extent / max(sheet.n_spans)
    bad = np.flatnonzero(det < 1e-12 * scale**2)
    if bad.size:
        q = bad[0]
        raise DegenerateGeometryError(
            f"material map degenerate at (u, v)=({rule.u[q]:g}, {rule.v[q]:g}), det J={det[q]:.3e}"
        )
    K = np.linalg.inv(J)  # K[a, beta] = d zeta_a / d X_beta
    S = -np.einsum("qab,qbcd,qce,qdf->qaef", K, HX, K, K)

    grad = tb.Nu[:, :, None] * K[:, None, 0, :] + tb.Nv[:, :, None] * K[:, None, 1, :]
    lap = np.zeros_like(tb.N)
    for beta in range(2):
        k0, k1 = K[:, 0, beta][:, None], K[:, 1, beta][:, None]
        lap += tb.Nuu * k0**2 + 2 * tb.Nuv * k0 * k1 + tb.Nvv * k1**2
        lap += tb.Nu * S[:, 0, beta, beta][:, None] + tb.Nv * S[:, 1, beta, beta][:, None]

    inv = {
        "u1": K[:, 0, 0], "u2": K[:, 0, 1], "v1": K[:, 1, 0], "v2": K[:, 1, 1],
        "u11": S[:, 0, 0, 0], "u22": S[:, 0, 1, 1], "u12": S[:, 0, 0, 1],
        "v11": S[:, 1, 0, 0], "v22": S[:, 1, 1, 1], "v12": S[:, 1, 0, 1],
    }
    tol = 1e-12
    if rule.kind == "bending":
        coef_scale = np.abs(lap).max(axis=1, keepdims=True)
        active = (np.abs(lap) > tol * coef_scale) | (np.abs(tb.N) > tol)
    else:
        g = np.abs(grad).max(axis=2)
        active = (g > tol * g.max(axis=1, keepdims=True)) | (np.abs(tb.N) > tol)
    return QuadPoints(
        kind=rule.kind, u=rule.u, v=rule.v, w=rule.weight * det, index=tb.index,
        N=tb.N, Nu=tb.Nu, Nv=tb.Nv, Nuu=tb.Nuu, Nvv=tb.Nvv, Nuv=tb.Nuv,
        inv=inv, grad=grad, lap=lap, active=active,
    )


def deformation_gradient(qp, world_cp) -> np.ndarray:
    """3x2 deformation gradient(s) for a :class:`QuadPoint` or batched :class:`QuadPoints`."""
    C = np.asarray(world_cp).reshape(-1, 3)
    if isinstance(qp, QuadPoint):
        return np.einsum("kb,ki->ib", qp.grad_coeffs, C[qp.stencil])
    return np.einsum("qkb,qki->qib", qp.grad, C[qp.index])


def surface_laplacian(qp, world_cp) -> np.ndarray:
    C = np.asarray(world_cp).reshape(-1, 3)
    if isinstance(qp, QuadPoint):
        return qp.lap_coeffs @ C[qp.stencil]
    return np.einsum("qk,qki->qi", qp.lap, C[qp.index])


@dataclass
class MassMatrix:
    lumped: np.ndarray  # kg per control point
    consistent_total: float
    consistent: sp.csr_matrix


class DiscretizationError(RuntimeError):
    pass


def build_mass(sheet: SplineSheet, mass_rule: QuadRule, density: float, thickness: float) -> MassMatrix:
    """Consistent mass matrix by quadrature and its row-sum lumping."""
    qps = precompute_quadpoints(sheet, mass_rule)
    areal = density * thickness
    nq = len(qps)
    vals = (areal * qps.w)[:, None, None] * qps.N[:, :, None] * qps.N[:, None, :]
    rows = np.broadcast_to(qps.index[:, :, None], (nq, 9, 9)).ravel()
    cols = np.broadcast_to(qps.index[:, None, :], (nq, 9, 9)).ravel()
    M = sp.csr_matrix((vals.ravel(), (rows, cols)), shape=(sheet.n_ctrl, sheet.n_ctrl))
    lumped = np.asarray(M.sum(axis=1)).ravel()
    if np.any(lumped <= 0):
        raise DiscretizationError("non-positive lumped mass entry")
    return MassMatrix(lumped=lumped, consistent_total=float(M.sum()), consistent=M)
