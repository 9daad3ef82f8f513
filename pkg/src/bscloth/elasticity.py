"""Membrane and bending energies, local derivatives and the incremental potential."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import QuadPoint, QuadPoints, deformation_gradient, surface_laplacian

SQRT_CLAMP = 1e-10


@dataclass(frozen=True)
class MaterialParams:
    mu_st1: float
    mu_st2: float
    mu_sh: float
    mu_bd: float
    poisson: float = 0.0

    def __post_init__(self):
        for name in ("mu_st1", "mu_st2", "mu_sh", "mu_bd"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @classmethod
    def from_moduli(cls, thickness: float, E_stretch: float, E_shear: float | None = None,
                    E_bend: float | None = None, poisson: float = 0.0,
                    shear_ratio: float | None = None) -> "MaterialParams":
        """Areal coefficients from Young's moduli.

        stretch/shear: ``E h / 2`` (small-strain match of the quadratic
        densities); bending: plate rigidity ``E h^3 / (12 (1 - nu^2))``.
        """
        h = thickness
        mu_st = E_stretch * h / 2
        if E_shear is None:
            E_shear = (shear_ratio if shear_ratio is not None else 1.0) * E_stretch
        if E_bend is None:
            E_bend = E_stretch
        return cls(mu_st, mu_st, E_shear * h / 2, E_bend * h**3 / (12 * (1 - poisson**2)), poisson)


@dataclass
class LocalSystem:
    stencil: np.ndarray
    grad: np.ndarray  # (k, 3)
    hess: np.ndarray  # (3k, 3k)
    energy: float = 0.0


def membrane_invariants(F):
    F = np.asarray(F, float)
    f1, f2 = F[..., :, 0], F[..., :, 1]
    return (f1 * f1).sum(-1), (f2 * f2).sum(-1), (f1 * f2).sum(-1)


def membrane_density(F, params: MaterialParams):
    I1, I2, I6 = membrane_invariants(F)
    return (params.mu_st1 * (np.sqrt(I1) - 1) ** 2 + params.mu_st2 * (np.sqrt(I2) - 1) ** 2
            + params.mu_sh * I6**2)


def membrane_F_derivs(F, mu1, mu2, mush):
    """Density, gradient and Hessian w.r.t. the stacked columns ``[f1, f2]``.

    Shapes: ``F (nq, 3, 2)``; returns ``(nq,)``, ``(nq, 6)``, ``(nq, 6, 6)``
    and a boolean flag for sites where a column length hit the clamp.
    """
    nq = F.shape[0]
    mu1, mu2, mush = (np.broadcast_to(np.asarray(x, float), (nq,)) for x in (mu1, mu2, mush))
    f1, f2 = F[:, :, 0], F[:, :, 1]
    I1 = np.einsum("qi,qi->q", f1, f1)
    I2 = np.einsum("qi,qi->q", f2, f2)
    I6 = np.einsum("qi,qi->q", f1, f2)
    s1 = np.sqrt(np.maximum(I1, SQRT_CLAMP**2))
    s2 = np.sqrt(np.maximum(I2, SQRT_CLAMP**2))
    flagged = (I1 < SQRT_CLAMP**2) | (I2 < SQRT_CLAMP**2)
    psi = mu1 * (s1 - 1) ** 2 + mu2 * (s2 - 1) ** 2 + mush * I6**2

    a1 = 2 * mu1 * (1 - 1 / s1)
    a2 = 2 * mu2 * (1 - 1 / s2)
    sh = 2 * mush
    g = np.empty((nq, 6))
    g[:, :3] = a1[:, None] * f1 + (sh * I6)[:, None] * f2
    g[:, 3:] = a2[:, None] * f2 + (sh * I6)[:, None] * f1

    eye = np.eye(3)
    col = lambda a: a[:, None, None]  # noqa: E731
    outer = lambda a, b: a[:, :, None] * b[:, None, :]  # noqa: E731
    H = np.empty((nq, 6, 6))
    H[:, :3, :3] = col(a1) * eye + col(2 * mu1 / s1**3) * outer(f1, f1) + col(sh) * outer(f2, f2)
    H[:, 3:, 3:] = col(a2) * eye + col(2 * mu2 / s2**3) * outer(f2, f2) + col(sh) * outer(f1, f1)
    H[:, :3, 3:] = col(sh) * (outer(f2, f1) + col(I6) * eye)
    H[:, 3:, :3] = np.swapaxes(H[:, :3, 3:], 1, 2)
    return psi, g, H, flagged


def project_psd(H: np.ndarray) -> np.ndarray:
    """Clamp negative eigenvalues of a batch of symmetric matrices to zero."""
    H = 0.5 * (H + np.swapaxes(H, -1, -2))
    lam, Q = np.linalg.eigh(H)
    if np.all(lam >= 0):
        return H
    lam = np.maximum(lam, 0.0)
    return np.einsum("...ij,...j,...kj->...ik", Q, lam, Q)


def _site_params(qps: QuadPoints, params):
    if isinstance(params, MaterialParams):
        n = len(qps)
        return (np.full(n, params.mu_st1), np.full(n, params.mu_st2), np.full(n, params.mu_sh),
                np.full(n, params.mu_bd))
    return params  # already per-site arrays


def membrane_batch(qps: QuadPoints, world_cp, params, project: bool = True, hessian: bool = True):
    """Energy per site, stencil gradients ``(nq, k, 3)`` and Hessian blocks ``(nq, k, k, 3, 3)``."""
    mu1, mu2, mush, _ = _site_params(qps, params)
    F = deformation_gradient(qps, world_cp)
    psi, g, H, _ = membrane_F_derivs(F, mu1, mu2, mush)
    w = qps.w
    grad = w[:, None, None] * np.einsum("qkb,qbi->qki", qps.grad, g.reshape(-1, 2, 3))
    if not hessian:
        return w * psi, grad, None
    if project:
        H = project_psd(H)
    # hess[q,k,l,i,j] = sum_bc G[q,k,b] H[q,b,i,c,j] G[q,l,c], as two batched matmuls
    G = qps.grad
    nq, k = G.shape[:2]
    T = np.matmul(G, H.reshape(nq, 2, 18)).reshape(nq, k, 3, 2, 3)
    T = T.transpose(0, 1, 2, 4, 3).reshape(nq, 9 * k, 2)
    hess = np.matmul(T, G.transpose(0, 2, 1)).reshape(nq, k, 3, 3, k).transpose(0, 1, 4, 2, 3)
    hess = w[:, None, None, None, None] * hess
    return w * psi, grad, hess


def bending_batch(qps: QuadPoints, world_cp, params):
    """Energy per site and stencil gradients of the quadratic bending term."""
    *_, mubd = _site_params(qps, params)
    lap = surface_laplacian(qps, world_cp)
    c = qps.w * mubd
    energy = 0.5 * c * np.einsum("qi,qi->q", lap, lap)
    grad = c[:, None, None] * qps.lap[:, :, None] * lap[:, None, :]
    return energy, grad


def bending_hessian_scalars(qps: QuadPoints, params) -> np.ndarray:
    """Constant Hessian as scalar couplings ``(nq, 9, 9)``; the 3x3 block is that times I."""
    *_, mubd = _site_params(qps, params)
    return (qps.w * mubd)[:, None, None] * qps.lap[:, :, None] * qps.lap[:, None, :]


def _single(qp: QuadPoint) -> QuadPoints:
    k = qp.stencil.size
    z = np.zeros((1, k))
    return QuadPoints(
        kind="single", u=np.array([qp.u]), v=np.array([qp.v]), w=np.array([qp.w]),
        index=qp.stencil[None], N=qp.basis[None, :, 0], Nu=z, Nv=z, Nuu=z, Nvv=z, Nuv=z,
        inv={}, grad=qp.grad_coeffs[None], lap=qp.lap_coeffs[None], active=np.ones((1, k), bool),
    )


def membrane_local(qp: QuadPoint, world_cp, params: MaterialParams, project: bool = True) -> LocalSystem:
    qps = _single(qp)
    e, g, h = membrane_batch(qps, world_cp, params, project=project)
    k = qp.stencil.size
    return LocalSystem(qp.stencil, g[0], h[0].transpose(0, 2, 1, 3).reshape(3 * k, 3 * k), float(e[0]))


def bending_local(qp: QuadPoint, world_cp, params: MaterialParams) -> LocalSystem:
    qps = _single(qp)
    e, g = bending_batch(qps, world_cp, params)
    s = bending_hessian_scalars(qps, params)[0]
    return LocalSystem(qp.stencil, g[0], np.kron(s, np.eye(3)), float(e[0]))


def local_hessian_dense(hess_blocks: np.ndarray) -> np.ndarray:
    """``(k, k, 3, 3)`` blocks to a dense ``(3k, 3k)`` matrix."""
    k = hess_blocks.shape[0]
    return hess_blocks.transpose(0, 2, 1, 3).reshape(3 * k, 3 * k)


class NonFiniteStateError(FloatingPointError):
    pass


class ElasticModel:
    """Membrane and bending quadrature sites of all sheets with per-site material."""

    def __init__(self, membrane: QuadPoints, bending: QuadPoints, mem_params, bend_params, n_ctrl: int):
        self.membrane = membrane
        self.bending = bending
        self.mem_params = mem_params
        self.bend_params = bend_params
        self.n_ctrl = n_ctrl
        self.bend_scalars = bending_hessian_scalars(bending, bend_params)

    def energy(self, C) -> float:
        em, _, _ = membrane_batch(self.membrane, C, self.mem_params, hessian=False)
        eb, _ = bending_batch(self.bending, C, self.bend_params)
        return float(em.sum() + eb.sum())

    def energy_parts(self, C) -> tuple[float, float]:
        em, _, _ = membrane_batch(self.membrane, C, self.mem_params, hessian=False)
        eb, _ = bending_batch(self.bending, C, self.bend_params)
        return float(em.sum()), float(eb.sum())

    def gradient(self, C) -> np.ndarray:
        _, gm, _ = membrane_batch(self.membrane, C, self.mem_params, hessian=False)
        _, gb = bending_batch(self.bending, C, self.bend_params)
        return scatter_grad(self.membrane.index, gm, self.n_ctrl) + scatter_grad(self.bending.index, gb, self.n_ctrl)

    def membrane_hessian_blocks(self, C, project: bool = True) -> np.ndarray:
        return membrane_batch(self.membrane, C, self.mem_params, project=project)[2]


def scatter_grad(index: np.ndarray, grad: np.ndarray, n: int) -> np.ndarray:
    out = np.empty((n, 3))
    flat = index.ravel()
    g = grad.reshape(-1, 3)
    for d in range(3):
        out[:, d] = np.bincount(flat, weights=g[:, d], minlength=n)
    return out


@dataclass
class IPState:
    """Per-step data of the incremental potential."""

    x_hat: np.ndarray  # (n, 3) forward-extrapolated positions
    dt: float
    masses: np.ndarray  # lumped, (n,)
    gravity: np.ndarray  # (3,)
    free: np.ndarray  # (n,) bool, False for pinned control points


def incremental_potential(state: IPState, C, elastic: ElasticModel | None = None, barrier=None):
    """Value and gradient of the implicit-Euler incremental potential.

    ``barrier`` is an optional callable returning ``(value, gradient)`` of the
    contact term on control points. Gradient rows of pinned control points
    are zeroed.
    """
    C = np.asarray(C, float).reshape(-1, 3)
    if not np.all(np.isfinite(C)):
        raise NonFiniteStateError("non-finite control points")
    d = C - state.x_hat
    m = state.masses
    val = 0.5 / state.dt**2 * float(np.einsum("n,ni,ni->", m, d, d))
    grad = (m / state.dt**2)[:, None] * d
    val -= float(m @ (C @ state.gravity))
    grad -= m[:, None] * state.gravity
    if elastic is not None:
        val += elastic.energy(C)
        grad += elastic.gradient(C)
    if barrier is not None:
        bv, bg = barrier(C)
        val += bv
        grad += bg
    if not np.isfinite(val):
        raise NonFiniteStateError("incremental potential is not finite")
    grad[~state.free] = 0.0
    return val, grad
