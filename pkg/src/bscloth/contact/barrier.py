"""Clamped log barrier on unsigned distance."""

from __future__ import annotations

import numpy as np


class BarrierDomainError(ValueError):
    pass


def barrier(d, dhat: float, kappa: float):
    """``b(d) = -kappa (d - dhat)^2 ln(d / dhat)`` for ``d < dhat``, zero beyond."""
    d = np.asarray(d, float)
    inside = d < dhat
    dd = np.where(inside, d, dhat)
    return np.where(inside, -kappa * (dd - dhat) ** 2 * np.log(dd / dhat), 0.0)


def barrier_d1(d, dhat: float, kappa: float):
    d = np.asarray(d, float)
    inside = d < dhat
    dd = np.where(inside, d, dhat)
    e = dd - dhat
    return np.where(inside, -kappa * (2 * e * np.log(dd / dhat) + e**2 / dd), 0.0)


def barrier_d2(d, dhat: float, kappa: float):
    d = np.asarray(d, float)
    inside = d < dhat
    dd = np.where(inside, d, dhat)
    e = dd - dhat
    return np.where(inside, -kappa * (2 * np.log(dd / dhat) + 4 * e / dd - e**2 / dd**2), 0.0)


def barrier_chain(d, grad_d, hess_d, dhat: float, kappa: float, project: bool = True):
    """Barrier value, gradient and Hessian through a distance function.

    ``grad_d`` has shape ``(k, s, 3)`` and ``hess_d`` ``(k, s, s, 3, 3)`` for
    ``s`` vertex slots. Hessians are PSD-projected on the flattened ``3s``
    variables unless ``project`` is False.
    """
    from ..elasticity import project_psd

    d = np.asarray(d, float)
    if np.any(d <= 0) or np.any(d >= dhat):
        raise BarrierDomainError("barrier evaluated outside (0, dhat)")
    k, s = grad_d.shape[:2]
    b = barrier(d, dhat, kappa)
    b1 = barrier_d1(d, dhat, kappa)
    b2 = barrier_d2(d, dhat, kappa)
    g = b1[:, None, None] * grad_d
    gf = grad_d.reshape(k, 3 * s)
    Hf = (b2[:, None, None] * gf[:, :, None] * gf[:, None, :]
          + b1[:, None, None] * hess_d.transpose(0, 1, 3, 2, 4).reshape(k, 3 * s, 3 * s))
    if project and k:
        Hf = project_psd(Hf)
    H = Hf.reshape(k, s, 3, s, 3).transpose(0, 1, 3, 2, 4)
    return b, g, H
