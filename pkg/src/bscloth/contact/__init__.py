"""Barrier contact on embedded triangle meshes and analytic colliders."""

from .barrier import BarrierDomainError, barrier, barrier_chain, barrier_d1, barrier_d2
from .colliders import Plane, Sphere, collider_from_dict
from .distance import dist_derivs, sqdist_derivs
from .model import (
    KIND_EE, KIND_PLANE, KIND_PT, KIND_SPHERE, ContactModel, ContactPair, ContactParams,
    InterpenetrationError, PairSet, ccd_max_step, pullback,
)


def barrier_local(pair: ContactPair, positions, params: ContactParams, code: int | None = None,
                  collider=None, project: bool = True) -> ContactPair:
    """Barrier energy derivatives of a single pair on its vertex coordinates.

    ``positions`` holds the pair's vertices in slot order. Mesh pairs need the
    closest-feature ``code``; collider pairs need the ``collider``.
    """
    import numpy as np

    x = np.asarray(positions, float).reshape(-1, 3)
    s = x.shape[0]
    if collider is not None:
        d, g, H = collider.distance_derivs(x[:1])
        gd, Hd = g[:, None], H[:, None, None]
    else:
        d, gd, Hd = dist_derivs(x[None], np.array([code]))
    b, g, H = barrier_chain(np.atleast_1d(d), gd, Hd, params.dhat, params.kappa, project=project)
    n = gd.shape[1]
    return ContactPair(pair.kind, pair.indices, float(np.atleast_1d(d)[0]), g[0][:s],
                       H[0].transpose(0, 2, 1, 3).reshape(3 * n, 3 * n), float(b[0]))


__all__ = [
    "BarrierDomainError", "ContactModel", "ContactPair", "ContactParams", "InterpenetrationError",
    "KIND_EE", "KIND_PLANE", "KIND_PT", "KIND_SPHERE", "PairSet", "Plane", "Sphere", "barrier",
    "barrier_chain", "barrier_d1", "barrier_d2", "barrier_local", "ccd_max_step",
    "collider_from_dict", "dist_derivs", "pullback", "sqdist_derivs",
]
