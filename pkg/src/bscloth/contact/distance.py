"""Squared distances between mesh primitives with first and second derivatives.

A pair is stored as four vertex slots: ``(v, t0, t1, t2)`` for point-triangle
and ``(a0, a1, b0, b1)`` for edge-edge. The closest-feature code (0..15)
selects which reduced form applies; each reduced form is a function of at
most three difference vectors ``y_k = sum_s S[k, s] x_s``.
"""

from __future__ import annotations

import numpy as np

PP, PE, PLANE = 0, 1, 2

# code -> (form, S rows); S has one row per difference vector, one column per slot
_FORMS: dict[int, tuple[int, list[list[float]]]] = {}


def _pp(i, j):
    row = [0.0] * 4
    row[i], row[j] = 1.0, -1.0
    return PP, [row]


def _pe(p, e0, e1):
    r = [0.0] * 4
    r[p], r[e0] = 1.0, -1.0
    e = [0.0] * 4
    e[e1], e[e0] = 1.0, -1.0
    return PE, [r, e]


_FORMS.update({0: _pp(0, 1), 1: _pp(0, 2), 2: _pp(0, 3)})
_FORMS.update({3: _pe(0, 1, 2), 4: _pe(0, 2, 3), 5: _pe(0, 3, 1)})
_FORMS[6] = (PLANE, [[1, -1, 0, 0], [0, -1, 1, 0], [0, -1, 0, 1]])
_FORMS.update({7: _pp(0, 2), 8: _pp(0, 3), 9: _pp(1, 2), 10: _pp(1, 3)})
_FORMS.update({11: _pe(0, 2, 3), 12: _pe(1, 2, 3), 13: _pe(2, 0, 1), 14: _pe(3, 0, 1)})
_FORMS[15] = (PLANE, [[1, 0, -1, 0], [-1, 1, 0, 0], [0, 0, -1, 1]])

FORM_OF_CODE = np.array([_FORMS[c][0] for c in range(16)])
S_OF_CODE = np.zeros((16, 3, 4))
for _c, (_f, _rows) in _FORMS.items():
    S_OF_CODE[_c, : len(_rows)] = _rows

# slots that actually take part in each code
SLOTS_OF_CODE = [np.flatnonzero(np.abs(S_OF_CODE[c]).sum(0)) for c in range(16)]


def _skew(v):
    z = np.zeros(v.shape[:-1])
    return np.stack([
        np.stack([z, -v[..., 2], v[..., 1]], -1),
        np.stack([v[..., 2], z, -v[..., 0]], -1),
        np.stack([-v[..., 1], v[..., 0], z], -1),
    ], -2)


def _dot(a, b):
    return np.einsum("ki,ki->k", a, b)


def _outer(a, b):
    return a[:, :, None] * b[:, None, :]


def _cross_sq_derivs(a, b):
    """``h = |a x b|^2`` with gradient ``(k, 2, 3)`` and Hessian ``(k, 2, 2, 3, 3)``."""
    aa, bb, ab = _dot(a, a), _dot(b, b), _dot(a, b)
    h = aa * bb - ab**2
    g = np.stack([2 * (bb[:, None] * a - ab[:, None] * b), 2 * (aa[:, None] * b - ab[:, None] * a)], 1)
    eye = np.eye(3)
    H = np.empty((a.shape[0], 2, 2, 3, 3))
    H[:, 0, 0] = 2 * (bb[:, None, None] * eye - _outer(b, b))
    H[:, 1, 1] = 2 * (aa[:, None, None] * eye - _outer(a, a))
    H[:, 0, 1] = 2 * (2 * _outer(a, b) - _outer(b, a) - ab[:, None, None] * eye)
    H[:, 1, 0] = np.swapaxes(H[:, 0, 1], 1, 2)
    return h, g, H


def _quotient(g, dg, Hg, h, dh, Hh):
    """Derivatives of ``g / h`` given those of ``g`` and ``h`` (flattened variables)."""
    s = g / h
    ds = dg / h[:, None] - (g / h**2)[:, None] * dh
    Hs = (Hg / h[:, None, None]
          - (_outer(dg, dh) + _outer(dh, dg)) / (h**2)[:, None, None]
          - (g / h**2)[:, None, None] * Hh
          + (2 * g / h**3)[:, None, None] * _outer(dh, dh))
    return s, ds, Hs


def _reduced_derivs(form, y):
    """Squared distance and derivatives w.r.t. the difference vectors ``y (k, 3, 3)``."""
    k = y.shape[0]
    dS = np.zeros((k, 9))
    HS = np.zeros((k, 9, 9))
    if form == PP:
        r = y[:, 0]
        s = _dot(r, r)
        dS[:, :3] = 2 * r
        HS[:, :3, :3] = 2 * np.eye(3)
        return s, dS, HS
    if form == PE:
        r, e = y[:, 0], y[:, 1]
        g, dg2, Hg2 = _cross_sq_derivs(r, e)
        h = _dot(e, e)
        dh = np.zeros((k, 6))
        dh[:, 3:] = 2 * e
        Hh = np.zeros((k, 6, 6))
        Hh[:, 3:, 3:] = 2 * np.eye(3)
        s, ds, Hs = _quotient(g, dg2.reshape(k, 6), Hg2.transpose(0, 1, 3, 2, 4).reshape(k, 6, 6), h, dh, Hh)
        dS[:, :6] = ds
        HS[:, :6, :6] = Hs
        return s, dS, HS
    r, a, b = y[:, 0], y[:, 1], y[:, 2]
    n = np.cross(a, b)
    t = _dot(r, n)
    dt = np.concatenate([n, np.cross(b, r), np.cross(r, a)], 1)
    Ht = np.zeros((k, 9, 9))
    Ht[:, 0:3, 3:6] = -_skew(b)
    Ht[:, 0:3, 6:9] = _skew(a)
    Ht[:, 3:6, 6:9] = -_skew(r)
    Ht = Ht + np.swapaxes(Ht, 1, 2)
    g = t**2
    dg = 2 * t[:, None] * dt
    Hg = 2 * _outer(dt, dt) + 2 * t[:, None, None] * Ht
    h, dh2, Hh2 = _cross_sq_derivs(a, b)
    dh = np.zeros((k, 9))
    dh[:, 3:] = dh2.reshape(k, 6)
    Hh = np.zeros((k, 9, 9))
    Hh[:, 3:, 3:] = Hh2.transpose(0, 1, 3, 2, 4).reshape(k, 6, 6)
    return _quotient(g, dg, Hg, h, dh, Hh)


def sqdist_by_code(x, code):
    """Squared distance for slot positions ``x (k, 4, 3)`` under the given codes."""
    return sqdist_derivs(x, code, derivs=False)[0]


def sqdist_derivs(x, code, derivs: bool = True):
    """Squared distance, gradient ``(k, 4, 3)`` and Hessian ``(k, 4, 4, 3, 3)`` per pair."""
    x = np.asarray(x, float)
    code = np.asarray(code)
    k = x.shape[0]
    S = S_OF_CODE[code]  # (k, 3, 4)
    y = np.einsum("kys,ksi->kyi", S, x)
    s = np.empty(k)
    grad = np.zeros((k, 4, 3)) if derivs else None
    hess = np.zeros((k, 4, 4, 3, 3)) if derivs else None
    forms = FORM_OF_CODE[code]
    for form in (PP, PE, PLANE):
        m = np.flatnonzero(forms == form)
        if m.size == 0:
            continue
        sv, dS, HS = _reduced_derivs(form, y[m])
        s[m] = sv
        if derivs:
            Sm = S[m]
            grad[m] = np.einsum("kys,kyi->ksi", Sm, dS.reshape(-1, 3, 3))
            H4 = HS.reshape(-1, 3, 3, 3, 3)  # (k, y, i, z, j)
            hess[m] = np.einsum("kys,kzt,kyizj->kstij", Sm, Sm, H4)
    return s, grad, hess


def dist_derivs(x, code):
    """Unsquared distance with gradient and Hessian from the squared form."""
    s, ds, Hs = sqdist_derivs(x, code)
    d = np.sqrt(s)
    k = d.size
    g = ds / (2 * d)[:, None, None]
    gf = ds.reshape(k, 12)
    Hf = Hs.transpose(0, 1, 3, 2, 4).reshape(k, 12, 12)
    H = Hf / (2 * d)[:, None, None] - _outer(gf, gf) / (4 * d**3)[:, None, None]
    return d, g, H.reshape(k, 4, 3, 4, 3).transpose(0, 1, 3, 2, 4)
