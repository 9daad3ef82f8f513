"""Numpy implementations of the hot kernels (fallback backend)."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

PARALLEL_SIN2 = 1e-6


def _dot(a, b):
    return np.einsum("ki,ki->k", a, b)


def _sq_pe(p, e0, e1):
    r, e = p - e0, e1 - e0
    c = np.cross(r, e)
    return _dot(c, c) / _dot(e, e)


def _sq_plane(r, a, b):
    n = np.cross(a, b)
    t = _dot(r, n)
    return t * t / _dot(n, n)


def classify_pt(p, t0, t1, t2):
    """Squared distance and closest-feature code for point-triangle pairs."""
    p, a, b, c = (np.asarray(x, float).reshape(-1, 3) for x in (p, t0, t1, t2))
    k = p.shape[0]
    ab, ac, ap = b - a, c - a, p - a
    d1, d2 = _dot(ab, ap), _dot(ac, ap)
    bp = p - b
    d3, d4 = _dot(ab, bp), _dot(ac, bp)
    cp = p - c
    d5, d6 = _dot(ab, cp), _dot(ac, cp)
    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    code = np.full(k, 6, dtype=np.int64)
    undecided = np.ones(k, bool)

    def assign(mask, value):
        m = undecided & mask
        code[m] = value
        undecided[m] = False

    assign((d1 <= 0) & (d2 <= 0), 0)
    assign((d3 >= 0) & (d4 <= d3), 1)
    assign((vc <= 0) & (d1 >= 0) & (d3 <= 0), 3)
    assign((d6 >= 0) & (d5 <= d6), 2)
    assign((vb <= 0) & (d2 >= 0) & (d6 <= 0), 5)
    assign((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0), 4)

    sq = np.empty(k)
    for cd, q in ((0, a), (1, b), (2, c)):
        m = code == cd
        sq[m] = _dot(p[m] - q[m], p[m] - q[m])
    for cd, e0, e1 in ((3, a, b), (4, b, c), (5, c, a)):
        m = code == cd
        sq[m] = _sq_pe(p[m], e0[m], e1[m])
    m = code == 6
    sq[m] = _sq_plane(ap[m], ab[m], ac[m])
    return sq, code


def _point_segment(p, e0, e1):
    e = e1 - e0
    t = _dot(p - e0, e) / _dot(e, e)
    kind = np.where(t <= 0, 0, np.where(t >= 1, 1, 2))
    sq = np.where(
        kind == 0, _dot(p - e0, p - e0),
        np.where(kind == 1, _dot(p - e1, p - e1), _sq_pe(p, e0, e1)),
    )
    return sq, kind


_PS_CODES = np.array([
    [7, 8, 11],   # a0 vs edge b
    [9, 10, 12],  # a1 vs edge b
    [7, 9, 13],   # b0 vs edge a
    [8, 10, 14],  # b1 vs edge a
])


def classify_ee(a0, a1, b0, b1):
    """Squared distance and closest-feature code for edge-edge pairs."""
    a0, a1, b0, b1 = (np.asarray(x, float).reshape(-1, 3) for x in (a0, a1, b0, b1))
    k = a0.shape[0]
    d1, d2, r = a1 - a0, b1 - b0, a0 - b0
    a, e = _dot(d1, d1), _dot(d2, d2)
    b, c, f = _dot(d1, d2), _dot(d1, r), _dot(d2, r)
    denom = a * e - b * b
    parallel = denom <= PARALLEL_SIN2 * a * e

    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.clip((b * f - c * e) / denom, 0.0, 1.0)
        t = (b * s + f) / e
    lo, hi = t < 0, t > 1
    t = np.where(lo, 0.0, np.where(hi, 1.0, t))
    s = np.where(lo, np.clip(-c / a, 0.0, 1.0), np.where(hi, np.clip((b - c) / a, 0.0, 1.0), s))

    s_end = np.where(s == 0, 0, np.where(s == 1, 1, 2))
    t_end = np.where(t == 0, 0, np.where(t == 1, 1, 2))
    code = np.full(k, 15, dtype=np.int64)
    both = (s_end < 2) & (t_end < 2)
    code[both] = 7 + 2 * s_end[both] + t_end[both]
    m = (s_end < 2) & (t_end == 2)
    code[m] = 11 + s_end[m]
    m = (s_end == 2) & (t_end < 2)
    code[m] = 13 + t_end[m]

    sq = np.empty(k)
    cand = [
        _point_segment(a0, b0, b1), _point_segment(a1, b0, b1),
        _point_segment(b0, a0, a1), _point_segment(b1, a0, a1),
    ]
    sqs = np.stack([cv[0] for cv in cand], 1)
    kinds = np.stack([cv[1] for cv in cand], 1)

    # parallel edges: minimum over the four point-segment distances
    best = np.argmin(sqs, axis=1)
    pk = kinds[np.arange(k), best]
    pc = _PS_CODES[best, pk]
    code = np.where(parallel, pc, code)

    for cd, (x, y) in zip(range(7, 11), ((a0, b0), (a0, b1), (a1, b0), (a1, b1))):
        mm = code == cd
        sq[mm] = _dot(x[mm] - y[mm], x[mm] - y[mm])
    for cd, (p_, e0, e1) in zip(range(11, 15), ((a0, b0, b1), (a1, b0, b1), (b0, a0, a1), (b1, a0, a1))):
        mm = code == cd
        sq[mm] = _sq_pe(p_[mm], e0[mm], e1[mm])
    mm = code == 15
    sq[mm] = _sq_plane(r[mm], d1[mm], d2[mm])
    return sq, code


def segment_sum(values, order, ptr, nthreads: int = 1):
    """``out[b] = sum(values[order[ptr[b]:ptr[b+1]]])`` with each segment owned by one worker."""
    values = np.ascontiguousarray(values, dtype=float)
    nb = ptr.size - 1
    out = np.zeros((nb,) + values.shape[1:])
    if nb == 0 or order.size == 0:
        return out

    def run(lo, hi):
        a, b = ptr[lo], ptr[hi]
        if b == a:
            return
        gathered = values[order[a:b]]
        starts = ptr[lo:hi] - a
        nonempty = ptr[lo + 1 : hi + 1] > ptr[lo:hi]
        sums = np.add.reduceat(gathered, starts[nonempty], axis=0)
        out[lo:hi][nonempty] = sums

    nthreads = max(1, int(nthreads))
    bounds = np.linspace(0, nb, nthreads + 1).astype(int)
    if nthreads == 1:
        run(0, nb)
    else:
        with ThreadPoolExecutor(nthreads) as ex:
            list(ex.map(lambda i: run(bounds[i], bounds[i + 1]), range(nthreads)))
    return out


def accumulate_keyed(keys, values):
    """Sum rows of ``values`` sharing a key; returns sorted unique keys and sums."""
    keys = np.asarray(keys, dtype=np.int64)
    values = np.asarray(values, dtype=float)
    if keys.size == 0:
        return keys.copy(), np.zeros((0,) + values.shape[1:])
    ukeys, inv = np.unique(keys, return_inverse=True)
    flat = values.reshape(keys.size, -1)
    sums = np.empty((ukeys.size, flat.shape[1]))
    for c in range(flat.shape[1]):
        sums[:, c] = np.bincount(inv, weights=flat[:, c], minlength=ukeys.size)
    return ukeys, sums.reshape((ukeys.size,) + values.shape[1:])
