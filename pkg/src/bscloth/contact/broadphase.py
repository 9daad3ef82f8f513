"""Uniform spatial hash over axis-aligned boxes, realized with sorts and joins."""

from __future__ import annotations

import numpy as np

_BITS = 21
_OFF = 1 << (_BITS - 1)
MAX_ENTRIES = 20_000_000


def _pack(ijk):
    ijk = ijk + _OFF
    return (ijk[..., 0] << (2 * _BITS)) | (ijk[..., 1] << _BITS) | ijk[..., 2]


def _box_cells(lo, hi, cell):
    """Expand boxes into (item, cell key) rows."""
    ilo = np.floor(lo / cell).astype(np.int64)
    ihi = np.floor(hi / cell).astype(np.int64)
    ext = ihi - ilo + 1
    count = ext.prod(axis=1)
    total = int(count.sum())
    if total > MAX_ENTRIES:
        raise OverflowError(total)
    item = np.repeat(np.arange(lo.shape[0]), count)
    local = np.arange(total) - np.repeat(np.cumsum(count) - count, count)
    e = ext[item]
    i = local // (e[:, 1] * e[:, 2])
    j = (local // e[:, 2]) % e[:, 1]
    k = local % e[:, 2]
    ijk = ilo[item] + np.stack([i, j, k], 1)
    return item, _pack(ijk)


def _join(qkey, bkey):
    """All index pairs (a, b) with ``qkey[a] == bkey[b]``."""
    order = np.argsort(bkey, kind="stable")
    sk = bkey[order]
    lo = np.searchsorted(sk, qkey, "left")
    hi = np.searchsorted(sk, qkey, "right")
    n = hi - lo
    a = np.repeat(np.arange(qkey.size), n)
    start = np.repeat(lo - (np.cumsum(n) - n), n)
    b = order[start + np.arange(a.size)]
    return a, b


def box_pairs(qlo, qhi, blo, bhi, cell: float, symmetric: bool = False):
    """Candidate pairs of query boxes and target boxes sharing a hash cell.

    The returned list is a superset of overlapping box pairs. With
    ``symmetric`` both sets are the same and only ``a < b`` is kept.
    """
    while True:
        try:
            qa, qk = _box_cells(qlo, qhi, cell)
            ba, bk = _box_cells(blo, bhi, cell)
            break
        except OverflowError:
            cell *= 2
    ia, ib = _join(qk, bk)
    a, b = qa[ia], ba[ib]
    if symmetric:
        keep = a < b
        a, b = a[keep], b[keep]
    if a.size == 0:
        return a, b
    key = np.unique(a * np.int64(blo.shape[0]) + b)
    a, b = key // blo.shape[0], key % blo.shape[0]
    # exact box overlap filter
    ok = np.all((qlo[a] <= bhi[b]) & (blo[b] <= qhi[a]), axis=1)
    return a[ok], b[ok]


def brute_force_pairs(qlo, qhi, blo, bhi, symmetric: bool = False):
    ok = np.all((qlo[:, None] <= bhi[None]) & (blo[None] <= qhi[:, None]), axis=2)
    if symmetric:
        ok = np.triu(ok, 1)
    return np.nonzero(ok)
