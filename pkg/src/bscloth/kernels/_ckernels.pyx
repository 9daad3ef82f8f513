# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: primitive classification, segment sums, keyed accumulation."""

import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.stdint cimport int64_t, uint64_t

cnp.import_array()

cdef double PARALLEL_SIN2 = 1e-6


cdef inline double _d3(const double* a, const double* b) noexcept nogil:
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


cdef inline double _sqpp(const double* p, const double* q) noexcept nogil:
    cdef double x = p[0] - q[0], y = p[1] - q[1], z = p[2] - q[2]
    return x * x + y * y + z * z


cdef inline double _sqpe(const double* p, const double* e0, const double* e1) noexcept nogil:
    cdef double r[3]
    cdef double e[3]
    cdef double c0, c1, c2
    cdef int i
    for i in range(3):
        r[i] = p[i] - e0[i]
        e[i] = e1[i] - e0[i]
    c0 = r[1] * e[2] - r[2] * e[1]
    c1 = r[2] * e[0] - r[0] * e[2]
    c2 = r[0] * e[1] - r[1] * e[0]
    return (c0 * c0 + c1 * c1 + c2 * c2) / _d3(e, e)


cdef inline double _sqplane(const double* r, const double* a, const double* b) noexcept nogil:
    cdef double n0 = a[1] * b[2] - a[2] * b[1]
    cdef double n1 = a[2] * b[0] - a[0] * b[2]
    cdef double n2 = a[0] * b[1] - a[1] * b[0]
    cdef double t = r[0] * n0 + r[1] * n1 + r[2] * n2
    return t * t / (n0 * n0 + n1 * n1 + n2 * n2)


cdef inline double _clamp01(double x) noexcept nogil:
    if x < 0.0:
        return 0.0
    if x > 1.0:
        return 1.0
    return x


def classify_pt(p, t0, t1, t2):
    """Squared distance and closest-feature code for point-triangle pairs."""
    cdef double[:, ::1] P = np.ascontiguousarray(p, dtype=np.float64).reshape(-1, 3)
    cdef double[:, ::1] A = np.ascontiguousarray(t0, dtype=np.float64).reshape(-1, 3)
    cdef double[:, ::1] B = np.ascontiguousarray(t1, dtype=np.float64).reshape(-1, 3)
    cdef double[:, ::1] C = np.ascontiguousarray(t2, dtype=np.float64).reshape(-1, 3)
    cdef Py_ssize_t k = P.shape[0], q
    sq_arr = np.empty(k)
    code_arr = np.empty(k, dtype=np.int64)
    cdef double[::1] sq = sq_arr
    cdef int64_t[::1] code = code_arr
    cdef double ab[3]
    cdef double ac[3]
    cdef double ap[3]
    cdef double bp[3]
    cdef double cp[3]
    cdef double d1, d2, d3, d4, d5, d6, va, vb, vc
    cdef int i, cd
    with nogil:
        for q in range(k):
            for i in range(3):
                ab[i] = B[q, i] - A[q, i]
                ac[i] = C[q, i] - A[q, i]
                ap[i] = P[q, i] - A[q, i]
                bp[i] = P[q, i] - B[q, i]
                cp[i] = P[q, i] - C[q, i]
            d1 = _d3(ab, ap); d2 = _d3(ac, ap)
            d3 = _d3(ab, bp); d4 = _d3(ac, bp)
            d5 = _d3(ab, cp); d6 = _d3(ac, cp)
            vc = d1 * d4 - d3 * d2
            vb = d5 * d2 - d1 * d6
            va = d3 * d6 - d5 * d4
            if d1 <= 0 and d2 <= 0:
                cd = 0
            elif d3 >= 0 and d4 <= d3:
                cd = 1
            elif vc <= 0 and d1 >= 0 and d3 <= 0:
                cd = 3
            elif d6 >= 0 and d5 <= d6:
                cd = 2
            elif vb <= 0 and d2 >= 0 and d6 <= 0:
                cd = 5
            elif va <= 0 and (d4 - d3) >= 0 and (d5 - d6) >= 0:
                cd = 4
            else:
                cd = 6
            code[q] = cd
            if cd == 0:
                sq[q] = _sqpp(&P[q, 0], &A[q, 0])
            elif cd == 1:
                sq[q] = _sqpp(&P[q, 0], &B[q, 0])
            elif cd == 2:
                sq[q] = _sqpp(&P[q, 0], &C[q, 0])
            elif cd == 3:
                sq[q] = _sqpe(&P[q, 0], &A[q, 0], &B[q, 0])
            elif cd == 4:
                sq[q] = _sqpe(&P[q, 0], &B[q, 0], &C[q, 0])
            elif cd == 5:
                sq[q] = _sqpe(&P[q, 0], &C[q, 0], &A[q, 0])
            else:
                sq[q] = _sqplane(ap, ab, ac)
    return sq_arr, code_arr


cdef inline int _ps_kind(const double* p, const double* e0, const double* e1, double* out) noexcept nogil:
    cdef double e[3]
    cdef double r[3]
    cdef int i
    for i in range(3):
        e[i] = e1[i] - e0[i]
        r[i] = p[i] - e0[i]
    cdef double t = _d3(r, e) / _d3(e, e)
    if t <= 0:
        out[0] = _sqpp(p, e0)
        return 0
    if t >= 1:
        out[0] = _sqpp(p, e1)
        return 1
    out[0] = _sqpe(p, e0, e1)
    return 2


cdef int[4][3] PS_CODES
PS_CODES[0][:] = [7, 8, 11]
PS_CODES[1][:] = [9, 10, 12]
PS_CODES[2][:] = [7, 9, 13]
PS_CODES[3][:] = [8, 10, 14]


def classify_ee(a0, a1, b0, b1):
    """Squared distance and closest-feature code for edge-edge pairs."""
    cdef double[:, ::1] A0 = np.ascontiguousarray(a0, dtype=np.float64).reshape(-1, 3)
    cdef double[:, ::1] A1 = np.ascontiguousarray(a1, dtype=np.float64).reshape(-1, 3)
    cdef double[:, ::1] B0 = np.ascontiguousarray(b0, dtype=np.float64).reshape(-1, 3)
    cdef double[:, ::1] B1 = np.ascontiguousarray(b1, dtype=np.float64).reshape(-1, 3)
    cdef Py_ssize_t k = A0.shape[0], q
    sq_arr = np.empty(k)
    code_arr = np.empty(k, dtype=np.int64)
    cdef double[::1] sq = sq_arr
    cdef int64_t[::1] code = code_arr
    cdef double d1[3]
    cdef double d2[3]
    cdef double r[3]
    cdef double a, e, b, c, f, denom, s, t, best, tmp
    cdef int i, cd, kind, bi, bk, s_end, t_end
    with nogil:
        for q in range(k):
            for i in range(3):
                d1[i] = A1[q, i] - A0[q, i]
                d2[i] = B1[q, i] - B0[q, i]
                r[i] = A0[q, i] - B0[q, i]
            a = _d3(d1, d1); e = _d3(d2, d2)
            b = _d3(d1, d2); c = _d3(d1, r); f = _d3(d2, r)
            denom = a * e - b * b
            if denom <= PARALLEL_SIN2 * a * e:
                kind = _ps_kind(&A0[q, 0], &B0[q, 0], &B1[q, 0], &best)
                bi = 0; bk = kind
                kind = _ps_kind(&A1[q, 0], &B0[q, 0], &B1[q, 0], &tmp)
                if tmp < best:
                    best = tmp; bi = 1; bk = kind
                kind = _ps_kind(&B0[q, 0], &A0[q, 0], &A1[q, 0], &tmp)
                if tmp < best:
                    best = tmp; bi = 2; bk = kind
                kind = _ps_kind(&B1[q, 0], &A0[q, 0], &A1[q, 0], &tmp)
                if tmp < best:
                    best = tmp; bi = 3; bk = kind
                code[q] = PS_CODES[bi][bk]
                sq[q] = best
                continue
            s = _clamp01((b * f - c * e) / denom)
            t = (b * s + f) / e
            if t < 0:
                t = 0.0
                s = _clamp01(-c / a)
            elif t > 1:
                t = 1.0
                s = _clamp01((b - c) / a)
            s_end = 0 if s == 0 else (1 if s == 1 else 2)
            t_end = 0 if t == 0 else (1 if t == 1 else 2)
            if s_end < 2 and t_end < 2:
                cd = 7 + 2 * s_end + t_end
            elif s_end < 2:
                cd = 11 + s_end
            elif t_end < 2:
                cd = 13 + t_end
            else:
                cd = 15
            code[q] = cd
            if cd == 7:
                sq[q] = _sqpp(&A0[q, 0], &B0[q, 0])
            elif cd == 8:
                sq[q] = _sqpp(&A0[q, 0], &B1[q, 0])
            elif cd == 9:
                sq[q] = _sqpp(&A1[q, 0], &B0[q, 0])
            elif cd == 10:
                sq[q] = _sqpp(&A1[q, 0], &B1[q, 0])
            elif cd == 11:
                sq[q] = _sqpe(&A0[q, 0], &B0[q, 0], &B1[q, 0])
            elif cd == 12:
                sq[q] = _sqpe(&A1[q, 0], &B0[q, 0], &B1[q, 0])
            elif cd == 13:
                sq[q] = _sqpe(&B0[q, 0], &A0[q, 0], &A1[q, 0])
            elif cd == 14:
                sq[q] = _sqpe(&B1[q, 0], &A0[q, 0], &A1[q, 0])
            else:
                sq[q] = _sqplane(r, d1, d2)
    return sq_arr, code_arr


def segment_sum(values, order, ptr, int nthreads=1):
    """``out[b] = sum(values[order[ptr[b]:ptr[b+1]]])``; one thread owns each segment."""
    vals = np.ascontiguousarray(values, dtype=np.float64)
    shape = vals.shape
    ncols = int(np.prod(shape[1:], dtype=np.int64))
    cdef double[:, ::1] V = vals.reshape(shape[0], ncols)
    cdef int64_t[::1] O = np.ascontiguousarray(order, dtype=np.int64)
    cdef int64_t[::1] Pt = np.ascontiguousarray(ptr, dtype=np.int64)
    cdef Py_ssize_t nb = Pt.shape[0] - 1, ncol = V.shape[1], bk, t, j, row
    out_arr = np.zeros((nb, ncol))
    cdef double[:, ::1] out = out_arr
    if nthreads < 1:
        nthreads = 1
    for bk in prange(nb, nogil=True, num_threads=nthreads, schedule="static"):
        for t in range(Pt[bk], Pt[bk + 1]):
            row = O[t]
            for j in range(ncol):
                out[bk, j] += V[row, j]
    return out_arr.reshape((nb,) + tuple(shape[1:]))


def accumulate_keyed(keys, values):
    """Sum rows sharing a key through an open-addressing table; returns sorted keys and sums."""
    cdef int64_t[::1] K = np.ascontiguousarray(keys, dtype=np.int64)
    vals = np.ascontiguousarray(values, dtype=np.float64)
    cdef Py_ssize_t m = K.shape[0]
    tail = tuple(vals.shape[1:])
    if m == 0:
        return np.zeros(0, dtype=np.int64), np.zeros((0,) + tail)
    cdef double[:, ::1] V = vals.reshape(m, -1)
    cdef Py_ssize_t ncol = V.shape[1]
    cdef Py_ssize_t cap = 16
    while cap < 2 * m:
        cap *= 2
    table_arr = np.full(cap, -1, dtype=np.int64)
    slot_arr = np.empty(cap, dtype=np.int64)
    ukeys_arr = np.empty(m, dtype=np.int64)
    sums_arr = np.zeros((m, ncol))
    cdef int64_t[::1] table = table_arr
    cdef int64_t[::1] slot = slot_arr
    cdef int64_t[::1] ukeys = ukeys_arr
    cdef double[:, ::1] sums = sums_arr
    cdef Py_ssize_t i, j, h, nu = 0, mask = cap - 1
    cdef uint64_t x
    with nogil:
        for i in range(m):
            x = <uint64_t>K[i]
            x = (x ^ (x >> 33)) * <uint64_t>0xff51afd7ed558ccd
            x = x ^ (x >> 33)
            h = <Py_ssize_t>(x & <uint64_t>mask)
            while table[h] != -1 and ukeys[slot[h]] != K[i]:
                h = (h + 1) & mask
            if table[h] == -1:
                table[h] = 1
                slot[h] = nu
                ukeys[nu] = K[i]
                nu += 1
            for j in range(ncol):
                sums[slot[h], j] += V[i, j]
    perm = np.argsort(ukeys_arr[:nu], kind="stable")
    return ukeys_arr[:nu][perm], sums_arr[:nu][perm].reshape((nu,) + tail)
