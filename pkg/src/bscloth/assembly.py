"""Block-CSC Hessian assembly.

Elasticity blocks are gathered per block from the quadrature sites sharing
it (each block owned by one worker). Contact Hessians go through a two-stage
conversion: vertex-pair blocks are accumulated per spatial cell, then
distributed to control-point pairs per spatial cell, and the per-cell maps
are merged in a fixed cell order.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from . import kernels
from .geometry import QuadPoints

log = logging.getLogger(__name__)


class AssemblyIndexError(IndexError):
    pass


class MappingError(KeyError):
    pass


@dataclass
class BlockSparseMatrix:
    """Symmetric matrix of 3x3 blocks, compressed by block column.

    ``data[k]`` is the block at row ``indices[k]`` of its column; row indices
    are sorted within each column.
    """

    n: int
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray  # (nnzb, 3, 3)

    @property
    def nnzb(self) -> int:
        return self.indices.size

    @cached_property
    def col_of(self) -> np.ndarray:
        return np.repeat(np.arange(self.n), np.diff(self.indptr))

    @cached_property
    def keys(self) -> np.ndarray:
        return self.col_of.astype(np.int64) * self.n + self.indices

    @classmethod
    def from_keys(cls, n: int, keys: np.ndarray, data: np.ndarray | None = None) -> "BlockSparseMatrix":
        """Build from sorted unique ``col * n + row`` keys."""
        keys = np.asarray(keys, np.int64)
        col, row = keys // n, keys % n
        indptr = np.zeros(n + 1, np.int64)
        np.cumsum(np.bincount(col, minlength=n), out=indptr[1:])
        if data is None:
            data = np.zeros((keys.size, 3, 3))
        return cls(n, indptr, row.astype(np.int64), np.asarray(data, float))

    @classmethod
    def empty(cls, n: int) -> "BlockSparseMatrix":
        return cls.from_keys(n, np.zeros(0, np.int64))

    def with_data(self, data) -> "BlockSparseMatrix":
        return BlockSparseMatrix(self.n, self.indptr, self.indices, data)

    def copy(self) -> "BlockSparseMatrix":
        return self.with_data(self.data.copy())

    def find(self, row, col) -> np.ndarray:
        """Block positions of ``(row, col)``; -1 where absent."""
        row = np.asarray(row, np.int64)
        col = np.asarray(col, np.int64)
        keys = self.keys
        q = col * self.n + row
        if keys.size == 0:
            return np.full(q.shape, -1, np.int64)
        pos = np.minimum(np.searchsorted(keys, q), keys.size - 1)
        return np.where(keys[pos] == q, pos, -1)

    def diag_positions(self) -> np.ndarray:
        return self.find(np.arange(self.n), np.arange(self.n))

    def to_scipy(self) -> sp.csr_matrix:
        """Scalar ``3n x 3n`` CSR matrix (valid because the matrix is symmetric)."""
        if self.nnzb == 0:
            return sp.csr_matrix((3 * self.n, 3 * self.n))
        bsr = sp.bsr_matrix((self.data.transpose(0, 2, 1), self.indices, self.indptr),
                            shape=(3 * self.n, 3 * self.n))
        return bsr.tocsr()

    def toarray(self) -> np.ndarray:
        return self.to_scipy().toarray()

    def matvec(self, x) -> np.ndarray:
        x = np.asarray(x, float).reshape(self.n, 3)
        out = np.zeros((self.n, 3))
        contrib = np.einsum("kij,kj->ki", self.data, x[self.col_of])
        for d in range(3):
            out[:, d] = np.bincount(self.indices, weights=contrib[:, d], minlength=self.n)
        return out

    def split_diagonal(self) -> tuple["BlockSparseMatrix", "BlockSparseMatrix"]:
        """Return (block-diagonal part, off-diagonal part) on the same pattern."""
        diag = self.indices == self.col_of
        d = self.data.copy()
        o = self.data.copy()
        d[~diag] = 0.0
        o[diag] = 0.0
        return self.with_data(d), self.with_data(o)

    def is_symmetric(self, tol: float = 0.0) -> bool:
        S = self.to_scipy()
        return abs(S - S.T).max() <= tol * max(abs(S).max(), 1.0) if S.nnz else True


@dataclass
class StencilMap:
    """Inverted index from blocks to the quadrature-site Hessian entries that feed them.

    ``order[ptr[b]:ptr[b+1]]`` lists rows of the flattened ``(nq * 81, 9)``
    membrane Hessian contributing to block ``b``.
    """

    order: np.ndarray
    ptr: np.ndarray
    point_slots: list = field(default_factory=list)  # per control point: (site ids, slot ids)

    def sites_of_block(self, b: int) -> np.ndarray:
        return np.unique(self.order[self.ptr[b]:self.ptr[b + 1]] // 81)


def _site_entries(qps: QuadPoints, n: int):
    """Keys and flat source rows of every active (a, b) slot pair at every site."""
    act = qps.active[:, :, None] & qps.active[:, None, :]
    q, a, b = np.nonzero(act)
    rows = qps.index[q, a]
    cols = qps.index[q, b]
    keys = cols.astype(np.int64) * n + rows
    src = (q * 81 + a * 9 + b).astype(np.int64)
    return keys, src


def precompute_sparsity(membrane: QuadPoints, bending: QuadPoints | None, n: int,
                        pinned: np.ndarray | None = None) -> tuple[BlockSparseMatrix, StencilMap]:
    """Skeleton with a block per control-point pair sharing a site, plus the diagonal."""
    mkeys, msrc = _site_entries(membrane, n)
    parts = [mkeys, np.arange(n, dtype=np.int64) * (n + 1)]
    if bending is not None and len(bending):
        parts.append(_site_entries(bending, n)[0])
    keys = np.unique(np.concatenate(parts))
    skel = BlockSparseMatrix.from_keys(n, keys)
    blk = np.searchsorted(keys, mkeys)
    order_idx = np.argsort(blk, kind="stable")
    ptr = np.zeros(keys.size + 1, np.int64)
    np.cumsum(np.bincount(blk, minlength=keys.size), out=ptr[1:])
    smap = StencilMap(order=msrc[order_idx], ptr=ptr)
    # per control point: which sites and slots touch it
    q, a = np.nonzero(membrane.active)
    ctrl = membrane.index[q, a]
    o = np.argsort(ctrl, kind="stable")
    cuts = np.searchsorted(ctrl[o], np.arange(n + 1))
    smap.point_slots = [(q[o[cuts[i]:cuts[i + 1]]], a[o[cuts[i]:cuts[i + 1]]]) for i in range(n)]
    return skel, smap


def bending_blocks(skel: BlockSparseMatrix, bending: QuadPoints, scalars: np.ndarray) -> np.ndarray:
    """Constant bending Hessian as block data on the skeleton pattern."""
    keys, src = _site_entries(bending, skel.n)
    pos = skel.find(keys % skel.n, keys // skel.n)
    if np.any(pos < 0):
        raise AssemblyIndexError("bending stencil block missing from skeleton")
    s = scalars.reshape(-1)[src]
    acc = np.bincount(pos, weights=s, minlength=skel.nnzb)
    return acc[:, None, None] * np.eye(3)


def assemble_elasticity(skel: BlockSparseMatrix, smap: StencilMap, membrane_hess: np.ndarray,
                        bending_data: np.ndarray | None = None, workers: int = 1) -> BlockSparseMatrix:
    """Per-block gather of membrane site Hessians ``(nq, 9, 9, 3, 3)``."""
    if membrane_hess.shape[0] * 81 <= (smap.order.max(initial=-1)):
        raise AssemblyIndexError("stencil map refers to a missing site")
    vals = membrane_hess.reshape(-1, 9)
    data = kernels.segment_sum(vals, smap.order, smap.ptr, workers).reshape(-1, 3, 3)
    if bending_data is not None:
        data = data + bending_data
    return skel.with_data(data)


def triplet_oracle(n: int, entries) -> sp.csr_matrix:
    """Sequential scalar-triplet accumulation; ``entries`` yields (row, col, 3x3 block)."""
    rows, cols, vals = [], [], []
    ii, jj = np.meshgrid(np.arange(3), np.arange(3), indexing="ij")
    for r, c, blk in entries:
        rows.append(3 * r + ii.ravel())
        cols.append(3 * c + jj.ravel())
        vals.append(np.asarray(blk).ravel())
    if not rows:
        return sp.csr_matrix((3 * n, 3 * n))
    M = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(3 * n, 3 * n))
    return M.tocsr()


def elasticity_triplets(membrane: QuadPoints, membrane_hess, bending: QuadPoints | None = None,
                        bend_scalars=None):
    for q in range(len(membrane)):
        idx = membrane.index[q]
        act = np.flatnonzero(membrane.active[q])
        for a in act:
            for b in act:
                yield idx[a], idx[b], membrane_hess[q, a, b]
    if bending is not None:
        eye = np.eye(3)
        for q in range(len(bending)):
            idx = bending.index[q]
            act = np.flatnonzero(bending.active[q])
            for a in act:
                for b in act:
                    yield idx[a], idx[b], bend_scalars[q, a, b] * eye


# -- contact -------------------------------------------------------------------


@dataclass
class SpatialBlocks:
    """Grid over the AABB of the simulated mesh along its two longest axes."""

    lo: np.ndarray
    hi: np.ndarray
    axes: tuple[int, int]
    shape: tuple[int, int]

    @classmethod
    def build(cls, X: np.ndarray, n_cells: int) -> "SpatialBlocks":
        lo, hi = X.min(0), X.max(0)
        ext = hi - lo
        ax = tuple(int(a) for a in np.argsort(-ext, kind="stable")[:2])
        r = ext[ax[0]] / max(ext[ax[1]], 1e-12)
        nx = int(np.clip(round(np.sqrt(n_cells * r)), 1, n_cells))
        ny = max(1, n_cells // nx)
        return cls(lo, hi, ax, (nx, ny))

    @property
    def n_cells(self) -> int:
        return self.shape[0] * self.shape[1]

    def cell_of(self, x: np.ndarray) -> np.ndarray:
        out = np.zeros(x.shape[0], np.int64)
        for k, (a, m) in enumerate(zip(self.axes, self.shape)):
            w = max(self.hi[a] - self.lo[a], 1e-12)
            c = np.clip(((x[:, a] - self.lo[a]) / w * m).astype(np.int64), 0, m - 1)
            out = out * m + c if k else c
        return out


@dataclass
class ContactAssemblyStats:
    pairs: int = 0
    vertex_blocks: int = 0
    control_blocks: int = 0
    cross_cell_merges: int = 0


def _by_cell(cell: np.ndarray, n_cells: int):
    o = np.argsort(cell, kind="stable")
    cuts = np.searchsorted(cell[o], np.arange(n_cells + 1))
    return [o[cuts[c]:cuts[c + 1]] for c in range(n_cells)]


def _run_cells(fn, n_cells: int, workers: int):
    if workers <= 1:
        return [fn(c) for c in range(n_cells)]
    with ThreadPoolExecutor(workers) as ex:
        return list(ex.map(fn, range(n_cells)))


def _merge(results):
    """Concatenate per-cell (keys, sums) in cell order, sum duplicates; count cross-cell keys."""
    results = [r for r in results if r[0].size]
    if not results:
        return np.zeros(0, np.int64), np.zeros((0, 9)), 0
    keys = np.concatenate([r[0] for r in results])
    vals = np.concatenate([r[1] for r in results])
    ukeys, sums = kernels.accumulate_keyed(keys, vals)
    return ukeys, sums, int(keys.size - ukeys.size)


def convert_contact_hessian(verts: np.ndarray, hess: np.ndarray, W: sp.csr_matrix, X: np.ndarray,
                            n_ctrl: int, workers: int = 1, n_cells: int | None = None,
                            stats: ContactAssemblyStats | None = None) -> BlockSparseMatrix:
    """Two-stage conversion of vertex-space pair Hessians to a control-point block matrix.

    ``verts (k, 4)`` are pair vertex slots (-1 padded), ``hess (k, 4, 4, 3, 3)``
    their PSD-projected Hessians, ``W`` the vertex interpolation matrix and
    ``X`` vertex positions used for spatial cells.
    """
    k = verts.shape[0]
    if k == 0:
        return BlockSparseMatrix.empty(n_ctrl)
    nv = W.shape[0]
    if n_cells is None:
        n_cells = 4 * max(1, workers)
    grid = SpatialBlocks.build(X, n_cells)
    nc = grid.n_cells

    # stage 1: pairs bucketed by their lowest-index vertex; vertex-pair blocks per cell
    live = verts >= 0
    lowest = np.where(live, verts, np.iinfo(np.int64).max).min(axis=1)
    pair_cells = _by_cell(grid.cell_of(X[lowest]), nc)
    s_idx, t_idx = np.nonzero(np.ones((4, 4), bool))

    def stage1(c):
        p = pair_cells[c]
        if p.size == 0:
            return np.zeros(0, np.int64), np.zeros((0, 9))
        vs = verts[p]
        ok = (vs[:, s_idx] >= 0) & (vs[:, t_idx] >= 0)
        pi, si = np.nonzero(ok)
        keys = vs[pi, s_idx[si]].astype(np.int64) * nv + vs[pi, t_idx[si]]
        vals = hess[p[pi], s_idx[si], t_idx[si]].reshape(-1, 9)
        return kernels.accumulate_keyed(keys, vals)

    vkeys, vblocks, merges1 = _merge(_run_cells(stage1, nc, workers))

    # stage 2: vertex-pair blocks bucketed by the cell of their first vertex
    va, vb = vkeys // nv, vkeys % nv
    indptr, indices, wdata = W.indptr, W.indices, W.data
    cnt = np.diff(indptr)
    if np.any(cnt[va] == 0) or np.any(cnt[vb] == 0):
        raise MappingError("contact vertex without interpolation weights")
    block_cells = _by_cell(grid.cell_of(X[va]), nc)

    def stage2(c):
        bi = block_cells[c]
        if bi.size == 0:
            return np.zeros(0, np.int64), np.zeros((0, 9))
        a, b = va[bi], vb[bi]
        na, nb = cnt[a], cnt[b]
        rep = na * nb
        blk = np.repeat(np.arange(bi.size), rep)
        local = np.arange(rep.sum()) - np.repeat(np.cumsum(rep) - rep, rep)
        ia = indptr[a][blk] + local // nb[blk]
        ib = indptr[b][blk] + local % nb[blk]
        w = wdata[ia] * wdata[ib]
        nz = w != 0
        row, col = indices[ia[nz]], indices[ib[nz]]
        keys = col.astype(np.int64) * n_ctrl + row
        vals = w[nz, None] * vblocks[bi[blk[nz]]]
        return kernels.accumulate_keyed(keys, vals)

    ckeys, cblocks, merges2 = _merge(_run_cells(stage2, nc, workers))
    if stats is not None:
        stats.pairs = k
        stats.vertex_blocks = vkeys.size
        stats.control_blocks = ckeys.size
        stats.cross_cell_merges = merges1 + merges2
    return BlockSparseMatrix.from_keys(n_ctrl, ckeys, cblocks.reshape(-1, 3, 3))


def contact_triplets(verts, hess, W: sp.csr_matrix):
    """Naive expansion: every weight product of every slot pair of every pair."""
    for p in range(verts.shape[0]):
        for s in range(4):
            if verts[p, s] < 0:
                continue
            ra = W.getrow(int(verts[p, s]))
            for t in range(4):
                if verts[p, t] < 0:
                    continue
                rb = W.getrow(int(verts[p, t]))
                for i, wi in zip(ra.indices, ra.data):
                    for j, wj in zip(rb.indices, rb.data):
                        yield i, j, wi * wj * hess[p, s, t]


def add_diagonal(M: BlockSparseMatrix, masses: np.ndarray, dt: float,
                 pinned: np.ndarray | None = None) -> BlockSparseMatrix:
    """Add ``m / dt^2`` to the diagonal blocks; pinned DOFs become identity rows and columns."""
    out = M.copy()
    diag = M.diag_positions()
    if np.any(diag < 0):
        raise AssemblyIndexError("skeleton lacks diagonal blocks")
    out.data[diag] += (np.asarray(masses) / dt**2)[:, None, None] * np.eye(3)
    if pinned is not None and np.any(pinned):
        apply_pins(out, pinned)
    return out


def apply_pins(M: BlockSparseMatrix, pinned: np.ndarray, diag_value: float = 1.0) -> None:
    pinned = np.asarray(pinned, bool)
    hit = pinned[M.indices] | pinned[M.col_of]
    M.data[hit] = 0.0
    d = M.find(np.flatnonzero(pinned), np.flatnonzero(pinned))
    M.data[d[d >= 0]] = diag_value * np.eye(3)


def export_matrix_market(M: BlockSparseMatrix, path) -> None:
    from scipy.io import mmwrite

    mmwrite(str(path), M.to_scipy().tocoo(), symmetry="general")
