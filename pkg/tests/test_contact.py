import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import lsq_linear

from bscloth import kernels
from bscloth.checks import contact_world, fd_gradient, fd_jacobian, rel_error
from bscloth.contact import (BarrierDomainError, ContactModel, ContactPair, ContactParams,
                             InterpenetrationError, Plane, Sphere, barrier, barrier_chain, barrier_d1,
                             barrier_d2, barrier_local, ccd_max_step, collider_from_dict, dist_derivs,
                             pullback)
from bscloth.contact.broadphase import box_pairs, brute_force_pairs

seeds = st.integers(0, 2**32 - 1)


# -- barrier ----------------------------------------------------------------------


def test_barrier_hand_values():
    assert barrier(0.5, 1.0, 1.0) == pytest.approx(0.25 * np.log(2), rel=1e-14)
    assert barrier(1.0, 1.0, 1.0) == 0 and barrier_d1(1.0, 1.0, 1.0) == 0 and barrier_d2(1.0, 1.0, 1.0) == 0
    assert barrier(2.0, 1.0, 1.0) == 0
    assert barrier(1e-12, 1.0, 1.0) > barrier(1e-6, 1.0, 1.0) > barrier(1e-3, 1.0, 1.0)


def test_barrier_derivatives_fd():
    d = np.linspace(0.05, 0.95, 19)
    h = 1e-6
    np.testing.assert_allclose(barrier_d1(d, 1.0, 3.0),
                               (barrier(d + h, 1.0, 3.0) - barrier(d - h, 1.0, 3.0)) / (2 * h), rtol=1e-7)
    np.testing.assert_allclose(barrier_d2(d, 1.0, 3.0),
                               (barrier_d1(d + h, 1.0, 3.0) - barrier_d1(d - h, 1.0, 3.0)) / (2 * h), rtol=1e-6)
    # C2 at activation from below
    assert abs(barrier_d1(1 - 1e-7, 1.0, 1.0)) < 1e-12
    assert abs(barrier_d2(1 - 1e-7, 1.0, 1.0)) < 1e-5


def test_barrier_domain():
    z = np.zeros((1, 1, 3))
    with pytest.raises(BarrierDomainError):
        barrier_chain(np.array([0.0]), z, np.zeros((1, 1, 1, 3, 3)), 1.0, 1.0)
    with pytest.raises(BarrierDomainError):
        barrier_chain(np.array([1.0]), z, np.zeros((1, 1, 1, 3, 3)), 1.0, 1.0)
    with pytest.raises(ValueError):
        ContactParams(dhat=0.0)


# -- narrow phase against an independent constrained least-squares oracle ---------------


def seg_point_sq(p, e0, e1):
    r = lsq_linear((e1 - e0)[:, None], p - e0, bounds=(0, 1))
    return float(np.sum((e0 + r.x[0] * (e1 - e0) - p) ** 2))


def pt_oracle(p, a, b, c):
    A = np.stack([b - a, c - a], 1)
    st_, *_ = np.linalg.lstsq(A, p - a, rcond=None)
    if st_.min() >= 0 and st_.sum() <= 1:
        return float(np.sum((a + A @ st_ - p) ** 2))
    return min(seg_point_sq(p, a, b), seg_point_sq(p, b, c), seg_point_sq(p, c, a))


def ee_oracle(a0, a1, b0, b1):
    r = lsq_linear(np.stack([a1 - a0, -(b1 - b0)], 1), b0 - a0, bounds=(0, 1), tol=1e-14)
    s, t = r.x
    best = float(np.sum((a0 + s * (a1 - a0) - b0 - t * (b1 - b0)) ** 2))
    ends = [seg_point_sq(a0, b0, b1), seg_point_sq(a1, b0, b1), seg_point_sq(b0, a0, a1), seg_point_sq(b1, a0, a1)]
    return min(best, *ends)


@pytest.mark.parametrize("backend", kernels.available_backends())
@given(seeds)
@settings(max_examples=25)
def test_classify_matches_oracle(backend, seed):
    k = kernels.get_backend(backend)
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(30, 4, 3))
    x[:10, 0] = x[:10, 1] + 0.3 * rng.normal(size=(10, 3))  # some nearly-vertex cases
    sq, code = k.classify_pt(x[:, 0], x[:, 1], x[:, 2], x[:, 3])
    ref = [pt_oracle(*xi) for xi in x]
    np.testing.assert_allclose(sq, ref, rtol=1e-8, atol=1e-12)
    # distance formulas selected by the code agree with the classifier
    d, _, _ = dist_derivs(x, code)
    np.testing.assert_allclose(d**2, sq, rtol=1e-10, atol=1e-14)
    sq, code = k.classify_ee(x[:, 0], x[:, 1], x[:, 2], x[:, 3])
    ref = [ee_oracle(*xi) for xi in x]
    np.testing.assert_allclose(sq, ref, rtol=1e-6, atol=1e-12)
    d, _, _ = dist_derivs(x, code)
    np.testing.assert_allclose(d**2, sq, rtol=1e-10, atol=1e-14)


def test_parallel_edges_classified():
    a0, a1 = np.array([[0.0, 0, 0]]), np.array([[1.0, 0, 0]])
    b0, b1 = np.array([[0.5, 0.1, 0]]), np.array([[1.5, 0.1, 0]])
    for name in kernels.available_backends():
        sq, code = kernels.get_backend(name).classify_ee(a0, a1, b0, b1)
        assert sq[0] == pytest.approx(0.01)
        d, _, _ = dist_derivs(np.stack([a0, a1, b0, b1], 1), code)
        assert d[0] == pytest.approx(0.1)


# -- detection ------------------------------------------------------------------------


def test_parallel_sheets_beyond_dhat_no_pairs():
    w = contact_world(6, gap=2e-3, dhat=1e-3, mesh=10)
    assert len(w.contact.find_active_pairs(w.contact.vertices(w.C))) == 0


def test_vertex_above_plane():
    w = contact_world(5, gap=0.5, dhat=1e-3, mesh=4)
    m = w.contact
    X = m.vertices(w.C).copy()
    X[0, 2] -= 5e-3  # single vertex well below the rest
    m.colliders = [Plane([0, 0, X[0, 2] - 4e-4], [0, 0, 1])]
    pairs = m.find_active_pairs(X)
    assert len(pairs) == 1 and pairs.verts[0, 0] == 0
    assert pairs.dist[0] == pytest.approx(4e-4)
    assert pairs[0].kind == "vertex-plane"


def box_gap(alo, ahi, blo, bhi):
    """Distance between axis-aligned boxes, a lower bound on primitive distance."""
    gap = np.maximum(0, np.maximum(alo - bhi, blo - ahi))
    return np.linalg.norm(gap, axis=-1)


def brute_active(m: ContactModel, X, dhat):
    """All non-adjacent pairs by O(n^2) enumeration; exact oracle on pairs not ruled out by box distance."""
    tri, edges = m.triangles, m.edges
    nv = X.shape[0]
    v, t = np.meshgrid(np.arange(nv), np.arange(len(tri)), indexing="ij")
    v, t = v.ravel(), t.ravel()
    tx = X[tri]
    near = box_gap(X[v], X[v], tx.min(1)[t], tx.max(1)[t]) < dhat
    v, t = v[near], t[near]
    keep = np.all(tri[t] != v[:, None], axis=1)
    pt = np.concatenate([v[keep, None], tri[t[keep]]], 1)
    sq = np.array([pt_oracle(*X[r]) for r in pt])
    pt = pt[sq < dhat**2]
    ia, ib = np.triu_indices(len(edges), 1)
    ex = X[edges]
    elo, ehi = ex.min(1), ex.max(1)
    near = box_gap(elo[ia], ehi[ia], elo[ib], ehi[ib]) < dhat
    ea, eb = edges[ia[near]], edges[ib[near]]
    keep = (ea[:, :, None] != eb[:, None, :]).all(axis=(1, 2))
    ee = np.concatenate([ea[keep], eb[keep]], 1)
    sq = np.array([ee_oracle(*X[r]) for r in ee])
    ee = ee[sq < dhat**2]
    return {tuple(r) for r in pt}, {tuple(r) for r in ee}


def test_active_pairs_match_brute_force_oracle():
    w = contact_world(6, gap=6e-4, dhat=1e-3, mesh=9)  # 2 x 100 vertices
    m = w.contact
    X = m.vertices(w.C)
    assert X.shape[0] == 200
    pairs = m.find_active_pairs(X)
    got_pt = {tuple(r) for r in pairs.verts[pairs.kind == 0]}
    got_ee = {tuple(r) for r in pairs.verts[pairs.kind == 1]}
    ref_pt, ref_ee = brute_active(m, X, 1e-3)
    assert got_pt == ref_pt and got_ee == ref_ee
    assert len(ref_pt) > 0 and len(ref_ee) > 0
    assert np.all((pairs.dist > 0) & (pairs.dist < 1e-3))


def test_interpenetration_raises():
    w = contact_world(5, gap=6e-4, dhat=1e-3, mesh=4)
    X = w.contact.vertices(w.C)
    w.contact.colliders = [Plane([0, 0, 0.0], [0, 0, 1])]
    with pytest.raises(InterpenetrationError):
        w.contact.find_active_pairs(X)


@given(seeds)
def test_box_pairs_superset_of_overlaps(seed):
    rng = np.random.default_rng(seed)
    lo = rng.uniform(0, 1, (60, 3))
    hi = lo + rng.uniform(0, 0.2, (60, 3))
    lo2 = rng.uniform(0, 1, (40, 3))
    hi2 = lo2 + rng.uniform(0, 0.2, (40, 3))
    for cell in (0.05, 0.3):
        a, b = box_pairs(lo, hi, lo2, hi2, cell)
        ra, rb = brute_force_pairs(lo, hi, lo2, hi2)
        assert set(zip(a, b)) == set(zip(ra, rb))
        a, b = box_pairs(lo, hi, lo, hi, cell, symmetric=True)
        ra, rb = brute_force_pairs(lo, hi, lo, hi, symmetric=True)
        assert set(zip(a, b)) == set(zip(ra, rb))


def test_candidate_cache_reuse_is_exact(rng):
    w = contact_world(6, gap=6e-4, dhat=1e-3, mesh=10)
    m = w.contact
    X = m.vertices(w.C)
    first = m.find_active_pairs(X)
    X2 = X + 1e-5 * rng.normal(size=X.shape)
    cached = m.find_active_pairs(X2)
    m._cache = None
    fresh = m.find_active_pairs(X2)
    assert {tuple(r) for r in cached.verts} == {tuple(r) for r in fresh.verts}
    assert len(first) > 0


# -- local derivatives ----------------------------------------------------------------


def test_barrier_local_fd_and_psd(rng):
    prm = ContactParams(dhat=0.5, kappa=2.0)
    x = np.array([[0.2, 0.2, 0.3], [0, 0, 0], [1, 0, 0], [0, 1, 0]]) + 0.01 * rng.normal(size=(4, 3))
    _, code = kernels.classify_pt(x[:1], x[1:2], x[2:3], x[3:4])
    pair = ContactPair("vertex-triangle", np.arange(4), 0.0)

    def e(y):
        return barrier_local(pair, y, prm, code=int(code[0])).energy

    def g(y):
        return barrier_local(pair, y, prm, code=int(code[0]), project=False).grad

    loc = barrier_local(pair, x, prm, code=int(code[0]), project=False)
    assert rel_error(fd_gradient(e, x, 1e-7), loc.grad) < 1e-5
    assert rel_error(fd_jacobian(g, x, 1e-7), loc.hess) < 1e-4
    np.testing.assert_allclose(loc.hess, loc.hess.T, atol=1e-12 * np.abs(loc.hess).max())
    proj = barrier_local(pair, x, prm, code=int(code[0])).hess
    assert np.linalg.eigvalsh(proj).min() >= -1e-10 * np.abs(proj).max()


def test_barrier_local_collider(rng):
    prm = ContactParams(dhat=0.1, kappa=1.0)
    sphere = Sphere([0, 0, 0], 1.0)
    x = np.array([[0.0, 0.03, 1.05]])
    loc = barrier_local(ContactPair("vertex-sphere", np.array([0]), 0.0), x, prm, collider=sphere, project=False)
    e = lambda y: barrier_local(ContactPair("vertex-sphere", np.array([0]), 0.0), y, prm, collider=sphere).energy  # noqa: E731
    assert rel_error(fd_gradient(e, x, 1e-7), loc.grad) < 1e-5
    assert loc.distance == pytest.approx(np.linalg.norm(x) - 1.0)


def test_pullback_one_hot_is_relabeling(rng):
    verts = np.array([3, 1, 4, 0])
    target = np.array([7, 2, 5, 9, 0])  # vertex v sits on control point target[v]
    W = sp.csr_matrix((np.ones(5), (np.arange(5), target)), shape=(5, 10))
    g = rng.normal(size=(4, 3))
    H = rng.normal(size=(4, 4, 3, 3))
    loc = pullback(verts, g, H, W)
    cp = target[verts]
    order = np.argsort(cp)
    np.testing.assert_array_equal(loc.stencil, cp[order])
    np.testing.assert_allclose(loc.grad, g[order])
    Hd = H[np.ix_(order, order)].transpose(0, 2, 1, 3).reshape(12, 12)
    np.testing.assert_allclose(loc.hess, Hd)


def test_pullback_support_and_fd(rng):
    w = contact_world(5, gap=6e-4, dhat=1e-3, kappa=1.0, mesh=7)
    m = w.contact
    X = m.vertices(w.C)
    pairs = m.find_active_pairs(X)
    _, g, H = m.pair_derivs(X, pairs)
    pt = np.flatnonzero(pairs.kind == 0)
    assert pt.size
    loc = m.pullback(pairs.verts[pt[0]], g[pt[0]], H[pt[0]])
    assert loc.stencil.size <= 36
    C = w.C + 5e-5 * rng.normal(size=w.C.shape)
    _, grad = m.energy_grad(C)
    fd = fd_gradient(m.energy, C, 1e-8)
    assert rel_error(fd, grad) < 1e-5


# -- CCD ------------------------------------------------------------------------------


def test_ccd_zero_direction():
    w = contact_world(5, gap=6e-4, mesh=5)
    assert w.contact.max_step(w.C, np.zeros_like(w.C)) == 1.0


@pytest.mark.parametrize("g,s", [(0.1, 1.0), (0.02, 0.05), (1e-3, 10.0)])
def test_ccd_vertex_toward_plane(g, s):
    plane = Plane([0, 0, 0], [0, 0, 1])
    x = np.array([[0.3, 0.1, g]])
    p = np.array([[0.0, 0.0, -s]])
    t = plane.max_step(x, p, np.array([0.01 * g]))[0]
    if s > g:
        assert 0 < t < g / s
    assert plane.distance(x + t * p)[0] > 0
    assert plane.distance(x + t * p)[0] >= 0.01 * g - 1e-15


def test_ccd_sphere_root():
    sph = Sphere([0, 0, 0], 1.0)
    x = np.array([[0, 0, 1.5]])
    t = sph.max_step(x, np.array([[0, 0, -1.0]]), np.array([0.05]))[0]
    assert t == pytest.approx(0.45)


def test_ccd_symmetric_sheets_and_halving():
    w = contact_world(5, gap=6e-4, dhat=1e-3, mesh=6)
    n = w.n // 2
    P = np.zeros_like(w.C)
    P[:n, 2] = 5e-4
    P[n:, 2] = -5e-4  # they would meet at t = 0.6
    m = w.contact
    t = m.max_step(w.C, P)
    assert 0 < t < 0.6
    assert m.min_distance(w.C + t * P) > 0
    t2 = m.max_step(w.C, 0.5 * P)
    assert t2 >= min(1.0, 2 * t) * (1 - 1e-9)
    assert m.max_step(w.C, 1e-3 * P) == 1.0


def test_ccd_keeps_floor_for_every_pair(rng):
    w = contact_world(5, gap=6e-4, dhat=1e-3, mesh=6)
    m = w.contact
    P = 2e-3 * rng.normal(size=w.C.shape)
    t = m.max_step(w.C, P)
    X0, X1 = m.vertices(w.C), m.vertices(w.C + t * P)
    pt, ee = m._candidates(X0, 1e-2)
    from bscloth.contact.model import ee_distances, pt_distances
    for verts, fn in ((pt, pt_distances), (ee, ee_distances)):
        d0, _ = fn(X0, verts)
        d1, _ = fn(X1, verts)
        assert np.all(d1 >= 0.01 * d0 * (1 - 1e-9))


def test_ccd_zero_distance_raises():
    w = contact_world(5, gap=6e-4, mesh=4)
    m = w.contact
    m.colliders = [Plane([0, 0, 0.0], [0, 0, 1])]
    X = m.vertices(w.C)
    with pytest.raises(InterpenetrationError):
        ccd_max_step(X, np.ones_like(X), m)


def test_collider_from_dict():
    assert collider_from_dict({"type": "plane", "point": [0, 0, 0], "normal": [0, 0, 2]}).normal[2] == 1
    s = collider_from_dict({"type": "sphere", "center": [0, 0, 0], "radius": 0.5})
    assert s.distance(np.array([1.0, 0, 0])) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        collider_from_dict({"type": "cone"})
