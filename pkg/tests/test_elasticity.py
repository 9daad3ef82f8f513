import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bscloth.checks import fd_gradient, fd_jacobian, rel_error
from bscloth.elasticity import (ElasticModel, IPState, MaterialParams, NonFiniteStateError,
                                bending_batch, bending_hessian_scalars, bending_local,
                                incremental_potential, membrane_batch, membrane_density,
                                membrane_F_derivs, membrane_invariants, membrane_local,
                                project_psd)
from bscloth.geometry import precompute_quadpoints
from bscloth.quadrature import build_bending_rule, build_membrane_rule
from bscloth.spline import KnotVector, SplineSheet

P = MaterialParams(2.0, 3.0, 1.5, 0.7)
I32 = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
seeds = st.integers(0, 2**32 - 1)


def model(n=6, params=P):
    sheet = SplineSheet.rectangle(n, n)
    qm = precompute_quadpoints(sheet, build_membrane_rule(sheet))
    qb = precompute_quadpoints(sheet, build_bending_rule(sheet))
    return sheet, ElasticModel(qm, qb, params, params, sheet.n_ctrl)


def test_material_params_validation_and_moduli():
    with pytest.raises(ValueError):
        MaterialParams(-1.0, 1.0, 1.0, 1.0)
    m = MaterialParams.from_moduli(1e-3, 1e5, E_shear=2e4, E_bend=1e6, poisson=0.3)
    assert m.mu_st1 == m.mu_st2 == pytest.approx(50.0)
    assert m.mu_sh == pytest.approx(10.0)
    assert m.mu_bd == pytest.approx(1e6 * 1e-9 / (12 * 0.91))
    assert MaterialParams.from_moduli(1e-3, 1e5, shear_ratio=0.5).mu_sh == pytest.approx(25.0)


def test_invariants_examples():
    np.testing.assert_allclose(membrane_invariants(I32), (1, 1, 0))
    g = 0.3
    F = np.array([[1, g], [0, 1], [0, 0]])
    np.testing.assert_allclose(membrane_invariants(F), (1, 1 + g**2, g))
    np.testing.assert_allclose(membrane_invariants(1.7 * I32), (1.7**2, 1.7**2, 0))


def test_density_examples():
    assert membrane_density(I32, P) == 0
    lam = 1.3
    F = np.diag([lam, 1.0, 0.0])[:, :2]
    assert membrane_density(F, P) == pytest.approx(P.mu_st1 * (lam - 1) ** 2)
    g = 0.4
    F = np.array([[1, g], [0, 1], [0, 0]])
    assert membrane_density(F, P) == pytest.approx(P.mu_sh * g**2 + P.mu_st2 * (np.sqrt(1 + g**2) - 1) ** 2)


@given(seeds)
def test_F_derivatives_vs_fd(seed):
    rng = np.random.default_rng(seed)
    F = I32 + 0.3 * rng.normal(size=(3, 2))
    psi, g, H, _ = membrane_F_derivs(F[None], P.mu_st1, P.mu_st2, P.mu_sh)
    f = lambda x: membrane_density(x.reshape(2, 3).T, P)  # noqa: E731
    x0 = F.T.ravel()
    gfd = fd_gradient(f, x0, 1e-6)
    np.testing.assert_allclose(g[0], gfd, atol=1e-6 * max(1, np.abs(gfd).max()))
    gradf = lambda x: membrane_F_derivs(x.reshape(2, 3).T[None], P.mu_st1, P.mu_st2, P.mu_sh)[1][0]  # noqa: E731
    assert rel_error(fd_jacobian(gradf, x0, 1e-6), H[0]) < 1e-6


def test_sqrt_clamp_flags_collapsed_columns():
    F = np.zeros((1, 3, 2))
    F[0, 0, 1] = 1.0
    psi, g, H, flagged = membrane_F_derivs(F, 1.0, 1.0, 1.0)
    assert flagged[0] and np.all(np.isfinite(g)) and np.all(np.isfinite(H))


@given(seeds)
def test_projection_is_psd_and_idempotent_on_psd(seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(5, 9, 9))
    A = A + A.transpose(0, 2, 1)
    P_ = project_psd(A)
    lam = np.linalg.eigvalsh(P_)
    assert lam.min() >= -1e-10 * np.abs(lam).max()
    np.testing.assert_allclose(P_, P_.transpose(0, 2, 1), atol=1e-12)
    np.testing.assert_allclose(project_psd(P_), P_, atol=1e-10)


def test_membrane_local_rest_and_fd(rng):
    sheet, _ = model()
    qps = precompute_quadpoints(sheet, build_membrane_rule(sheet))
    C0 = sheet.world_cp.reshape(-1, 3)
    for q in (0, 11, len(qps) - 1):
        qp = qps[q]
        loc = membrane_local(qp, C0, P)
        assert np.abs(loc.grad).max() < 1e-12
        assert np.linalg.eigvalsh(loc.hess).min() >= -1e-10 * np.abs(loc.hess).max()
        C = C0 + 0.05 * rng.normal(size=C0.shape)
        loc = membrane_local(qp, C, P, project=False)
        st_ = qp.stencil

        def e_of(x):
            Cx = C.copy()
            Cx[st_] = x.reshape(-1, 3)
            return membrane_local(qp, Cx, P).energy

        def g_of(x):
            Cx = C.copy()
            Cx[st_] = x.reshape(-1, 3)
            return membrane_local(qp, Cx, P).grad.ravel()

        x0 = C[st_].ravel()
        assert rel_error(fd_gradient(e_of, x0, 1e-6), loc.grad) < 1e-5
        assert rel_error(fd_jacobian(g_of, x0, 1e-6), loc.hess) < 1e-4
        np.testing.assert_allclose(loc.hess, loc.hess.T, atol=1e-12 * np.abs(loc.hess).max())
        proj = membrane_local(qp, C, P, project=True).hess
        lam = np.linalg.eigvalsh(proj)
        assert lam.min() >= -1e-10 * np.abs(lam).max()


def test_bending_local_examples(rng):
    sheet = SplineSheet.rectangle(7, 7)
    qb = precompute_quadpoints(sheet, build_bending_rule(sheet))
    C0 = sheet.world_cp.reshape(-1, 3)
    loc = bending_local(qb[3], C0, P)
    assert loc.energy < 1e-28 and np.abs(loc.grad).max() < 1e-14
    # quadratic bump z = (X1^2 + X2^2) / 2 on a unit sheet
    kv = KnotVector.open_uniform(7)
    t = kv.values
    c = np.array([t[i + 1] * t[i + 2] for i in range(7)]) / 25
    W = sheet.world_cp.copy()
    W[..., 2] = 0.5 * (c[:, None] + c[None, :])
    for q in (0, len(qb) - 1):
        loc = bending_local(qb[q], W.reshape(-1, 3), P)
        assert loc.energy == pytest.approx(qb.w[q] * 0.5 * P.mu_bd * 4, rel=1e-10)
    C = C0 + 0.1 * rng.normal(size=C0.shape)
    qp = qb[5]

    def g_of(x):
        Cx = C.copy()
        Cx[qp.stencil] = x.reshape(-1, 3)
        return bending_local(qp, Cx, P).grad.ravel()

    J = fd_jacobian(g_of, C[qp.stencil].ravel(), 1e-5)
    np.testing.assert_allclose(J, bending_local(qp, C, P).hess, atol=1e-7 * np.abs(J).max())


def test_bending_hessian_constant(rng):
    sheet, em = model()
    before = em.bend_scalars.copy()
    em.energy(sheet.world_cp.reshape(-1, 3) + rng.normal(size=(sheet.n_ctrl, 3)))
    assert before.tobytes() == em.bend_scalars.tobytes()
    assert before.tobytes() == bending_hessian_scalars(em.bending, P).tobytes()


@given(seeds)
def test_rigid_motion_invariance_and_nonnegativity(seed):
    rng = np.random.default_rng(seed)
    sheet, em = model(5)
    C = sheet.world_cp.reshape(-1, 3) + 0.05 * rng.normal(size=(sheet.n_ctrl, 3))
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    E = em.energy(C)
    E2 = em.energy(C @ q.T + rng.normal(size=3))
    assert abs(E2 - E) <= 1e-9 * E
    em_, _, _ = membrane_batch(em.membrane, C, P, hessian=False)
    eb, _ = bending_batch(em.bending, C, P)
    assert em_.min() >= 0 and eb.min() >= 0


def ip_state(n, rng, dt=1e-2, pinned=()):
    free = np.ones(n, bool)
    free[list(pinned)] = False
    return IPState(rng.normal(size=(n, 3)), dt, rng.uniform(0.5, 2, n), np.array([0, 0, -9.81]), free)


def test_ip_gradient_fd(rng):
    sheet, em = model(5)
    st_ = ip_state(sheet.n_ctrl, rng, pinned=(0, 3))
    C = sheet.world_cp.reshape(-1, 3) + 0.05 * rng.normal(size=(sheet.n_ctrl, 3))
    val, g = incremental_potential(st_, C, em)
    fd = fd_gradient(lambda x: incremental_potential(st_, x, em)[0], C, 1e-6)
    fd[~st_.free] = 0
    assert rel_error(fd, g) < 1e-5
    assert np.all(g[[0, 3]] == 0)


def test_ip_pure_inertia_minimizer(rng):
    n = 10
    st_ = ip_state(n, rng)
    st_.gravity = np.zeros(3)
    val, g = incremental_potential(st_, st_.x_hat)
    assert val == 0 and np.abs(g).max() == 0


def test_ip_large_dt_minimizer_is_rest_state():
    sheet, em = model(5)
    C0 = sheet.world_cp.reshape(-1, 3)
    st_ = IPState(C0 + 1.0, 1e8, np.ones(sheet.n_ctrl), np.zeros(3), np.ones(sheet.n_ctrl, bool))
    _, g = incremental_potential(st_, C0, em)
    assert np.abs(g).max() < 1e-12


def test_ip_non_finite():
    st_ = IPState(np.zeros((2, 3)), 1e-2, np.ones(2), np.zeros(3), np.ones(2, bool))
    with pytest.raises(NonFiniteStateError):
        incremental_potential(st_, np.array([[np.inf, 0, 0], [0, 0, 0]]))


def test_model_gradient_matches_batched_sum(rng):
    sheet, em = model(6)
    C = sheet.world_cp.reshape(-1, 3) + 0.05 * rng.normal(size=(sheet.n_ctrl, 3))
    fd = fd_gradient(em.energy, C, 1e-6)
    assert rel_error(fd, em.gradient(C)) < 1e-6
    em_, eb_ = em.energy_parts(C)
    assert em_ + eb_ == pytest.approx(em.energy(C))
