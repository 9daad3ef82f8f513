import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bscloth.spline import (DomainError, KnotVector, SplineSheet, basis_table, eval_basis_1d,
                            eval_basis_derivs_1d, eval_basis_order, eval_surface, greville,
                            sample_embedded_mesh)

n_ctrl = st.integers(3, 12)


def interior_knots():
    # knots (0,0,0,1,2,3,...): span [1,2) is uniform on both sides
    return KnotVector.open_uniform(6)


def test_knot_vector_open_uniform():
    kv = KnotVector.open_uniform(5)
    np.testing.assert_array_equal(kv.values, [0, 0, 0, 1, 2, 3, 3, 3])
    assert kv.n_ctrl == 5 and kv.n_spans == 3


@pytest.mark.parametrize("bad", [[0, 0, 1, 2, 2, 2], [0, 0, 0, 2, 1, 3, 3, 3], [0, 0, 0, 1, 1, 1, 2]])
def test_knot_vector_rejects_invalid(bad):
    with pytest.raises(ValueError):
        KnotVector(np.array(bad, float))


def test_zeroth_order_indicator():
    kv = KnotVector.open_uniform(6)
    assert eval_basis_order(kv, 3, 0, 1.5) == 1.0
    assert eval_basis_order(kv, 4, 0, 1.5) == 0.0
    assert eval_basis_order(kv, 3, 0, 1.0) == 1.0  # half-open on the left


def test_span_midpoint_values():
    kv = interior_knots()
    vals = [eval_basis_1d(kv, i, 1.5) for i in range(kv.n_ctrl)]
    np.testing.assert_allclose(vals, [0, 1 / 8, 3 / 4, 1 / 8, 0, 0], atol=1e-15)


def test_interior_knot_values():
    kv = interior_knots()
    vals = np.array([eval_basis_1d(kv, i, 2.0) for i in range(kv.n_ctrl)])
    nz = np.flatnonzero(vals > 0)
    assert nz.size == 2
    np.testing.assert_allclose(vals[nz], [0.5, 0.5], atol=1e-15)


def test_domain_errors():
    kv = KnotVector.open_uniform(4)
    with pytest.raises(DomainError):
        eval_basis_1d(kv, 0, -0.1)
    with pytest.raises(DomainError):
        eval_basis_1d(kv, 0, 2.5)
    with pytest.raises(DomainError):
        eval_basis_1d(kv, 4, 1.0)
    with pytest.raises(DomainError):
        eval_basis_1d(kv, 0, np.nan)


def test_d1_matches_fd():
    kv = KnotVector.open_uniform(7)
    h = 1e-5
    for xi in np.linspace(0.05, 4.95, 37):
        for i in range(kv.n_ctrl):
            fd = (eval_basis_1d(kv, i, xi + h) - eval_basis_1d(kv, i, xi - h)) / (2 * h)
            assert abs(eval_basis_derivs_1d(kv, i, xi)[1] - fd) < 1e-6


def test_d2_pattern_on_uniform_span():
    kv = interior_knots()
    for xi in (2.1, 2.5, 2.9):
        d2 = [eval_basis_derivs_1d(kv, i, xi)[2] for i in (2, 3, 4)]
        np.testing.assert_allclose(d2, [1, -2, 1], atol=1e-14)


def test_c1_at_interior_knots():
    kv = KnotVector.open_uniform(7)
    eps = 1e-9
    for knot in range(1, kv.n_spans):
        left = basis_table(kv, [knot - eps])[1, 0]
        right = basis_table(kv, [knot + eps])[1, 0]
        np.testing.assert_allclose(left, right, atol=1e-7)
        exact = basis_table(kv, [float(knot)])[1, 0]
        np.testing.assert_allclose(exact, right, atol=1e-8)


@given(n_ctrl, st.lists(st.floats(0, 1), min_size=1, max_size=50))
def test_partition_of_unity_and_nonnegativity(n, fracs):
    kv = KnotVector.open_uniform(n)
    x = np.array(fracs) * kv.end
    tab = basis_table(kv, x)
    np.testing.assert_allclose(tab[0].sum(1), 1.0, atol=1e-12)
    np.testing.assert_allclose(tab[1].sum(1), 0.0, atol=1e-11)
    assert tab[0].min() >= 0
    assert ((tab[0] > 0).sum(1) <= 3).all()


@given(n_ctrl, st.floats(0, 1))
def test_table_matches_recursive_reference(n, frac):
    kv = KnotVector.open_uniform(n)
    xi = frac * kv.end
    ref = [eval_basis_order(kv, i, 2, xi) for i in range(n)]
    np.testing.assert_allclose(basis_table(kv, [xi])[0, 0], ref, atol=1e-14)


def test_tensor_partition_of_unity(rng):
    sheet = SplineSheet.rectangle(5, 7)
    u = rng.uniform(0, 3, 1000)
    v = rng.uniform(0, 5, 1000)
    tb = sheet.tensor_basis(u, v)
    np.testing.assert_allclose(tb.N.sum(1), 1.0, atol=1e-12)


def test_surface_constant_and_corners(rng):
    sheet = SplineSheet.rectangle(4, 5)
    W = rng.normal(size=sheet.world_cp.shape)
    sheet.world_cp = W
    for u, v, (i, j) in [(0, 0, (0, 0)), (2, 0, (-1, 0)), (0, 3, (0, -1)), (2, 3, (-1, -1))]:
        np.testing.assert_array_equal(eval_surface(sheet, "world", u, v), W[i, j])
    sheet.world_cp = np.broadcast_to([1.0, -2.0, 3.0], W.shape).copy()
    np.testing.assert_allclose(eval_surface(sheet, "world", rng.uniform(0, 2, 9), rng.uniform(0, 3, 9)),
                               np.tile([1.0, -2.0, 3.0], (9, 1)), atol=1e-14)


def test_surface_reproduces_affine_map(rng):
    sheet = SplineSheet.rectangle(6, 5, size=(2.0, 1.5))
    A = rng.normal(size=(3, 2))
    b = rng.normal(size=3)
    sheet.world_cp = sheet.material_cp @ A.T + b
    u, v = rng.uniform(0, 4, 20), rng.uniform(0, 3, 20)
    X = eval_surface(sheet, "material", u, v)
    np.testing.assert_allclose(eval_surface(sheet, "world", u, v), X @ A.T + b, atol=1e-12)


def test_surface_reproduces_quadratic(rng):
    # spline fit of f(u) = u^2: control values from the dual functionals of quadratic B-splines
    kv = KnotVector.open_uniform(6)
    t = kv.values
    coef = np.array([t[i + 1] * t[i + 2] for i in range(kv.n_ctrl)])
    x = rng.uniform(0, kv.end, 200)
    np.testing.assert_allclose(basis_table(kv, x)[0] @ coef, x**2, atol=1e-10)


def test_surface_domain_error():
    sheet = SplineSheet.rectangle(4, 4)
    with pytest.raises(DomainError):
        eval_surface(sheet, "world", 2.5, 0.0)


def test_greville_abscissae():
    np.testing.assert_allclose(greville(KnotVector.open_uniform(5)), [0, 0.5, 1.5, 2.5, 3])


def test_embedded_mesh_counts_and_weights(rng):
    sheet = SplineSheet.rectangle(5, 6)
    m1 = sample_embedded_mesh(sheet, (1, 1))
    assert m1.n_vertices == 4 and m1.triangles.shape == (2, 3)
    sheet.world_cp = sheet.world_cp + 0.1 * rng.normal(size=sheet.world_cp.shape)
    mesh = sample_embedded_mesh(sheet, (7, 9))
    assert mesh.n_vertices == 80 and mesh.triangles.shape[0] == 2 * 7 * 9
    assert ((mesh.weight_value != 0).sum(1) <= 9).all()
    np.testing.assert_allclose(mesh.weight_value.sum(1), 1.0, atol=1e-14)
    X = mesh.positions(sheet.world_cp)
    ref = eval_surface(sheet, "world", mesh.uv[:, 0], mesh.uv[:, 1])
    np.testing.assert_allclose(X, ref, atol=1e-14)
    W = mesh.interpolation_matrix()
    np.testing.assert_allclose(W @ sheet.world_cp.reshape(-1, 3), X, atol=1e-14)


def test_embedded_mesh_alternating_diagonals():
    mesh = sample_embedded_mesh(SplineSheet.rectangle(4, 4), (2, 2))
    # each cell is split along one diagonal; neighbours use the other one
    diag = []
    for a in range(2):
        for b in range(2):
            c = 2 * (a * 2 + b)
            shared = set(mesh.triangles[c]) & set(mesh.triangles[c + 1])
            diag.append(tuple(sorted(shared)))
    v = lambda a, b: a * 3 + b  # noqa: E731
    assert diag[0] == (v(0, 0), v(1, 1))
    assert diag[1] == (v(0, 2), v(1, 1))
    assert mesh.edges().shape[0] == 16


def test_embedded_mesh_rejects_bad_resolution():
    with pytest.raises(ValueError):
        sample_embedded_mesh(SplineSheet.rectangle(4, 4), (0, 3))
