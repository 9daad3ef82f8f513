import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bscloth import kernels
from bscloth.contact import dist_derivs

seeds = st.integers(0, 2**32 - 1)
BACKENDS = kernels.available_backends()
needs_both = pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled kernels not built")


def test_backend_selection(monkeypatch):
    assert kernels.get_backend("python").__name__.endswith("_pykernels")
    assert kernels.BACKEND in BACKENDS
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")
    monkeypatch.setenv("BSCLOTH_KERNELS", "python")
    assert kernels.get_backend() is kernels.get_backend("python")


@needs_both
@given(seeds)
def test_classifiers_agree(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(200, 4, 3))
    x[:20, 3] = x[:20, 2] + 1e-9 * rng.normal(size=(20, 3))  # near-degenerate and parallel cases
    x[20:40, 3] = x[20:40, 2] + (x[20:40, 1] - x[20:40, 0])
    py, cy = kernels.get_backend("python"), kernels.get_backend("cython")
    for fn in ("classify_pt", "classify_ee"):
        sq_p, c_p = getattr(py, fn)(*x.transpose(1, 0, 2))
        sq_c, c_c = getattr(cy, fn)(*np.ascontiguousarray(x.transpose(1, 0, 2)))
        np.testing.assert_allclose(sq_c, sq_p, rtol=1e-12, atol=1e-15)
        # codes may differ only at ties, where both closest features give the same distance
        diff = np.flatnonzero(c_p != c_c)
        if diff.size:
            dp, _, _ = dist_derivs(x[diff], c_p[diff])
            dc, _, _ = dist_derivs(x[diff], c_c[diff])
            np.testing.assert_allclose(dc, dp, rtol=1e-7, atol=1e-12)


@needs_both
@given(seeds, st.integers(1, 4))
def test_reductions_agree(seed, threads):
    rng = np.random.default_rng(seed)
    vals = rng.normal(size=(500, 9))
    order = rng.permutation(500)
    ptr = np.concatenate([[0], np.sort(rng.integers(0, 500, 40)), [500]])
    py, cy = kernels.get_backend("python"), kernels.get_backend("cython")
    a = py.segment_sum(vals, order, ptr, threads)
    b = cy.segment_sum(vals, order, ptr, threads)
    np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-13)
    ref = np.array([vals[order[ptr[i]:ptr[i + 1]]].sum(0) for i in range(ptr.size - 1)])
    np.testing.assert_allclose(a, ref, atol=1e-12)
    keys = rng.integers(0, 50, 300)
    k1, s1 = py.accumulate_keyed(keys, vals[:300])
    k2, s2 = cy.accumulate_keyed(keys, vals[:300])
    np.testing.assert_array_equal(k1, k2)
    np.testing.assert_allclose(s1, s2, atol=1e-13)


@pytest.mark.parametrize("name", BACKENDS)
def test_segment_sum_thread_invariance(name):
    k = kernels.get_backend(name)
    rng = np.random.default_rng(3)
    vals = rng.normal(size=(1000, 9))
    order = rng.permutation(1000)
    ptr = np.linspace(0, 1000, 101).astype(np.int64)
    assert k.segment_sum(vals, order, ptr, 1).tobytes() == k.segment_sum(vals, order, ptr, 4).tobytes()
