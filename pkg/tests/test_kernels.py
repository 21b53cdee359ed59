import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from excursion_kit import _fallback, kernels

core = pytest.importorskip("excursion_kit._core")

finite = st.floats(-5, 5, allow_nan=False)


@given(st.integers(1, 40), st.integers(1, 4), st.integers(0, 2 ** 31))
def test_logistic_terms_backends_agree(n, d, seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    y = (rng.random(n) < 0.5).astype(float)
    w = rng.random(n)
    beta = rng.normal(0, 3, d)
    a = _fallback.logistic_terms(X, y, w, beta, 0.1)
    b = core.logistic_terms(X, y, w, beta, 0.1)
    assert a[0] == pytest.approx(b[0], rel=1e-12, abs=1e-12)
    np.testing.assert_allclose(a[1], b[1], rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(a[2], b[2], rtol=1e-10, atol=1e-12)


@given(arrays(float, st.integers(0, 30), elements=st.floats(0.1, 3)), st.data())
def test_grouped_kernels_agree(values, data):
    n = values.size
    cuts = sorted(data.draw(st.lists(st.integers(0, n), max_size=5)))
    starts = np.array([0] + cuts + [n], dtype=np.int64)
    np.testing.assert_allclose(_fallback.grouped_cumprod(values, starts), core.grouped_cumprod(values, starts))
    np.testing.assert_allclose(_fallback.group_sums(values, starts), core.group_sums(values, starts), atol=1e-12)


@given(arrays(float, st.integers(0, 30), elements=finite), finite, finite)
def test_clamp_agrees(values, lo, hi):
    lo, hi = min(lo, hi), max(lo, hi)
    a, na = _fallback.clamp(values, lo, hi)
    b, nb = core.clamp(values, lo, hi)
    np.testing.assert_array_equal(a, b)
    assert na == nb == int(np.sum((values < lo) | (values > hi)))


def test_backend_switch_round_trip():
    prev = kernels.use_backend("python")
    try:
        assert kernels.BACKEND == "python"
        out, _ = kernels.clamp([0.0, 5.0], 1.0, 2.0)
        np.testing.assert_array_equal(out, [1.0, 2.0])
    finally:
        kernels.use_backend(prev)
    with pytest.raises(ValueError):
        kernels.use_backend("fortran")


def test_compiled_backend_selected_by_default():
    assert kernels.BACKEND == "cython"
