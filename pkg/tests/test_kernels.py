"""The compiled kernels and the numpy fallback must agree."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from factories import random_bank
from segsynth import kernels
from segsynth.retrieval import _rank, layout_queries

BACKENDS = kernels.available_backends()
needs_fast = pytest.mark.skipif("cython" not in BACKENDS, reason="compiled extension not built")


def test_selected_backend_is_listed():
    assert kernels.BACKEND in BACKENDS
    assert BACKENDS["python"].NAME == "python"


@needs_fast
@settings(max_examples=25)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_scan_topk_agrees(seed, k):
    rng = np.random.default_rng(seed)
    bank, pairs = random_bank(rng, max_segments=200)
    lay = pairs[int(rng.integers(len(pairs)))][1]
    for q in layout_queries(lay, 4, 1)[:6]:
        ex = "src000" if rng.random() < 0.5 else None
        a = _rank(q, bank, k, ex, BACKENDS["python"])
        b = _rank(q, bank, k, ex, BACKENDS["cython"])
        assert [m.segment_id for m in a] == [m.segment_id for m in b]
        assert [m.score for m in a] == [m.score for m in b]


@needs_fast
@given(st.integers(0, 2**32 - 1))
def test_bilinear_sample_agrees(seed):
    rng = np.random.default_rng(seed)
    h, w = rng.integers(1, 12, size=2)
    color = rng.uniform(0, 255, size=(h, w, 3))
    mask = (rng.random((h, w)) < 0.6).astype(np.float64)
    xs = rng.uniform(-2, w + 1, size=(7, 9))
    ys = rng.uniform(-2, h + 1, size=(7, 9))
    xs[0, :3] = [0, w - 1, -1]
    ca, ma = BACKENDS["python"].bilinear_sample(color, mask, xs, ys)
    cb, mb = BACKENDS["cython"].bilinear_sample(color, mask, xs, ys)
    np.testing.assert_allclose(ca, cb, rtol=1e-12, atol=1e-9)
    np.testing.assert_allclose(ma, mb, rtol=1e-12, atol=1e-12)


def _grid_problem(rng, h, w):
    missing = rng.random((h, w)) < 0.4
    missing[0, 0] = False
    active = np.flatnonzero(missing.ravel()).astype(np.int64)
    ys, xs = np.divmod(active, w)
    nbr = np.full((active.size, 4), -1, np.int64)
    for k, (dy, dx) in enumerate(((-1, 0), (1, 0), (0, -1), (0, 1))):
        yy, xx = ys + dy, xs + dx
        ok = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        nbr[ok, k] = (yy * w + xx)[ok]
    keep = (nbr >= 0).any(axis=1)
    return rng.uniform(0, 1, size=(h * w, 3)), active[keep], np.ascontiguousarray(nbr[keep])


@needs_fast
@given(st.integers(0, 2**32 - 1), st.integers(1, 50))
def test_jacobi_agrees(seed, iters):
    rng = np.random.default_rng(seed)
    vals, active, nbr = _grid_problem(rng, int(rng.integers(2, 15)), int(rng.integers(2, 15)))
    va, vb = vals.copy(), vals.copy()
    sa, ca = BACKENDS["python"].jacobi(va, active, nbr, 1e-6, iters)
    sb, cb = BACKENDS["cython"].jacobi(vb, active, nbr, 1e-6, iters)
    assert sa == sb
    assert ca == pytest.approx(cb, abs=1e-12)
    np.testing.assert_allclose(va, vb, atol=1e-12)


def test_empty_inputs():
    for mod in BACKENDS.values():
        assert mod.jacobi(np.zeros((4, 3)), np.zeros(0, np.int64), np.zeros((0, 4), np.int64), 0.0, 5)[0] == 0
