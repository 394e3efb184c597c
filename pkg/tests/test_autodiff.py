import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from partcom import autodiff as ad
from partcom.autodiff import Tensor

from oracles import naive_matmul


def leaf(shape, rng, low=-1.0, high=1.0):
    return Tensor(rng.uniform(low, high, size=shape), requires_grad=True)


def fd_error(fn, param, h=1e-5):
    (g,) = ad.gradients(fn(), [param])
    return ad.relative_error(g, ad.numerical_gradient(fn, param, h))


# -- matmul -----------------------------------------------------------------

def test_matmul_identity():
    out = ad.matmul(Tensor(np.eye(2)), Tensor([[3.0], [4.0]]))
    np.testing.assert_array_equal(out.data, [[3.0], [4.0]])


def test_matmul_hand_arithmetic():
    assert ad.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).data.tolist() == [[11.0]]


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ad.ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_gradient_is_ones_times_bt():
    rng = np.random.default_rng(0)
    A, B = leaf((3, 4), rng), leaf((4, 2), rng)
    fn = lambda: ad.tsum(ad.matmul(A, B))
    gA, gB = ad.gradients(fn(), [A, B])
    np.testing.assert_allclose(gA, np.ones((3, 2)) @ B.data.T, atol=1e-15)
    assert ad.relative_error(gA, ad.numerical_gradient(fn, A)) <= 1e-6
    assert ad.relative_error(gB, ad.numerical_gradient(fn, B)) <= 1e-6


def test_matmul_matches_naive_oracle():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(5, 7)), rng.normal(size=(7, 3))
    np.testing.assert_allclose(ad.matmul(Tensor(a), Tensor(b)).data, naive_matmul(a, b), atol=1e-12)


def test_batched_matmul_gradients():
    rng = np.random.default_rng(2)
    A, B = leaf((2, 3, 4), rng), leaf((4, 5), rng)
    fn = lambda: ad.tsum(ad.mul(ad.matmul(A, B), ad.matmul(A, B)))
    assert fd_error(fn, A) <= 1e-6
    assert fd_error(fn, B) <= 1e-6


# -- softmax ----------------------------------------------------------------

def test_softmax_columns_symmetric_column():
    np.testing.assert_allclose(ad.softmax_columns(Tensor([[0.0], [0.0]])).data, [[0.5], [0.5]])


def test_softmax_columns_analytic():
    out = ad.softmax_columns(Tensor([[np.log(1.0)], [np.log(3.0)]])).data
    np.testing.assert_allclose(out, [[0.25], [0.75]], atol=1e-15)


def test_softmax_columns_gradient():
    rng = np.random.default_rng(3)
    X = leaf((5, 3), rng)
    w = rng.normal(size=(5, 3))
    assert fd_error(lambda: ad.tsum(ad.mul(ad.softmax_columns(X), w)), X) <= 1e-6


def test_softmax_rejects_non_finite():
    with pytest.raises(ad.NonFiniteError):
        ad.softmax_columns(Tensor([[np.nan], [0.0]]))


def test_softmax_large_logits_stable():
    out = ad.softmax_columns(Tensor([[1000.0], [0.0]])).data
    assert np.all(np.isfinite(out)) and out[0, 0] == 1.0


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)),
              elements=st.floats(-50, 50, allow_nan=False)))
def test_softmax_columns_sum_to_one(x):
    out = ad.softmax_columns(Tensor(x)).data
    np.testing.assert_allclose(out.sum(axis=0), 1.0, atol=1e-9)


# -- cosine -----------------------------------------------------------------

def test_cosine_self_similarity():
    assert ad.cosine_similarity(Tensor([3.0, -2.0, 1.0]), Tensor([3.0, -2.0, 1.0])).item() == pytest.approx(1.0)


def test_cosine_orthogonal():
    assert ad.cosine_similarity(Tensor([1.0, 0.0]), Tensor([0.0, 1.0])).item() == 0.0


def test_cosine_analytic():
    assert ad.cosine_similarity(Tensor([1.0, 1.0]), Tensor([1.0, 0.0])).item() == pytest.approx(1 / np.sqrt(2), abs=1e-12)


def test_cosine_degenerate_vector():
    with pytest.raises(ad.DegenerateVectorError):
        ad.cosine_similarity(Tensor([0.0, 0.0]), Tensor([1.0, 0.0]))
    with pytest.raises(ad.DegenerateVectorError):
        ad.cosine_similarity(Tensor([1e-13, 0.0]), Tensor([1.0, 0.0]))


def test_cosine_gradient():
    rng = np.random.default_rng(4)
    a, b = leaf((1, 6), rng), leaf((1, 6), rng)
    fn = lambda: ad.cosine_similarity(a, b)
    assert fd_error(fn, a) <= 1e-6
    assert fd_error(fn, b) <= 1e-6


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, 4, elements=st.floats(-10, 10)), arrays(np.float64, 4, elements=st.floats(-10, 10)))
def test_cosine_bounded(a, b):
    if np.linalg.norm(a) < 1e-6 or np.linalg.norm(b) < 1e-6:
        return
    v = ad.cosine_similarity(Tensor(a), Tensor(b)).item()
    assert -1.0 - 1e-12 <= v <= 1.0 + 1e-12


def test_smooth_normalize_keeps_zero_rows_finite():
    x = leaf((3, 4), np.random.default_rng(5))
    x.data[1] = 0.0
    out = ad.l2_normalize(x, eps=1e-8)
    assert np.all(np.isfinite(out.data)) and np.all(out.data[1] == 0.0)
    assert fd_error(lambda: ad.tsum(ad.mul(ad.l2_normalize(x, eps=1e-3), x)), x) <= 1e-6


# -- backward ---------------------------------------------------------------

def test_backward_sum_gives_ones():
    x = Tensor(np.arange(4.0).reshape(2, 2), requires_grad=True)
    ad.tsum(x).backward()
    np.testing.assert_array_equal(x.grad, np.ones((2, 2)))


def test_backward_squared_norm_gives_2x():
    rng = np.random.default_rng(6)
    x = leaf((5,), rng)
    ad.squared_norm(x).backward()
    np.testing.assert_allclose(x.grad, 2 * x.data)


def test_backward_rejects_non_scalar_root():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        ad.mul(x, x).backward()


def test_unreachable_leaf_gets_zero_gradient():
    x, y = Tensor(np.ones(3), requires_grad=True), Tensor(np.ones(2), requires_grad=True)
    gx, gy = ad.gradients(ad.tsum(x), [x, y])
    np.testing.assert_array_equal(gy, np.zeros(2))
    np.testing.assert_array_equal(gx, np.ones(3))


def test_detach_blocks_gradient_exactly():
    x = leaf((4,), np.random.default_rng(7))
    root = ad.tsum(ad.mul(ad.detach(x), x))
    (g,) = ad.gradients(root, [x])
    np.testing.assert_array_equal(g, x.data)  # only the live branch contributes
    (g2,) = ad.gradients(ad.tsum(ad.detach(x)), [x])
    assert np.all(g2 == 0.0)


def test_shared_subexpression_accumulates():
    x = leaf((3,), np.random.default_rng(8))
    y = ad.mul(x, x)
    fn = lambda: ad.tsum(ad.add(ad.mul(x, x), ad.exp(ad.mul(x, x))))
    assert fd_error(fn, x) <= 1e-6
    assert y.shape == (3,)


def test_item_requires_single_element():
    with pytest.raises(ValueError):
        Tensor(np.ones(2)).item()


# -- every primitive against finite differences ------------------------------

def _primitive_cases(rng):
    a, b = leaf((3, 4), rng), leaf((3, 4), rng)
    pos = leaf((3, 4), rng, 0.5, 2.0)
    row = leaf((1, 4), rng)
    w, bias = leaf((4, 2), rng), leaf((2,), rng)
    other = leaf((3, 2), rng)
    r = rng.normal(size=(3, 4))
    r6, r3 = rng.normal(size=(3, 6)), rng.normal(size=(3, 3))
    return {
        "add_broadcast": (lambda: ad.tsum(ad.mul(ad.add(a, row), r)), [a, row]),
        "sub": (lambda: ad.tsum(ad.mul(ad.sub(a, b), r)), [a, b]),
        "mul": (lambda: ad.tsum(ad.mul(a, b)), [a, b]),
        "div": (lambda: ad.tsum(ad.div(a, pos)), [a, pos]),
        "scale": (lambda: ad.tsum(ad.mul(ad.scale(a, -2.5), r)), [a]),
        "relu": (lambda: ad.tsum(ad.mul(ad.relu(a), r)), [a]),
        "exp": (lambda: ad.tsum(ad.exp(a)), [a]),
        "log": (lambda: ad.tsum(ad.log(pos)), [pos]),
        "sqrt": (lambda: ad.tsum(ad.sqrt(pos)), [pos]),
        "reshape_transpose": (lambda: ad.tsum(ad.mul(ad.transpose(ad.reshape(a, (4, 3))), r)), [a]),
        "getitem": (lambda: ad.tsum(ad.mul(a[np.array([0, 2, 2])], r[:3])), [a]),
        "concat": (lambda: ad.tsum(ad.mul(ad.concat([a, other], axis=-1), r6)), [a, other]),
        "mean_axis": (lambda: ad.tsum(ad.mul(ad.mean(a, axis=0), r[0])), [a]),
        "tmax": (lambda: ad.tsum(ad.mul(ad.tmax(a, axis=1), r[:, 0])), [a]),
        "logsumexp": (lambda: ad.tsum(ad.logsumexp(a, axis=1)), [a]),
        "affine": (lambda: ad.tsum(ad.mul(ad.affine(a, w, bias), other)), [a, w, bias]),
        "log_softmax": (lambda: ad.tsum(ad.mul(ad.log_softmax(a, axis=-1), r)), [a]),
        "squared_distance": (lambda: ad.tsum(ad.squared_distance(a, b)), [a, b]),
        "cosine_matrix": (lambda: ad.tsum(ad.mul(ad.cosine_matrix(a, b), r3)), [a, b]),
    }


def _far_from_kinks(case, params):
    # relu and tmax are piecewise linear; keep inputs away from the switch points
    for p in params:
        if case == "relu":
            p.data[np.abs(p.data) < 1e-3] = 0.1
        if case == "tmax":
            p.data += np.arange(p.data.shape[-1]) * 1e-2


@pytest.mark.parametrize("case", sorted(_primitive_cases(np.random.default_rng(0))))
def test_primitive_gradients(case):
    rng = np.random.default_rng(zlib.crc32(case.encode()))
    fn, params = _primitive_cases(rng)[case]
    _far_from_kinks(case, params)
    for p in params:
        assert fd_error(fn, p) <= 1e-6, case


def test_log_rejects_non_positive():
    with pytest.raises(ad.NonFiniteError):
        ad.log(Tensor([1.0, 0.0]))
