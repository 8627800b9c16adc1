"""Autodiff core: forward values against numpy/loop oracles, graph semantics."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualformer import precision
from dualformer.tensor import (
    GraphError,
    ShapeError,
    Tensor,
    add,
    add_bias,
    concat,
    constant,
    div,
    gather_segments,
    gelu,
    graph_records,
    matmul,
    mul,
    narrow,
    no_grad,
    reshape,
    segment_sum,
    select_index,
    sigmoid,
    softmax,
    sub,
    tanh,
    texp,
    tlog,
    tmean,
    transpose,
    tsqrt,
    tsum,
)


def rng(seed=0):
    return np.random.default_rng(seed)


# -- construction ------------------------------------------------------------


def test_default_dtype_is_f32():
    assert constant([1.0, 2.0]).dtype == np.float32


def test_storage_is_contiguous():
    base = np.arange(12, dtype=np.float32).reshape(3, 4)
    t = Tensor(base[:, ::2])
    assert t.data.flags["C_CONTIGUOUS"]


def test_precision_context_switches_dtype():
    with precision.precision("f64"):
        assert constant([1.0]).dtype == np.float64
    assert constant([1.0]).dtype == np.float32


# -- elementwise forward -----------------------------------------------------


def test_matmul_frozen_2x2():
    a = constant([[1.0, 2.0], [3.0, 4.0]])
    b = constant([[5.0, 6.0], [7.0, 8.0]])
    assert np.array_equal(matmul(a, b).data, [[19.0, 22.0], [43.0, 50.0]])


def test_matmul_against_loop_oracle():
    r = rng(1)
    with precision.precision("f64"):
        for _ in range(20):
            n, k, m = r.integers(1, 6, size=3)
            a = r.normal(size=(n, k))
            b = r.normal(size=(k, m))
            want = np.zeros((n, m))
            for i in range(n):
                for j in range(m):
                    for q in range(k):
                        want[i, j] += a[i, q] * b[q, j]
            got = matmul(constant(a), constant(b)).data
            assert np.allclose(got, want, atol=1e-12)


def test_matmul_batched_matches_numpy():
    r = rng(2)
    a = r.normal(size=(3, 2, 4)).astype(np.float32)
    b = r.normal(size=(3, 4, 5)).astype(np.float32)
    got = matmul(constant(a), constant(b)).data
    assert np.allclose(got, a @ b, atol=1e-6)


def test_matmul_inner_dim_mismatch():
    with pytest.raises(ShapeError):
        matmul(constant(np.ones((2, 3))), constant(np.ones((4, 2))))


@pytest.mark.parametrize(
    "op,ref",
    [
        (texp, np.exp),
        (tanh, np.tanh),
        (tsqrt, np.sqrt),
        (sigmoid, lambda x: 1.0 / (1.0 + np.exp(-x))),
    ],
)
def test_unary_matches_numpy(op, ref):
    x = rng(3).normal(size=(4, 5)).astype(np.float64)
    if op is tsqrt:
        x = np.abs(x) + 0.1
    with precision.precision("f64"):
        assert np.allclose(op(constant(x)).data, ref(x), atol=1e-12)


def test_log_matches_numpy():
    x = np.abs(rng(4).normal(size=(3, 3))) + 0.5
    with precision.precision("f64"):
        assert np.allclose(tlog(constant(x)).data, np.log(x), atol=1e-12)


def test_gelu_matches_tanh_form():
    x = rng(5).normal(size=(64,)).astype(np.float64)
    c = np.sqrt(2.0 / np.pi)
    want = 0.5 * x * (1.0 + np.tanh(c * (x + 0.044715 * x**3)))
    with precision.precision("f64"):
        assert np.allclose(gelu(constant(x)).data, want, atol=1e-12)


def test_sigmoid_extreme_inputs_stay_finite():
    x = constant([-500.0, 500.0])
    out = sigmoid(x).data
    assert np.all(np.isfinite(out))
    assert out[0] == pytest.approx(0.0, abs=1e-30)
    assert out[1] == pytest.approx(1.0)


# -- guarded ops ---------------------------------------------------------


def test_div_by_zero_raises():
    with pytest.raises(FloatingPointError):
        div(constant([1.0]), constant([0.0]))


def test_log_of_negative_raises():
    with pytest.raises(FloatingPointError):
        tlog(constant([-1.0]))


def test_sqrt_of_negative_raises():
    with pytest.raises(FloatingPointError):
        tsqrt(constant([-1.0]))


def test_exp_overflow_raises():
    with pytest.raises(FloatingPointError):
        texp(constant([1000.0]))


# -- broadcasting rules ------------------------------------------------------


def test_broadcast_equal_shapes_and_scalar():
    a = constant(np.ones((2, 3)))
    assert add(a, a).shape == (2, 3)
    assert add(a, 2.0).shape == (2, 3)
    assert mul(3.0, a).shape == (2, 3)


def test_broadcast_size_one_axes_same_rank():
    a = constant(np.ones((2, 1, 3)))
    b = constant(np.ones((1, 4, 3)))
    assert add(a, b).shape == (2, 4, 3)


def test_broadcast_rank_promotion_rejected():
    with pytest.raises(ShapeError):
        add(constant(np.ones((2, 3))), constant(np.ones(3)))


def test_broadcast_incompatible_sizes_rejected():
    with pytest.raises(ShapeError):
        add(constant(np.ones((2, 3))), constant(np.ones((2, 4))))


def test_mixed_dtypes_rejected():
    a = constant(np.ones(3), dtype=np.float32)
    b = constant(np.ones(3), dtype=np.float64)
    with pytest.raises(TypeError):
        add(a, b)


def test_add_bias_matches_reshape_oracle():
    r = rng(6)
    x = r.normal(size=(2, 5, 3)).astype(np.float32)
    b = r.normal(size=5).astype(np.float32)
    got = add_bias(constant(x), constant(b), axis=1).data
    assert np.allclose(got, x + b.reshape(1, 5, 1), atol=1e-7)


# -- reductions and shape ops -------------------------------------------------


def test_sum_mean_axes_match_numpy():
    x = rng(7).normal(size=(2, 3, 4)).astype(np.float64)
    with precision.precision("f64"):
        t = constant(x)
        assert np.allclose(tsum(t).data, x.sum())
        assert np.allclose(tsum(t, axis=1).data, x.sum(axis=1))
        assert np.allclose(tsum(t, axis=(0, 2), keepdims=True).data,
                           x.sum(axis=(0, 2), keepdims=True))
        assert np.allclose(tmean(t, axis=(1, 2)).data, x.mean(axis=(1, 2)))


def test_reshape_transpose_concat_narrow_values():
    x = np.arange(24, dtype=np.float32).reshape(2, 3, 4)
    t = constant(x)
    assert np.array_equal(reshape(t, (6, 4)).data, x.reshape(6, 4))
    assert np.array_equal(transpose(t, (2, 0, 1)).data, x.transpose(2, 0, 1))
    assert np.array_equal(narrow(t, 2, 1, 2).data, x[:, :, 1:3])
    cat = concat([t, t], axis=1)
    assert np.array_equal(cat.data, np.concatenate([x, x], axis=1))


def test_narrow_out_of_range():
    with pytest.raises(ShapeError):
        narrow(constant(np.ones((2, 3))), 1, 2, 5)


# -- softmax -------------------------------------------------------------


def test_softmax_rows_sum_to_one_and_match_oracle():
    x = rng(8).normal(size=(5, 7)).astype(np.float64)
    with precision.precision("f64"):
        got = softmax(constant(x), axis=1).data
    want = np.empty_like(x)
    for i in range(x.shape[0]):
        e = np.exp(x[i] - x[i].max())
        want[i] = e / e.sum()
    assert np.allclose(got, want, atol=1e-12)
    assert np.allclose(got.sum(axis=1), 1.0, atol=1e-12)


def test_softmax_shift_invariance():
    x = rng(9).normal(size=(3, 4)).astype(np.float64)
    with precision.precision("f64"):
        a = softmax(constant(x), axis=-1).data
        b = softmax(constant(x + 100.0), axis=-1).data
    assert np.allclose(a, b, atol=1e-12)


def test_softmax_huge_logits_stay_finite():
    out = softmax(constant([[1000.0, 999.0]]), axis=-1).data
    assert np.all(np.isfinite(out))


# -- segment ops ---------------------------------------------------------


def test_segment_sum_matches_loop():
    r = rng(10)
    x = r.normal(size=(9, 4)).astype(np.float64)
    seg = r.integers(0, 5, size=9)
    with precision.precision("f64"):
        got = segment_sum(constant(x), seg, 5).data
    want = np.zeros((5, 4))
    for i, s in enumerate(seg):
        want[s] += x[i]
    assert np.allclose(got, want, atol=1e-12)


def test_segment_sum_batched_matches_loop():
    r = rng(11)
    x = r.normal(size=(2, 6, 3)).astype(np.float64)
    seg = r.integers(0, 4, size=(2, 6))
    with precision.precision("f64"):
        got = segment_sum(constant(x), seg, 4).data
    want = np.zeros((2, 4, 3))
    for b in range(2):
        for i in range(6):
            want[b, seg[b, i]] += x[b, i]
    assert np.allclose(got, want, atol=1e-12)


def test_gather_segments_matches_indexing():
    r = rng(12)
    table = r.normal(size=(4, 3)).astype(np.float32)
    seg = r.integers(0, 4, size=7)
    got = gather_segments(constant(table), seg).data
    assert np.array_equal(got, table[seg])


def test_select_index_picks_labels():
    x = constant([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    got = select_index(x, np.array([2, 0])).data
    assert np.array_equal(got, [3.0, 4.0])


# -- graph semantics -----------------------------------------------------


def test_backward_needs_scalar():
    a = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(GraphError):
        mul(a, a).backward()


def test_backward_on_constant_graph_raises():
    with pytest.raises(GraphError):
        tsum(constant([1.0, 2.0])).backward()


def test_leaf_gradient_accumulates_across_backwards():
    a = Tensor(np.full((3,), 2.0), requires_grad=True)
    tsum(mul(a, a)).backward()
    first = a.grad.copy()
    tsum(mul(a, a)).backward()
    assert np.allclose(a.grad, 2.0 * first)
    a.zero_grad()
    assert a.grad is None


def test_no_grad_suppresses_graph():
    a = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        out = mul(a, a)
    assert out._node is None


def test_intermediate_tensors_do_not_hold_grads():
    a = Tensor(np.ones(3), requires_grad=True)
    mid = mul(a, a)
    tsum(mid).backward()
    assert mid.grad is None
    assert a.grad is not None


def test_graph_records_topological_order():
    a = Tensor(np.ones(2), requires_grad=True)
    out = tsum(mul(add(a, 1.0), a))
    recs = graph_records(out)
    names = [r[0] for r in recs]
    assert names.index("add") < names.index("mul") < names.index("sum")
    seen = set()
    for _, inputs, output in recs:
        seen.add(output)
    assert len(seen) == len(recs)  # one record per produced tensor


def test_chain_rule_frozen_value():
    # d/dx sum((x + 1) * x) at x=2 is 2x + 1 = 5
    a = Tensor(np.array([2.0]), requires_grad=True)
    tsum(mul(add(a, 1.0), a)).backward()
    assert a.grad[0] == pytest.approx(5.0)


def test_matmul_backward_frozen_value():
    # loss = sum(A @ B); dA = ones @ B^T, dB = A^T @ ones
    a = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]), requires_grad=True)
    b = Tensor(np.array([[5.0, 6.0], [7.0, 8.0]]), requires_grad=True)
    tsum(matmul(a, b)).backward()
    assert np.allclose(a.grad, np.ones((2, 2)) @ b.data.T)
    assert np.allclose(b.grad, a.data.T @ np.ones((2, 2)))


def test_operator_sugar_routes_through_ops():
    a = Tensor(np.full((2,), 3.0), requires_grad=True)
    out = (a + 1.0) * a - 2.0
    assert np.allclose(out.data, [10.0, 10.0])
    out = a / constant([2.0, 2.0])
    assert np.allclose(out.data, [1.5, 1.5])
    out = -a
    assert np.allclose(out.data, [-3.0, -3.0])


# -- property tests ------------------------------------------------------


@settings(max_examples=200, deadline=None)
@given(
    st.integers(1, 6), st.integers(1, 6),
    st.integers(0, 2**31 - 1),
)
def test_softmax_normalization_property(n, d, seed):
    x = np.random.default_rng(seed).normal(scale=5.0, size=(n, d))
    with precision.precision("f64"):
        out = softmax(constant(x), axis=-1).data
    assert np.all(out >= 0)
    assert np.allclose(out.sum(axis=-1), 1.0, atol=1e-9)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 20), st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_segment_sum_total_preserved(n, k, seed):
    r = np.random.default_rng(seed)
    x = r.normal(size=(n, 3))
    seg = r.integers(0, k, size=n)
    with precision.precision("f64"):
        out = segment_sum(constant(x), seg, k).data
    assert np.allclose(out.sum(axis=0), x.sum(axis=0), atol=1e-9)
