import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from egocast import tensor as T
from egocast.gradcheck import NumericError, finite_diff_check
from egocast.nn import AttentionParams, multi_head_self_attention
from egocast.optim import AdamState, adam_step
from egocast.tensor import ConfigurationError, ContractError, DimensionError, Tensor

from oracles import attention_loops, matmul_loops, softmax_row

TOL = 1e-4
small = st.floats(-2.0, 2.0, allow_nan=False, allow_infinity=False)


def mat(rows, cols):
    return arrays(np.float64, (rows, cols), elements=small)


# --- matmul ---------------------------------------------------------------
def test_matmul_identity():
    b = np.array([[3.0, 4.0], [5.0, 6.0]])
    np.testing.assert_array_equal((Tensor(np.eye(2)) @ Tensor(b)).data, b)


def test_matmul_hand_product():
    out = T.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[5.0], [6.0]]))
    np.testing.assert_array_equal(out.data, [[17.0], [39.0]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError) as exc:
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    assert "(2, 3)" in str(exc.value) and str(exc.value).count("(2, 3)") == 2


@settings(max_examples=25, deadline=None)
@given(mat(3, 4), mat(4, 2))
def test_matmul_matches_loops(a, b):
    np.testing.assert_allclose(T.matmul(Tensor(a), Tensor(b)).data, matmul_loops(a, b), atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(mat(3, 4), mat(4, 2))
def test_matmul_gradients(a, b):
    assert finite_diff_check(lambda x: T.tsum(T.tanh(T.matmul(x, Tensor(b)))), a) < TOL
    assert finite_diff_check(lambda x: T.tsum(T.tanh(T.matmul(Tensor(a), x))), b) < TOL


# --- softmax --------------------------------------------------------------
def test_softmax_uniform():
    np.testing.assert_allclose(T.softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, atol=1e-15)


def test_softmax_closed_form():
    np.testing.assert_allclose(T.softmax(Tensor([0.0, math.log(3.0)])).data, [0.25, 0.75], atol=1e-15)


def test_softmax_large_logits_stable():
    out = T.softmax(Tensor([1000.0, 0.0])).data
    assert np.all(np.isfinite(out))
    assert out[0] == pytest.approx(1.0) and out[1] == pytest.approx(0.0, abs=1e-300)


def test_softmax_bad_axis():
    with pytest.raises(DimensionError):
        T.softmax(Tensor(np.zeros((2, 3))), axis=2)


@settings(max_examples=30, deadline=None)
@given(mat(3, 5), small)
def test_softmax_rows_sum_to_one_and_shift_invariant(x, c):
    s = T.softmax(Tensor(x), axis=-1).data
    np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-12)
    np.testing.assert_allclose(T.softmax(Tensor(x + c), axis=-1).data, s, atol=1e-12)
    for i in range(3):
        np.testing.assert_allclose(s[i], softmax_row(list(x[i])), atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(mat(3, 4), mat(3, 4))
def test_softmax_gradients(x, w):
    for axis in (0, 1):
        assert finite_diff_check(lambda t: T.tsum(T.softmax(t, axis=axis) * Tensor(w)), x) < TOL


# --- layer norm -----------------------------------------------------------
def test_layer_norm_constant_row():
    out = T.layer_norm(Tensor([1.0, 1.0, 1.0]), Tensor(np.ones(3)), Tensor(np.zeros(3)))
    np.testing.assert_allclose(out.data, 0.0, atol=1e-12)


def test_layer_norm_two_values():
    out = T.layer_norm(Tensor([0.0, 2.0]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-300)
    np.testing.assert_allclose(out.data, [-1.0, 1.0], atol=1e-12)


def test_layer_norm_affine_dominance():
    out = T.layer_norm(Tensor([0.0, 2.0]), Tensor(np.zeros(2)), Tensor([7.0, 7.0]))
    np.testing.assert_array_equal(out.data, [7.0, 7.0])


@settings(max_examples=25, deadline=None)
@given(mat(4, 6))
def test_layer_norm_standardizes(x):
    x = x + np.arange(6) * 0.5  # keep rows away from constant
    out = T.layer_norm(Tensor(x), Tensor(np.ones(6)), Tensor(np.zeros(6)), eps=1e-12).data
    np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-9)
    np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-9)


@settings(max_examples=20, deadline=None)
@given(mat(3, 5), arrays(np.float64, (5,), elements=small), arrays(np.float64, (5,), elements=small), mat(3, 5))
def test_layer_norm_gradients(x, g, b, w):
    x = x + np.arange(5) * 0.3
    gt, bt = Tensor(g), Tensor(b)
    assert finite_diff_check(lambda t: T.tsum(T.layer_norm(t, gt, bt) * Tensor(w)), x) < TOL
    assert finite_diff_check(lambda t: T.tsum(T.layer_norm(Tensor(x), t, bt) * Tensor(w)), g) < TOL
    assert finite_diff_check(lambda t: T.tsum(T.layer_norm(Tensor(x), gt, t) * Tensor(w)), b) < TOL


# --- attention ------------------------------------------------------------
def _params(d, rng):
    return [rng.normal(size=(d, d)) / math.sqrt(d) for _ in range(4)]


def test_attention_single_token():
    rng = np.random.default_rng(0)
    wq, wk, wv, wo = _params(4, rng)
    x = rng.normal(size=(1, 4))
    out = multi_head_self_attention(Tensor(x), AttentionParams(*map(Tensor, (wq, wk, wv, wo))), heads=2)
    np.testing.assert_allclose(out.data, x @ wv @ wo, atol=1e-14)


def test_attention_two_tokens_by_hand():
    # d=2, one head; identity q/k/v projections and a swap as output projection
    x = np.array([[1.0, 0.0], [0.0, 2.0]])
    eye = np.eye(2)
    swap = np.array([[0.0, 1.0], [1.0, 0.0]])
    out = multi_head_self_attention(Tensor(x), AttentionParams(Tensor(eye), Tensor(eye), Tensor(eye), Tensor(swap)), 1)
    # scores: token0 -> [1, 0]/sqrt2, token1 -> [0, 4]/sqrt2
    s = 1.0 / math.sqrt(2.0)
    a0 = [math.exp(s) / (math.exp(s) + 1.0), 1.0 / (math.exp(s) + 1.0)]
    a1 = [1.0 / (1.0 + math.exp(4 * s)), math.exp(4 * s) / (1.0 + math.exp(4 * s))]
    ctx0 = [a0[0] * 1.0, a0[1] * 2.0]
    ctx1 = [a1[0] * 1.0, a1[1] * 2.0]
    expected = np.array([[ctx0[1], ctx0[0]], [ctx1[1], ctx1[0]]])
    np.testing.assert_allclose(out.data, expected, atol=1e-14)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([1, 2, 4]))
def test_attention_matches_loops(seed, heads):
    rng = np.random.default_rng(seed)
    w = _params(4, rng)
    x = rng.normal(size=(5, 4))
    out = multi_head_self_attention(Tensor(x), AttentionParams(*map(Tensor, w)), heads)
    np.testing.assert_allclose(out.data, attention_loops(x, *w, heads), atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_attention_permutation_equivariant(seed):
    rng = np.random.default_rng(seed)
    params = AttentionParams(*map(Tensor, _params(4, rng)))
    x = rng.normal(size=(5, 4))
    perm = rng.permutation(5)
    a = multi_head_self_attention(Tensor(x), params, 2).data
    b = multi_head_self_attention(Tensor(x[perm]), params, 2).data
    np.testing.assert_allclose(b, a[perm], atol=1e-13)


def test_attention_heads_must_divide_width():
    p = AttentionParams(*(Tensor(np.eye(6)) for _ in range(4)))
    with pytest.raises(ConfigurationError):
        multi_head_self_attention(Tensor(np.ones((2, 6))), p, 4)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_attention_gradients(seed):
    rng = np.random.default_rng(seed)
    w = _params(4, rng)
    x = rng.normal(size=(3, 4))
    r = Tensor(rng.normal(size=(3, 4)))
    assert finite_diff_check(lambda t: T.tsum(multi_head_self_attention(t, AttentionParams(*map(Tensor, w)), 2) * r), x) < TOL
    for i in range(4):
        def f(t, i=i):
            ws = [Tensor(m) for m in w]
            ws[i] = t
            return T.tsum(multi_head_self_attention(Tensor(x), AttentionParams(*ws), 2) * r)
        assert finite_diff_check(f, w[i]) < TOL


# --- pooling and l1 -------------------------------------------------------
def test_mean_pool_examples():
    v = np.array([1.5, -2.0, 3.0])
    np.testing.assert_array_equal(T.mean_pool_tokens(Tensor(np.tile(v, (4, 1)))).data, v)
    np.testing.assert_array_equal(T.mean_pool_tokens(Tensor([[1.0, 3.0], [3.0, 5.0]])).data, [2.0, 4.0])
    np.testing.assert_array_equal(T.mean_pool_tokens(Tensor([[7.0, 8.0]])).data, [7.0, 8.0])


def test_mean_pool_empty():
    with pytest.raises(ContractError):
        T.mean_pool_tokens(Tensor(np.zeros((0, 3))))


@settings(max_examples=20, deadline=None)
@given(mat(4, 3), arrays(np.float64, (3,), elements=small))
def test_mean_pool_gradients(x, w):
    assert finite_diff_check(lambda t: T.tsum(T.tanh(T.mean_pool_tokens(t)) * Tensor(w)), x) < TOL


def test_l1_examples():
    assert T.l1_loss(Tensor([1.0, 2.0]), Tensor([1.0, 2.0])).item() == 0.0
    assert T.l1_loss(Tensor([1.0, 2.0]), Tensor([0.0, 0.0])).item() == 1.5
    x = Tensor([3.0], requires_grad=True)
    T.tsum(T.tabs(x)).backward()
    assert x.grad[0] == 1.0


def test_l1_tie_subgradient_zero():
    x = Tensor([0.5, 1.0], requires_grad=True)
    T.l1_loss(x, Tensor([0.5, 0.0])).backward()
    np.testing.assert_array_equal(x.grad, [0.0, 0.5])


def test_l1_shape_mismatch():
    with pytest.raises(DimensionError):
        T.l1_loss(Tensor(np.zeros(3)), Tensor(np.zeros(4)))


@settings(max_examples=25, deadline=None)
@given(mat(3, 4), mat(3, 4))
def test_l1_gradients_away_from_ties(x, y):
    mask = np.abs(x - y) > 1e-3
    assert finite_diff_check(lambda t: T.l1_loss(t, Tensor(y)), x, mask=mask) < TOL


# --- remaining elementwise / structural ops -------------------------------
@settings(max_examples=20, deadline=None)
@given(mat(3, 4), mat(1, 4), mat(3, 4))
def test_elementwise_gradients(x, b, w):
    wt = Tensor(w)
    pos = np.abs(x) + 0.5
    checks = [
        (lambda t: T.tsum((t + Tensor(b)) * wt), x),
        (lambda t: T.tsum((Tensor(x) + t) * wt), b),
        (lambda t: T.tsum((t - Tensor(b)) * wt), x),
        (lambda t: T.tsum((Tensor(x) - t) * wt), b),
        (lambda t: T.tsum(t * t * wt), x),
        (lambda t: T.tsum(Tensor(x) * t * wt), b),
        (lambda t: T.tsum(Tensor(w) / t), pos),
        (lambda t: T.tsum(t / Tensor(pos)), x),
        (lambda t: T.tsum(T.sqrt(t) * wt), pos),
        (lambda t: T.tsum(T.tanh(t) * wt), x),
        (lambda t: T.tsum(T.gelu(t) * wt), x),
        (lambda t: T.tsum(T.reshape(t, (4, 3)) * Tensor(w.reshape(4, 3))), x),
        (lambda t: T.tsum(T.transpose(t) * Tensor(w.T)), x),
        (lambda t: T.tsum(t[1:, ::2] * Tensor(w[1:, ::2])), x),
        (lambda t: T.tsum(t[[0, 0, 2]] * Tensor(w[:3])), x),
        (lambda t: T.tsum(T.concat([t, Tensor(x)], axis=0) * Tensor(np.vstack([w, w]))), x),
        (lambda t: T.tsum(T.tsum(t, axis=0) * Tensor(w[0])), x),
        (lambda t: T.tsum(T.mean(t, axis=1) * Tensor(w[:, 0])), x),
    ]
    for f, arg in checks:
        assert finite_diff_check(f, arg) < TOL


# --- backward -------------------------------------------------------------
def test_backward_sum_gives_ones():
    x = Tensor(np.random.default_rng(1).normal(size=(2, 3, 4)), requires_grad=True)
    T.tsum(x).backward()
    np.testing.assert_array_equal(x.grad, np.ones((2, 3, 4)))


def test_backward_product_rule():
    x, y = Tensor(2.0, requires_grad=True), Tensor(3.0, requires_grad=True)
    (x * y).backward()
    assert x.grad == 3.0 and y.grad == 2.0


def test_backward_accumulates():
    x = Tensor([1.0, 2.0], requires_grad=True)
    T.tsum(x * x).backward()
    T.tsum(x * x).backward()
    np.testing.assert_array_equal(x.grad, [4.0, 8.0])
    T.zero_grad([x])
    assert x.grad is None


def test_backward_non_scalar():
    with pytest.raises(ContractError):
        (Tensor([1.0, 2.0], requires_grad=True) * 2.0).backward()


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_backward_three_layer_composite(seed):
    rng = np.random.default_rng(seed)
    w1, w2, w3 = rng.normal(size=(4, 6)), rng.normal(size=(6, 5)), rng.normal(size=(5, 1))
    x = rng.normal(size=(3, 4))

    def f(t):
        h = T.gelu(T.matmul(t, Tensor(w1)))
        h = T.tanh(T.matmul(h, Tensor(w2)))
        return T.mean(T.matmul(h, Tensor(w3)))

    assert finite_diff_check(f, x) < TOL


# --- adam -----------------------------------------------------------------
def test_adam_one_step():
    p = Tensor([1.0], requires_grad=True)
    p.grad = np.array([1.0])
    state = AdamState(lr=0.1)
    adam_step({"p": p}, state)
    assert p.data[0] == pytest.approx(0.9, abs=1e-7)
    assert state.t == 1


def test_adam_zero_gradient_is_noop():
    p = Tensor(np.array([0.3, -1.2]), requires_grad=True)
    p.grad = np.zeros(2)
    adam_step({"p": p}, AdamState(lr=0.1))
    np.testing.assert_array_equal(p.data, [0.3, -1.2])


def test_adam_identical_sets_identical_updates():
    rng = np.random.default_rng(3)
    init, grads = rng.normal(size=(3, 2)), rng.normal(size=(3, 3, 2))
    results = []
    for _ in range(2):
        p = Tensor(init.copy(), requires_grad=True)
        st_ = AdamState(lr=0.01)
        for g in grads:
            p.grad = g.copy()
            adam_step({"w": p}, st_)
        results.append(p.data.copy())
        assert st_.t == 3 and st_.m["w"].shape == init.shape
    np.testing.assert_array_equal(results[0], results[1])


def test_adam_missing_gradient_names_parameter():
    with pytest.raises(ContractError, match="encoder.w"):
        adam_step({"encoder.w": Tensor([1.0], requires_grad=True)}, AdamState())


# --- finite_diff_check itself ---------------------------------------------
def test_fd_sum_of_squares():
    assert finite_diff_check(lambda t: T.tsum(t * t), np.array([1.0, 2.0]), eps=1e-5) < 1e-6


def test_fd_linear_exact():
    a = np.array([0.5, -2.0, 3.0])
    assert finite_diff_check(lambda t: T.tsum(t * Tensor(a)), np.array([1.0, 2.0, -1.0])) < 1e-9


def test_fd_l1_kink_needs_mask():
    # first coordinate lies within eps of a tie, where central differences straddle the kink
    x, y = np.array([0.2 + 3e-6, 1.0]), np.array([0.2, 0.0])
    f = lambda t: T.l1_loss(t, Tensor(y))  # noqa: E731
    assert finite_diff_check(f, x) > TOL
    assert finite_diff_check(f, x, mask=np.array([False, True])) < 1e-9


@pytest.mark.filterwarnings("ignore:invalid value")
def test_fd_non_finite():
    with pytest.raises(NumericError):
        finite_diff_check(lambda t: T.tsum(T.sqrt(t)), np.array([-1.0]))
