import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from retro import autodiff as ad
from retro.autodiff import Tensor, grad_check


def brute_correlate(x, w, b, stride, pad):
    """Scalar-loop cross-correlation, independent of the im2col path."""
    n, c, h, wd = x.shape
    k, _, kh, kw = w.shape
    xp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad))
    xp[:, :, pad : pad + h, pad : pad + wd] = x
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, k, ho, wo))
    for i in range(n):
        for o in range(k):
            for y in range(ho):
                for z in range(wo):
                    acc = b[o]
                    for ch in range(c):
                        for p in range(kh):
                            for q in range(kw):
                                acc += xp[i, ch, y * stride + p, z * stride + q] * w[o, ch, p, q]
                    out[i, o, y, z] = acc
    return out


# ---------------------------------------------------------------- conv2d


def test_conv_scaling_identity():
    out = ad.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor([[[[2.0]]]]), Tensor([0.0]))
    np.testing.assert_array_equal(out.data, np.full((1, 1, 3, 3), 2.0))


def test_conv_hand_correlation():
    x = Tensor(np.array([1.0, 2, 3, 4]).reshape(1, 1, 1, 4))
    w = Tensor(np.array([1.0, -1.0]).reshape(1, 1, 1, 2))
    out = ad.conv2d(x, w, Tensor([0.0]))
    np.testing.assert_array_equal(out.data.ravel(), [-1.0, -1.0, -1.0])


def test_conv_output_shape_formula():
    out = ad.conv2d(Tensor(np.zeros((2, 3, 8, 8))), Tensor(np.zeros((5, 3, 4, 4))), None, stride=2, pad=0)
    assert out.shape == (2, 5, 3, 3)


@pytest.mark.parametrize("stride,pad,k", [(1, 0, 3), (1, 1, 3), (2, 1, 4), (2, 0, 2), (1, 0, 1)])
def test_conv_matches_scalar_loops(stride, pad, k):
    rng = np.random.default_rng(stride * 10 + pad + k)
    x = rng.normal(size=(2, 3, 6, 5))
    w = rng.normal(size=(4, 3, k, k))
    b = rng.normal(size=4)
    out = ad.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, pad=pad)
    np.testing.assert_allclose(out.data, brute_correlate(x, w, b, stride, pad), rtol=0, atol=1e-12)


def test_conv_channel_mismatch():
    with pytest.raises(ad.ShapeError):
        ad.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 1, 1))))


def test_conv_identity_kernel_is_identity():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 3, 5, 5))
    eye = np.eye(3).reshape(3, 3, 1, 1)
    out = ad.conv2d(Tensor(x), Tensor(eye), Tensor(np.zeros(3)))
    np.testing.assert_array_equal(out.data, x)


# ---------------------------------------------------------------- upsample_conv


def test_upsample_single_pixel():
    out = ad.upsample_conv(Tensor([[[[5.0]]]]), Tensor([[[[1.0]]]]), Tensor([0.0]))
    np.testing.assert_array_equal(out.data, np.full((1, 1, 2, 2), 5.0))


def test_upsample_replicates_blocks():
    x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
    out = ad.upsample_conv(Tensor(x), Tensor([[[[1.0]]]]), None).data[0, 0]
    expected = np.array([[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]], dtype=float)
    np.testing.assert_array_equal(out, expected)


def test_upsample_then_average_recovers_input():
    out = ad.upsample_conv(Tensor([[[[0.7]]]]), Tensor(np.full((1, 1, 2, 2), 0.25)), Tensor([0.0]))
    assert out.shape == (1, 1, 1, 1)
    assert out.data.item() == pytest.approx(0.7, abs=1e-15)


# ---------------------------------------------------------------- leaky_relu


def test_leaky_relu_values():
    out = ad.leaky_relu(Tensor([-1.0, 0.0, 2.0]), 0.2)
    np.testing.assert_allclose(out.data, [-0.2, 0.0, 2.0])


def test_leaky_relu_slope_one_is_identity():
    x = np.random.default_rng(0).normal(size=20)
    np.testing.assert_array_equal(ad.leaky_relu(Tensor(x), 1.0).data, x)


def test_leaky_relu_gradient_matches_differences():
    for x0, expected in [(-1.0, 0.2), (2.0, 1.0)]:
        rep = grad_check(lambda t: ad.tsum(ad.leaky_relu(t, 0.2)), np.array([x0]))
        assert rep.passed
        assert rep.analytic[0] == pytest.approx(expected)


# ---------------------------------------------------------------- instance_norm


def _norm(x, gamma=1.0, beta=0.0, eps=1e-5):
    c = x.shape[1]
    return ad.instance_norm(Tensor(x), Tensor(np.full(c, gamma)), Tensor(np.full(c, beta)), eps).data


def test_instance_norm_constant_plane_is_zero():
    np.testing.assert_array_equal(_norm(np.full((1, 1, 2, 2), 3.0)), np.zeros((1, 1, 2, 2)))


def test_instance_norm_two_values():
    out = _norm(np.array([1.0, 3.0]).reshape(1, 1, 1, 2), eps=1e-14)
    np.testing.assert_allclose(out.ravel(), [-1.0, 1.0], atol=1e-12)


def test_instance_norm_gamma_zero_gives_beta():
    x = np.random.default_rng(1).normal(size=(2, 3, 4, 4))
    np.testing.assert_array_equal(_norm(x, gamma=0.0, beta=7.0), np.full(x.shape, 7.0))


def test_instance_norm_degenerate_plane():
    with pytest.raises(ad.ShapeError):
        _norm(np.zeros((1, 1, 1, 1)))


def test_instance_norm_plane_statistics():
    x = np.random.default_rng(2).normal(3.0, 2.0, size=(2, 3, 5, 5))
    out = _norm(x, eps=1e-12)
    np.testing.assert_allclose(out.mean(axis=(2, 3)), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.var(axis=(2, 3)), 1.0, atol=1e-9)


# ---------------------------------------------------------------- matmul


def test_matmul_identity():
    a = np.random.default_rng(0).normal(size=(3, 3))
    np.testing.assert_array_equal(ad.matmul(Tensor(np.eye(3)), Tensor(a)).data, a)


def test_matmul_hand():
    out = ad.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
    np.testing.assert_array_equal(out.data, [[3.0], [7.0]])


def test_matmul_transpose_property():
    rng = np.random.default_rng(5)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    lhs = ad.transpose(ad.matmul(Tensor(a), Tensor(b))).data
    # independent path: explicit loops over the transposed factors
    bt, at = b.T, a.T
    rhs = np.array([[sum(bt[i, k] * at[k, j] for k in range(4)) for j in range(3)] for i in range(2)])
    np.testing.assert_allclose(lhs, rhs, atol=1e-13)


def test_matmul_dim_mismatch():
    with pytest.raises(ad.ShapeError):
        ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


# ---------------------------------------------------------------- softmax_rows


def test_softmax_uniform_row():
    np.testing.assert_allclose(ad.softmax_rows(Tensor([[0.0, 0.0, 0.0]])).data, [[1 / 3] * 3], atol=1e-15)


def test_softmax_forced_by_mask():
    out = ad.softmax_rows(Tensor([[0.0, 0.0]]), np.array([[0.0, ad.MASK_BIAS]])).data
    assert out.tolist() == [[1.0, 0.0]]


def test_softmax_direct_formula():
    x = np.array([1.0, 2.0, 3.0])
    direct = np.exp(x) / np.exp(x).sum()
    np.testing.assert_allclose(ad.softmax_rows(Tensor(x[None])).data[0], direct, rtol=0, atol=1e-12)


def test_softmax_fully_masked_row():
    with pytest.raises(ad.FullyMaskedError):
        ad.softmax_rows(Tensor([[1.0, 2.0]]), np.full((1, 2), ad.MASK_BIAS))


@settings(max_examples=50, deadline=None)
@given(
    seed=st.integers(0, 10_000),
    rows=st.integers(1, 6),
    cols=st.integers(1, 9),
    scale=st.floats(0.1, 50.0),
)
def test_softmax_rows_sum_to_one_and_masked_zero(seed, rows, cols, scale):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(rows, cols)) * scale
    masked = rng.random((rows, cols)) < 0.4
    masked[np.arange(rows), rng.integers(0, cols, rows)] = False
    out = ad.softmax_rows(Tensor(x), np.where(masked, ad.MASK_BIAS, 0.0)).data
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-9)
    assert np.all(out[masked] == 0.0)


# ---------------------------------------------------------------- backward / tape


def test_backward_sum_gives_ones():
    x = Tensor(np.arange(4.0), requires_grad=True)
    ad.backward(ad.tsum(x))
    np.testing.assert_array_equal(x.grad, np.ones(4))


def test_backward_sum_of_squares():
    x = Tensor([1.0, 2.0], requires_grad=True)
    ad.backward(ad.tsum(x * x))
    np.testing.assert_array_equal(x.grad, [2.0, 4.0])


def test_backward_rejects_non_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ad.ContractError):
        ad.backward(x * 2.0)


def test_tape_visits_each_op_once_in_execution_order():
    x = Tensor([1.0, 2.0], requires_grad=True)
    y = x * x
    z = y + x
    loss = ad.tsum(z * y)
    tape = ad.Tape.from_loss(loss)
    seqs = [t._seq for t in tape.ops]
    assert seqs == sorted(seqs) and len(set(map(id, tape.ops))) == len(tape.ops)
    tape.backward(loss)
    # d/dx sum((x^2 + x) x^2) = 4x^3 + 3x^2
    np.testing.assert_allclose(x.grad, 4 * x.data**3 + 3 * x.data**2)
    assert all(leaf.grad is not None for leaf in tape.leaves())


def test_no_grad_builds_no_graph():
    x = Tensor([1.0], requires_grad=True)
    with ad.no_grad():
        y = x * 3.0
    assert not y.requires_grad and y._parents == ()


def test_forward_is_deterministic():
    rng = np.random.default_rng(9)
    x, w, b = rng.normal(size=(2, 3, 8, 8)), rng.normal(size=(4, 3, 3, 3)), rng.normal(size=4)
    a = ad.conv2d(Tensor(x), Tensor(w), Tensor(b), pad=1).data
    c = ad.conv2d(Tensor(x), Tensor(w), Tensor(b), pad=1).data
    assert a.tobytes() == c.tobytes()


def test_no_broadcast_between_tensors():
    with pytest.raises(ad.ShapeError):
        Tensor(np.zeros((2, 3))) + Tensor(np.zeros((3,)))


# ---------------------------------------------------------------- grad_check


def test_grad_check_sum_of_squares():
    rep = grad_check(lambda t: ad.tsum(t * t), np.random.default_rng(0).normal(size=6), tol=1e-6)
    assert rep.passed


def test_grad_check_catches_wrong_backward():
    def bad_square(t):
        return ad._make(t.data**2, (t,), lambda g: (g * t.data,), "bad")  # missing factor 2

    rep = grad_check(lambda t: ad.tsum(bad_square(t)), np.array([1.0, -2.0, 3.0]))
    assert not rep.passed


def test_grad_check_rejects_non_finite():
    with pytest.raises(ad.EvaluationError):
        grad_check(lambda t: ad.tsum(ad.log(t)), np.array([-1.0]))
