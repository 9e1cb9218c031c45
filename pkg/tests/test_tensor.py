"""Autodiff engine tests: finite-difference oracles, adjointness, bookkeeping."""

import numpy as np
import pytest

from calligan import (
    DimensionError,
    NumericsError,
    Tensor,
    UsageError,
    batchnorm,
    concat_channels,
    conv2d,
    conv_transpose2d,
    finite_diff_check,
    fully_connected,
    leaky_relu,
    relu,
    sigmoid,
)

FD_TOL = 1e-4


def t64(arr, requires_grad=True):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=requires_grad)


def rand64(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


# -- hand-checked values ------------------------------------------------------


def test_add_mul_backward_hand_values():
    a = t64([2.0, 3.0])
    b = t64([5.0, 7.0])
    out = (a * b + a).sum()
    out.backward()
    assert np.allclose(a.grad, [6.0, 8.0])  # b + 1
    assert np.allclose(b.grad, [2.0, 3.0])  # a


def test_mean_gradient_is_uniform():
    a = t64(np.arange(6.0).reshape(2, 3))
    a.mean().backward()
    assert np.allclose(a.grad, np.full((2, 3), 1.0 / 6.0))


def test_diamond_graph_accumulates_both_paths():
    # y = a*a + a  ->  dy/da = 2a + 1
    a = t64([3.0])
    y = (a * a + a).sum()
    y.backward()
    assert np.allclose(a.grad, [7.0])


def test_repeated_backward_accumulates():
    a = t64([1.5])
    y = (a * a).sum()
    y.backward()
    first = a.grad.copy()
    y.backward()
    assert np.allclose(a.grad, 2.0 * first)


def test_zero_grad_resets():
    a = t64([1.0, 2.0])
    a.sum().backward()
    a.zero_grad()
    assert a.grad is None


def test_backward_rejects_non_scalar():
    a = t64([[1.0, 2.0]])
    with pytest.raises(UsageError):
        (a * a).backward()


def test_detach_blocks_gradient():
    a = t64([2.0])
    y = (a.detach() * a).sum()
    y.backward()
    assert np.allclose(a.grad, [2.0])  # only the live branch contributes


def test_sigmoid_value_and_saturation():
    x = t64([0.0, 50.0, -50.0])
    y = sigmoid(x)
    assert np.allclose(y.data, [0.5, 1.0, 0.0], atol=1e-15)
    y.sum().backward()
    assert np.isfinite(x.grad).all()


def test_relu_and_leaky_relu_values():
    x = t64([-2.0, 0.0, 3.0])
    assert np.allclose(relu(x).data, [0.0, 0.0, 3.0])
    assert np.allclose(leaky_relu(x, 0.2).data, [-0.4, 0.0, 3.0])


def test_clamp_gradient_is_zero_outside():
    x = t64([-1.0, 0.5, 2.0])
    y = x.clamp(0.0, 1.0)
    y.sum().backward()
    assert np.allclose(y.data, [0.0, 0.5, 1.0])
    assert np.allclose(x.grad, [0.0, 1.0, 0.0])


def test_slice_gradient_scatter():
    x = t64(np.arange(12.0).reshape(3, 4))
    y = x[1:, :2].sum()
    y.backward()
    expect = np.zeros((3, 4))
    expect[1:, :2] = 1.0
    assert np.array_equal(x.grad, expect)


def test_nan_in_forward_raises():
    x = t64([-1.0])
    with pytest.raises(NumericsError):
        x.log()


def test_shape_mismatch_raises():
    with pytest.raises(DimensionError):
        t64([1.0, 2.0]) + t64([1.0, 2.0, 3.0])


# -- finite-difference oracles ------------------------------------------------


ELEMENTWISE_CASES = [
    ("mul_add", lambda a, b: ((a * b + a) * (a + 2.0)).mean(), 2),
    ("abs", lambda a: (a.abs() * a.abs()).mean(), 1),
    ("log", lambda a: (a.abs() + 0.5).log().mean(), 1),
    ("sqrt", lambda a: (a * a + 1.0).sqrt().mean(), 1),
    ("sigmoid", lambda a: sigmoid(a).mean(), 1),
    ("leaky_relu", lambda a: leaky_relu(a, 0.2).mean(), 1),
    ("reshape_slice", lambda a: a.reshape(2, 8)[:, 1:7].mean(), 1),
]


@pytest.mark.parametrize("name,f,arity", ELEMENTWISE_CASES, ids=[c[0] for c in ELEMENTWISE_CASES])
def test_elementwise_ops_match_finite_differences(name, f, arity):
    rng = np.random.default_rng(99)
    for _ in range(10):
        args = [rand64(rng, 4, 4) for _ in range(arity)]
        # keep away from relu/abs kinks where the derivative jumps
        for a in args:
            a.data[np.abs(a.data) < 0.05] += 0.1
        assert finite_diff_check(f, args) < FD_TOL


def test_conv2d_matches_finite_differences():
    rng = np.random.default_rng(7)
    for stride, pad in [(1, 0), (1, 2), (2, 2), (3, 1)]:
        x = rand64(rng, 2, 3, 8, 8)
        k = rand64(rng, 4, 3, 5, 5)
        b = rand64(rng, 4)
        f = lambda x_, k_, b_: conv2d(x_, k_, b_, stride=stride, padding=pad).mean()
        assert finite_diff_check(f, (x, k, b)) < FD_TOL


def test_conv_transpose2d_matches_finite_differences():
    rng = np.random.default_rng(8)
    for stride, pad, op in [(1, 0, 0), (2, 2, 1), (2, 1, 0), (3, 2, 2)]:
        x = rand64(rng, 2, 3, 4, 4)
        k = rand64(rng, 3, 2, 5, 5)
        b = rand64(rng, 2)
        f = lambda x_, k_, b_: conv_transpose2d(
            x_, k_, b_, stride=stride, padding=pad, output_padding=op).mean()
        assert finite_diff_check(f, (x, k, b)) < FD_TOL


def test_batchnorm_matches_finite_differences():
    rng = np.random.default_rng(9)
    x = rand64(rng, 3, 2, 4, 4)
    g = Tensor(rng.uniform(0.5, 1.5, 2), requires_grad=True)
    b = rand64(rng, 2)
    # fixed weighting keeps every coordinate's gradient well away from zero,
    # where finite-difference noise would swamp the comparison
    w = Tensor(rng.uniform(0.5, 1.5, (3, 2, 4, 4)))

    def f(x_, g_, b_):
        y = batchnorm(x_, g_, b_)
        return (y * y * w + y * w).sum()

    assert finite_diff_check(f, (x, g, b)) < FD_TOL


def test_batchnorm_inference_matches_finite_differences():
    rng = np.random.default_rng(10)
    x = rand64(rng, 2, 3, 4, 4)
    g = rand64(rng, 3)
    b = rand64(rng, 3)
    rm = rng.standard_normal(3)
    rv = rng.uniform(0.5, 2.0, 3)
    f = lambda x_, g_, b_: batchnorm(
        x_, g_, b_, training=False, running_mean=rm, running_var=rv).mean()
    assert finite_diff_check(f, (x, g, b)) < FD_TOL


def test_fully_connected_matches_finite_differences():
    rng = np.random.default_rng(11)
    x = rand64(rng, 3, 5)
    w = rand64(rng, 5, 2)
    b = rand64(rng, 2)
    f = lambda x_, w_, b_: sigmoid(fully_connected(x_, w_, b_)).mean()
    assert finite_diff_check(f, (x, w, b)) < FD_TOL


def test_concat_channels_matches_finite_differences():
    rng = np.random.default_rng(12)
    a = rand64(rng, 2, 2, 3, 3)
    b = rand64(rng, 2, 4, 3, 3)
    f = lambda a_, b_: (concat_channels(a_, b_) * concat_channels(a_, b_)).mean()
    assert finite_diff_check(f, (a, b)) < FD_TOL


# -- convolution semantics ----------------------------------------------------


def test_conv2d_identity_kernel():
    x = t64(np.arange(16.0).reshape(1, 1, 4, 4), requires_grad=False)
    k = np.zeros((1, 1, 3, 3))
    k[0, 0, 1, 1] = 1.0  # centered delta
    y = conv2d(x, t64(k, False), t64([0.0], False), stride=1, padding=1)
    assert np.array_equal(y.data, x.data)


def test_conv2d_output_shape_formula():
    x = Tensor(np.zeros((1, 1, 32, 32)))
    k = Tensor(np.zeros((4, 1, 5, 5)))
    b = Tensor(np.zeros(4))
    assert conv2d(x, k, b, stride=2, padding=2).shape == (1, 4, 16, 16)


def test_conv_transpose2d_output_shape_formula():
    x = Tensor(np.zeros((1, 4, 16, 16)))
    k = Tensor(np.zeros((4, 2, 5, 5)))
    b = Tensor(np.zeros(2))
    assert conv_transpose2d(x, k, b, stride=2, padding=2).shape == (1, 2, 31, 31)
    assert conv_transpose2d(x, k, b, stride=2, padding=2, output_padding=1).shape == (1, 2, 32, 32)


def test_conv_adjoint_identity():
    # <conv(x), y> == <x, conv_transpose(y)> with the shared kernel
    rng = np.random.default_rng(13)
    for _ in range(20):
        stride = int(rng.integers(1, 4))
        pad = int(rng.integers(0, 3))
        kh = int(rng.integers(1, 6))
        h = int(rng.integers(max(kh - 2 * pad, 1), 12))
        cin = int(rng.integers(1, 4))
        cout = int(rng.integers(1, 4))
        n = int(rng.integers(1, 3))
        x = rng.standard_normal((n, cin, h, h))
        k = rng.standard_normal((cout, cin, kh, kh))
        zero_out = Tensor(np.zeros(cout))
        zero_in = Tensor(np.zeros(cin))
        fx = conv2d(Tensor(x), Tensor(k), zero_out, stride=stride, padding=pad)
        y = rng.standard_normal(fx.shape)
        # adjoint direction: transpose kernel layout is [Cin=cout, Cout=cin]
        op = h - ((fx.shape[2] - 1) * stride - 2 * pad + kh)
        assert 0 <= op < stride or (stride == 1 and op == 0)
        bty = conv_transpose2d(Tensor(y), Tensor(np.transpose(k, (0, 1, 2, 3))), zero_in,
                               stride=stride, padding=pad, output_padding=op)
        lhs = float((fx.data * y).sum())
        rhs = float((x * bty.data).sum())
        scale = max(abs(lhs), abs(rhs), 1.0)
        assert abs(lhs - rhs) / scale < 1e-10


def test_batchnorm_normalizes_batch_statistics():
    rng = np.random.default_rng(14)
    x = Tensor(rng.standard_normal((4, 3, 8, 8)) * 5.0 + 2.0)
    y = batchnorm(x, Tensor(np.ones(3)), Tensor(np.zeros(3)))
    assert np.allclose(y.data.mean(axis=(0, 2, 3)), 0.0, atol=1e-6)
    assert np.allclose(y.data.var(axis=(0, 2, 3)), 1.0, atol=1e-3)


def test_batchnorm_running_stats_update():
    x = Tensor(np.full((2, 1, 2, 2), 4.0))
    rm = np.zeros(1)
    rv = np.ones(1)
    batchnorm(x, Tensor(np.ones(1)), Tensor(np.zeros(1)),
              running_mean=rm, running_var=rv, momentum=0.1)
    assert np.allclose(rm, [0.4])        # 0.9*0 + 0.1*4
    assert np.allclose(rv, [0.9])        # 0.9*1 + 0.1*0


def test_concat_channels_order():
    a = Tensor(np.ones((1, 2, 2, 2)))
    b = Tensor(np.zeros((1, 1, 2, 2)))
    y = concat_channels(a, b)
    assert y.shape == (1, 3, 2, 2)
    assert np.array_equal(y.data[:, :2], a.data)
    assert np.array_equal(y.data[:, 2:], b.data)


def test_forward_determinism():
    rng = np.random.default_rng(15)
    x = rng.standard_normal((2, 3, 8, 8))
    k = rng.standard_normal((4, 3, 5, 5))
    b = rng.standard_normal(4)
    r1 = conv2d(Tensor(x), Tensor(k), Tensor(b), stride=2, padding=2).data
    r2 = conv2d(Tensor(x), Tensor(k), Tensor(b), stride=2, padding=2).data
    assert np.array_equal(r1, r2)
