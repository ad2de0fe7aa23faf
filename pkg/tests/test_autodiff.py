import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from evhdr.autodiff import Mlp, finite_diff_check, mlp_backward, mlp_forward, positional_encode


def _ref_forward(net, x):
    # plain loop re-implementation used as an oracle
    acts = {"identity": lambda z: z, "relu": lambda z: max(z, 0.0),
            "sigmoid": lambda z: 1.0 / (1.0 + np.exp(-z)), "tanh": np.tanh,
            "softplus": lambda z: np.log1p(np.exp(z))}
    h = list(x)
    layers = list(net.layers())
    for i, (W, b) in enumerate(layers):
        act = acts[net.output_activation if i == len(layers) - 1 else net.hidden_activation]
        h = [act(sum(h[k] * W[k, j] for k in range(len(h))) + b[j]) for j in range(W.shape[1])]
    return np.array(h)


def test_encode_zero():
    np.testing.assert_array_equal(positional_encode([0.0], 0), [0.0, 1.0])


def test_encode_half():
    np.testing.assert_allclose(positional_encode([0.5], 1), [1.0, 0.0, 0.0, -1.0], atol=1e-15)


def test_encode_matches_high_precision():
    mpmath.mp.dps = 40
    x = mpmath.mpf("0.3")
    expected = []
    for m in range(3):
        arg = 2 ** m * mpmath.pi * x
        expected += [float(mpmath.sin(arg)), float(mpmath.cos(arg))]
    np.testing.assert_allclose(positional_encode([0.3], 2), expected, rtol=0, atol=1e-15)


def test_encode_multi_coordinate_order():
    x = np.array([0.1, -0.7, 0.25])
    out = positional_encode(x, 3)
    assert out.shape == (2 * 4 * 3,)
    for m in range(4):
        for k in range(3):
            base = (m * 3 + k) * 2
            assert out[base] == pytest.approx(np.sin(2 ** m * np.pi * x[k]), abs=1e-15)
            assert out[base + 1] == pytest.approx(np.cos(2 ** m * np.pi * x[k]), abs=1e-15)


def test_encode_rejects_negative_levels():
    with pytest.raises(ValueError):
        positional_encode([0.0], -1)


@given(arrays(np.float64, st.integers(1, 5), elements=st.floats(-1e3, 1e3)), st.integers(0, 6))
def test_encode_bounded(x, m):
    out = positional_encode(x, m)
    assert out.shape == (2 * (m + 1) * x.size,)
    assert np.all(np.abs(out) <= 1.0)


def test_param_count():
    net = Mlp([3, 5, 2])
    assert net.n_params == 3 * 5 + 5 + 5 * 2 + 2
    assert net.weights.size + net.biases.size == net.n_params


def test_zero_net_gives_zero():
    net = Mlp([4, 6, 3])
    np.testing.assert_array_equal(mlp_forward(net, np.ones(4)), np.zeros(3))


def test_affine_unit():
    net = Mlp([1, 1], np.array([2.0, 1.0]))
    np.testing.assert_array_equal(mlp_forward(net, [3.0]), [7.0])


def test_affine_backward():
    w, b, x = 1.7, -0.4, 2.5
    net = Mlp([1, 1], np.array([w, b]))
    gin, gp = mlp_backward(net, [x], [1.0])
    np.testing.assert_allclose(gin, [w])
    np.testing.assert_allclose(gp, [x, 1.0])


@pytest.mark.parametrize("hidden", ["relu", "sigmoid", "tanh"])
@pytest.mark.parametrize("out", ["identity", "sigmoid", "softplus"])
def test_forward_matches_reference(hidden, out):
    rng = np.random.default_rng(3)
    net = Mlp.initialized([3, 4, 2], rng, hidden, out)
    net.params += rng.normal(scale=0.3, size=net.n_params)
    x = rng.normal(size=3)
    np.testing.assert_allclose(mlp_forward(net, x), _ref_forward(net, x), rtol=1e-13, atol=1e-14)


def test_dimension_mismatch_rejected():
    net = Mlp([3, 2])
    with pytest.raises(ValueError):
        mlp_forward(net, np.ones(4))
    with pytest.raises(ValueError):
        mlp_backward(net, np.ones(3), np.ones(3))


def test_zero_upstream_zero_grads():
    rng = np.random.default_rng(0)
    net = Mlp.initialized([2, 5, 3], rng, "tanh", "sigmoid")
    gin, gp = mlp_backward(net, rng.normal(size=2), np.zeros(3))
    assert not gin.any() and not gp.any()


@pytest.mark.parametrize("hidden", ["relu", "sigmoid", "tanh"])
@pytest.mark.parametrize("out", ["identity", "sigmoid", "softplus"])
def test_backward_matches_finite_differences(hidden, out):
    rng = np.random.default_rng(11)
    net = Mlp.initialized([3, 5, 4, 2], rng, hidden, out)
    net.params += rng.normal(scale=0.2, size=net.n_params)
    x = rng.normal(size=3)
    up = rng.normal(size=2)
    _, gp = mlp_backward(net, x, up)

    def loss(p):
        return float(up @ mlp_forward(Mlp(net.layer_widths, p, hidden, out), x))

    assert finite_diff_check(loss, net.params, 1e-5, gp) < 1e-5
    gin, _ = mlp_backward(net, x, up)
    err = finite_diff_check(lambda xx: float(up @ mlp_forward(net, xx)), x, 1e-5, gin)
    assert err < 1e-5


def test_relu_derivative_at_zero_is_zero():
    net = Mlp([1, 1, 1], np.array([1.0, 0.0, 1.0, 0.0]), "relu", "identity")
    gin, gp = mlp_backward(net, [0.0], [1.0])
    assert gin[0] == 0.0
    assert gp[0] == 0.0 and gp[1] == 0.0


def test_batch_gradient_is_sum_of_samples():
    rng = np.random.default_rng(5)
    net = Mlp.initialized([4, 8, 3], rng, "tanh", "softplus")
    x = rng.normal(size=(7, 4))
    up = rng.normal(size=(7, 3))
    _, batched = mlp_backward(net, x, up)
    total = sum(mlp_backward(net, x[i], up[i])[1] for i in range(7))
    np.testing.assert_allclose(batched, total, rtol=0, atol=1e-10)


def test_forward_deterministic():
    net = Mlp.initialized([3, 4, 2], 7, "sigmoid", "identity")
    x = np.array([0.2, -0.1, 0.4])
    assert np.array_equal(mlp_forward(net, x), mlp_forward(net, x))


def test_init_bounds_and_seed():
    a = Mlp.initialized([10, 20, 5], 42)
    b = Mlp.initialized([10, 20, 5], 42)
    assert np.array_equal(a.params, b.params)
    for (ws, bs, w_in, w_out) in a.layer_slices():
        lim = np.sqrt(6.0 / (w_in + w_out))
        assert np.all(np.abs(a.params[ws]) <= lim)
        assert not a.params[bs].any()


def test_fd_quadratic():
    p = np.array([0.3, -1.2, 2.0])
    assert finite_diff_check(lambda q: (float(q @ q), 2 * q), p, 1e-4) < 1e-8


def test_fd_constant():
    assert finite_diff_check(lambda q: 3.0, np.ones(4), 1e-3, np.zeros(4)) == 0.0


def test_fd_nonfinite_is_failure():
    assert finite_diff_check(lambda q: float("nan"), np.ones(2), 1e-3, np.zeros(2)) == np.inf


def test_fd_detects_wrong_gradient():
    p = np.array([1.0, 2.0])
    assert finite_diff_check(lambda q: float(q @ q), p, 1e-4, np.array([2.0, 3.0])) > 0.1


def test_fd_rejects_bad_step():
    with pytest.raises(ValueError):
        finite_diff_check(lambda q: 0.0, np.ones(1), 0.0, np.zeros(1))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_random_nets_gradcheck(seed):
    rng = np.random.default_rng(seed)
    net = Mlp.initialized([2, 3, 1], rng, "tanh", "sigmoid")
    x = rng.normal(size=2)
    _, gp = mlp_backward(net, x, [1.0])
    err = finite_diff_check(
        lambda p: float(mlp_forward(Mlp(net.layer_widths, p, "tanh", "sigmoid"), x)[0]),
        net.params, 1e-5, gp)
    assert err < 1e-4
