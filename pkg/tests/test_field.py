import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evhdr.autodiff import finite_diff_check, softplus
from evhdr.field import MlpField, VoxelField


def _grid(res=(2, 2, 2), seed=0, bounds=((-1, -1, -1), (1, 1, 1))):
    rng = np.random.default_rng(seed)
    return VoxelField(res, bounds, rng.normal(size=tuple(res) + (4,)))


def test_very_negative_raw_is_near_zero():
    f = VoxelField((3, 3, 3), raw=np.full((3, 3, 3, 4), -50.0))
    e, s = f.query(np.zeros((1, 3)))
    assert s[0] < 1e-20 and np.all(e < 1e-20)


def test_node_query_is_activated_node_value():
    f = _grid((4, 3, 5), seed=1)
    lo, hi = f.bounds
    i, j, k = 2, 1, 3
    node = lo + np.array([i, j, k]) * (hi - lo) / (np.array(f.resolution) - 1)
    e, s = f.query(node[None])
    np.testing.assert_allclose(s[0], softplus(f.raw[i, j, k, 0]), rtol=1e-14)
    np.testing.assert_allclose(e[0], softplus(f.raw[i, j, k, 1:]), rtol=1e-14)


def test_cell_center_is_mean_of_corners():
    raw = np.zeros((2, 2, 2, 4))
    raw[..., 0] = np.arange(8).reshape(2, 2, 2)
    f = VoxelField((2, 2, 2), raw=raw)
    assert f.interpolate_raw(np.zeros((1, 3)))[0, 0] == pytest.approx(3.5, abs=1e-14)


def test_trilinear_matches_direct_formula():
    f = _grid((2, 2, 2), seed=4, bounds=((0, 0, 0), (1, 1, 1)))
    p = np.array([0.2, 0.7, 0.45])
    expect = np.zeros(4)
    for a in (0, 1):
        for b in (0, 1):
            for c in (0, 1):
                w = (p[0] if a else 1 - p[0]) * (p[1] if b else 1 - p[1]) * (p[2] if c else 1 - p[2])
                expect += w * f.raw[a, b, c]
    np.testing.assert_allclose(f.interpolate_raw(p[None])[0], expect, rtol=1e-13)


def test_outside_bounds_is_exact_zero():
    f = _grid((3, 3, 3), seed=2)
    pts = np.array([[1.5, 0, 0], [0, -1.01, 0], [0, 0, 3.0]])
    e, s = f.query(pts)
    assert not s.any() and not e.any()


def test_nan_rejected():
    with pytest.raises(ValueError):
        _grid().query(np.array([[np.nan, 0, 0]]))


def test_direction_must_be_unit():
    with pytest.raises(ValueError):
        _grid().query(np.zeros((1, 3)), np.array([[0, 0, 2.0]]))


def test_zero_upstream_gives_zero_grad():
    f = _grid((3, 3, 3))
    g = f.query_backward(np.full((2, 3), 0.1), None, np.zeros((2, 3)), np.zeros(2))
    assert not g.any()


def test_node_gradient_lands_on_that_node():
    f = _grid((3, 3, 3), seed=6)
    node_idx = (1, 2, 0)
    lo, hi = f.bounds
    p = lo + np.array(node_idx) * (hi - lo) / 2
    up_e = np.array([[0.3, -0.5, 1.1]])
    up_s = np.array([0.7])
    g = f.query_backward(p[None], None, up_e, up_s).reshape(f.raw.shape)
    sig = 1.0 / (1.0 + np.exp(-f.raw[node_idx]))
    np.testing.assert_allclose(g[node_idx], np.r_[up_s, up_e[0]] * sig, rtol=1e-12)
    g[node_idx] = 0
    assert np.abs(g).max() < 1e-15


def test_voxel_gradcheck():
    f = _grid((3, 3, 3), seed=8)
    rng = np.random.default_rng(9)
    pts = rng.uniform(-0.95, 0.95, size=(6, 3))
    ue, us = rng.normal(size=(6, 3)), rng.normal(size=6)
    g = f.query_backward(pts, None, ue, us)

    def loss(p):
        h = VoxelField(f.resolution, f.bounds, p)
        e, s = h.query(pts)
        return float(np.sum(e * ue) + s @ us)

    assert finite_diff_check(loss, f.params.copy(), 1e-6, g) < 1e-6


def test_mlp_field_gradcheck_and_direction_dependence():
    rng = np.random.default_rng(2)
    f = MlpField.initialized((8,), 2, 1, rng=rng)
    pts = rng.uniform(-0.9, 0.9, size=(4, 3))
    d = rng.normal(size=(4, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    ue, us = rng.normal(size=(4, 3)), rng.normal(size=4)
    g = f.query_backward(pts, d, ue, us)

    def loss(p):
        h = f.copy()
        h.net.params = p
        e, s = h.query(pts, d)
        return float(np.sum(e * ue) + s @ us)

    assert finite_diff_check(loss, f.net.params.copy(), 1e-6, g) < 1e-4
    e1, _ = f.query(pts[:1], d[:1])
    e2, _ = f.query(pts[:1], -d[:1])
    assert not np.allclose(e1, e2)


def test_mlp_field_outside_is_zero():
    f = MlpField.initialized((8,), 2, 1, rng=0)
    e, s = f.query(np.array([[2.0, 0, 0]]))
    assert s[0] == 0 and not e.any()


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_nonnegative_outputs(seed):
    rng = np.random.default_rng(seed)
    f = VoxelField((4, 4, 4), raw=rng.normal(scale=20, size=(4, 4, 4, 4)))
    pts = rng.uniform(-1.5, 1.5, size=(500, 3))
    e, s = f.query(pts)
    assert np.all(e >= 0) and np.all(s >= 0)
    assert np.all(np.isfinite(e)) and np.all(np.isfinite(s))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_locality(seed):
    rng = np.random.default_rng(seed)
    f = _grid((5, 5, 5), seed=seed % 1000)
    p = rng.uniform(-1, 1, size=3)
    e0, s0 = f.query(p[None])
    u = (p + 1) / 2 * 4
    base = np.minimum(np.floor(u).astype(int), 3)
    while True:
        far = rng.integers(0, 5, 3)
        if np.any((far < base) | (far > base + 1)):
            break
    f.raw[tuple(far)] += 10.0
    e1, s1 = f.query(p[None])
    assert np.array_equal(e0, e1) and np.array_equal(s0, s1)
