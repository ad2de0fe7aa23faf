import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evhdr.autodiff import Mlp, finite_diff_check, mlp_forward
from evhdr.crf import LOG_FLOOR, CrfField, crf_apply, crf_apply_backward, crf_export, monotone_penalty


def _crf(seed=0):
    rng = np.random.default_rng(seed)
    crf = CrfField.initialized((6, 5), rng)
    crf.params = crf.params + rng.normal(scale=0.3, size=crf.params.size)
    return crf


def test_unit_exposure_feeds_zero():
    crf = _crf()
    out = crf_apply(crf, np.array([[2.0, 2.0, 2.0]]), 0.5)
    expect = [mlp_forward(n, [0.0])[0] for n in crf.nets]
    np.testing.assert_allclose(out[0], expect, rtol=1e-15)


def test_zero_raw_uses_floor():
    crf = _crf(1)
    out = crf_apply(crf, np.zeros((1, 3)), 0.01)
    expect = [mlp_forward(n, [np.log(LOG_FLOOR)])[0] for n in crf.nets]
    np.testing.assert_allclose(out[0], expect, rtol=1e-15)
    assert np.all(np.isfinite(out))


def test_negative_raw_rejected():
    with pytest.raises(ValueError):
        crf_apply(_crf(), np.array([[-1.0, 0, 0]]), 0.1)
    with pytest.raises(ValueError):
        crf_apply(_crf(), np.ones((1, 3)), 0.0)


def test_zero_upstream_zero_grads():
    g_raw, grads = crf_apply_backward(_crf(), np.ones((3, 3)), 0.5, np.zeros((3, 3)))
    assert not g_raw.any() and not any(g.any() for g in grads)


def test_clamped_channel_has_zero_raw_grad():
    g_raw, _ = crf_apply_backward(_crf(), np.array([[0.0, 1.0, 0.0]]), 0.5, np.ones((1, 3)))
    assert g_raw[0, 0] == 0 and g_raw[0, 2] == 0 and g_raw[0, 1] != 0


def test_gradcheck_raw_and_params():
    crf = _crf(3)
    rng = np.random.default_rng(3)
    raw = rng.uniform(0.1, 50, (5, 3))
    up = rng.normal(size=(5, 3))
    g_raw, grads = crf_apply_backward(crf, raw, 0.02, up)
    f = lambda r: float(np.sum(crf_apply(crf, r.reshape(5, 3), 0.02) * up))
    assert finite_diff_check(f, raw.ravel(), 1e-6, g_raw.ravel()) < 1e-4

    def fp(p):
        c = crf.copy()
        c.params = p
        return float(np.sum(crf_apply(c, raw, 0.02) * up))

    assert finite_diff_check(fp, crf.params.copy(), 1e-6, np.concatenate(grads)) < 1e-4


def test_export_two_samples_are_endpoints():
    table = crf_export(_crf(), (-3.0, 1.5), 2)
    np.testing.assert_array_equal(table[:, 0], [-3.0, 1.5])
    assert table.shape == (2, 4)


def test_constant_net_gives_flat_curve():
    nets = [Mlp([1, 4, 1], None, "relu", "sigmoid") for _ in range(3)]
    for n in nets:
        n.params[-1] = 0.7
    table = crf_export(CrfField(nets), (-5, 5), 17)
    np.testing.assert_allclose(table[:, 1:], 1 / (1 + np.exp(-0.7)), rtol=1e-15)


def test_export_validation():
    with pytest.raises(ValueError):
        crf_export(_crf(), (1.0, 1.0), 5)
    with pytest.raises(ValueError):
        crf_export(_crf(), (0.0, 1.0), 1)


def test_channel_independence():
    crf = _crf(4)
    raw = np.random.default_rng(4).uniform(0, 10, (20, 3))
    before = crf_apply(crf, raw, 0.1)
    crf.nets[0].params = crf.nets[0].params + 0.5
    after = crf_apply(crf, raw, 0.1)
    np.testing.assert_array_equal(before[:, 1:], after[:, 1:])
    assert not np.allclose(before[:, 0], after[:, 0])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(1e-4, 10))
def test_output_in_open_unit_interval(seed, dt):
    rng = np.random.default_rng(seed)
    crf = CrfField.initialized((8,), rng)
    raw = rng.exponential(10.0, (50, 3))
    out = crf_apply(crf, raw, dt)
    assert np.all(out > 0) and np.all(out < 1)


def test_monotone_penalty_gradient():
    crf = _crf(7)
    val, g = monotone_penalty(crf, (-4, 2), 16)

    def f(p):
        c = crf.copy()
        c.params = p
        return monotone_penalty(c, (-4, 2), 16)[0]

    assert val >= 0
    if val > 0:
        assert finite_diff_check(f, crf.params.copy(), 1e-6, g) < 1e-4


def test_bad_topology_rejected():
    with pytest.raises(ValueError):
        CrfField([Mlp([1, 1], None, "relu", "identity")] * 3)
    with pytest.raises(ValueError):
        CrfField([Mlp([1, 1], None, "relu", "sigmoid")] * 2)
