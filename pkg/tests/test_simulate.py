import hashlib
from pathlib import Path

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evhdr.dataset import load_dataset
from evhdr.events import bin_counts, divide_events
from evhdr.field import VoxelField
from evhdr.render import Camera, TimedPose, look_at
from evhdr.simulate import (SimConfig, dequantize8, generate_dataset, latency_profile, quantize8,
                            reinhard_tonemap, render_sharp_sequence, simulate_events,
                            synthesize_blur)

from conftest import TINY


def _no_latency(**kw):
    return SimConfig(latency_mode="none", **kw)


def _oracle_counts(frames, theta):
    # plain integrate-and-fire with residual carrying, eps = 1
    logs = np.log(np.maximum(frames, 1e-6))
    ref = logs[0].copy()
    out = []
    for k in range(1, len(frames)):
        c = np.trunc((logs[k] - ref) / theta)
        ref += c * theta
        out.append(c)
    return np.array(out)


def test_static_trajectory_frames_identical():
    field = VoxelField((4, 4, 4), raw=np.random.default_rng(0).normal(size=(4, 4, 4, 4)))
    cam = Camera.from_fov(6, 6, 40)
    pose = look_at([0, 0, -3], [0, 0, 0])
    frames = render_sharp_sequence(field, cam, [TimedPose(t, pose) for t in (0, 0.5, 1)], 1, 5, 16)
    assert np.array_equal(frames[0], frames[1]) and np.array_equal(frames[1], frames[2])


def test_empty_scene_frames_zero():
    field = VoxelField((3, 3, 3), raw=np.full((3, 3, 3, 4), -60.0))
    cam = Camera.from_fov(5, 5, 40)
    frames = render_sharp_sequence(field, cam, [look_at([0, 0, -3], [0, 0, 0])] * 2, 1, 5, 8)
    assert np.all(frames < 1e-20)


def test_single_voxel_closed_form():
    # constant field inside the box: every sample has the same (e, sigma)
    raw = np.zeros((2, 2, 2, 4))
    raw[..., 0] = 1.5
    raw[..., 1:] = [0.2, -0.4, 1.0]
    field = VoxelField((2, 2, 2), raw=raw)
    cam = Camera(1, 1, 100.0, 100.0, 0.0, 0.0)
    pose = look_at([0, 0, -3], [0, 0, 0])
    near, far, n = 2.5, 3.5, 8
    frames = render_sharp_sequence(field, cam, [pose, pose], near, far, n)
    sp = lambda x: np.log1p(np.exp(x))
    sigma, e = sp(1.5), sp(np.array([0.2, -0.4, 1.0]))
    d = np.array([(0.5 - 0.0) / 100.0, (0.5 - 0.0) / 100.0, 1.0])
    d /= np.linalg.norm(d)
    depths = near + (np.arange(n) + 0.5) * (far - near) / n
    z = -3 + depths * (pose[:3, :3] @ d)[2]
    inside = np.abs(z) <= 1
    deltas = np.r_[np.diff(depths), far - depths[-1]]
    tau = np.where(inside, sigma * deltas, 0.0)
    trans = np.exp(-np.r_[0, np.cumsum(tau)[:-1]])
    expect = np.sum(trans * (1 - np.exp(-tau))) * e
    np.testing.assert_allclose(frames[0, 0, 0], expect, rtol=1e-12)


def test_blur_is_mean():
    np.testing.assert_array_equal(synthesize_blur([np.zeros((2, 2, 3)), np.full((2, 2, 3), 2.0)]), 1.0)
    f = np.random.default_rng(0).random((3, 4, 4, 3))
    np.testing.assert_allclose(synthesize_blur([f[0]] * 3), f[0], rtol=1e-15)
    np.testing.assert_allclose(synthesize_blur(f), (f[0] + f[1] + f[2]) / 3, rtol=1e-15)


def test_reinhard_values():
    assert reinhard_tonemap(0.0, 0.1, 62.5) == 0.0
    mpmath.mp.dps = 30
    expect = float(mpmath.mpf("0.5") ** (1 / mpmath.mpf("2.2")))
    assert reinhard_tonemap(1.0, 1.0 / 62.5, 62.5) == pytest.approx(expect, abs=1e-15)
    xs = np.logspace(-6, 8, 200)
    ys = reinhard_tonemap(xs, 0.01, 62.5)
    assert np.all(np.diff(ys) > 0) and np.all(ys < 1)


def test_quantize_points():
    np.testing.assert_array_equal(quantize8([0.0, 1.0, 0.5]), [0, 255, 128])
    assert quantize8(2.0) == 255 and quantize8(-0.5) == 0


def test_quantize_roundtrip_error():
    codes = np.arange(256)
    x = codes / 255.0
    for off in np.linspace(-0.5, 0.5, 21)[1:-1] / 255.0:
        v = np.clip(x + off, 0, 1)
        assert np.all(np.abs(dequantize8(quantize8(v)) - v) <= 1 / 510 + 1e-12)


def test_constant_frames_no_events():
    frames = np.full((5, 3, 4), 0.7)
    s = simulate_events(frames, np.linspace(0, 1, 5), _no_latency())
    assert len(s) == 0


def test_step_fires_two_positive_events():
    frames = np.array([[[1.0]], [[np.exp(0.5)]], [[np.exp(0.5)]]])
    s = simulate_events(frames, [0.0, 1.0, 2.0], _no_latency(threshold=0.2))
    assert len(s) == 2 and np.all(s.p == 1)
    # residual 0.1 carried: a further rise of 0.1 adds exactly one event
    frames2 = np.concatenate([frames, [[[np.exp(0.6 + 1e-9)]]]])
    s2 = simulate_events(frames2, [0.0, 1.0, 2.0, 3.0], _no_latency(threshold=0.2))
    assert len(s2) == 3


def test_timestamps_interpolate_crossings():
    frames = np.array([[[1.0]], [[np.exp(1.0)]]])
    s = simulate_events(frames, [0.0, 1.0], _no_latency(threshold=0.25))
    np.testing.assert_allclose(s.t, [0.25, 0.5, 0.75, np.nextafter(1.0, 0)])


def test_simulate_rejects_bad_timestamps():
    with pytest.raises(ValueError):
        simulate_events(np.ones((2, 2, 2)), [0.0, 0.0], _no_latency())
    with pytest.raises(ValueError):
        simulate_events(np.ones((1, 2, 2)), [0.0], _no_latency())


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_binning_by_frame_times_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 8))
    frames = rng.lognormal(0, 1.0, (n, 3, 5))
    ts = np.cumsum(rng.uniform(0.1, 1.0, n))
    s = simulate_events(frames, ts, _no_latency(threshold=0.3))
    np.testing.assert_array_equal(bin_counts(s, ts), _oracle_counts(frames, 0.3))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_conservation(seed):
    rng = np.random.default_rng(seed)
    frames = rng.lognormal(0, 1.5, (6, 4, 4))
    theta = 0.2
    s = simulate_events(frames, np.linspace(0, 1, 6), _no_latency(threshold=theta))
    net = bin_counts(s, [0.0, 1.0])[0]
    dlog = np.log(frames[-1]) - np.log(frames[0])
    assert np.all(np.abs(net * theta - dlog) <= theta + 1e-12)


def test_latency_profiles():
    r = np.array([1e-4, 1.0, 1e3])
    assert np.all(latency_profile(SimConfig(latency_mode="none"), r) == 1)
    np.testing.assert_array_equal(latency_profile(SimConfig(latency_mode="constant", latency_eps=0.3), r), 0.3)
    eps = latency_profile(SimConfig(), r)
    assert np.all(np.diff(eps) > 0) and eps[0] >= 0.2 and eps[-1] <= 1


def test_latency_slows_response():
    frames = np.array([[[1.0]], [[np.e]], [[np.e]], [[np.e]]])
    fast = simulate_events(frames, [0, 1, 2, 3], _no_latency(threshold=0.2))
    slow = simulate_events(frames, [0, 1, 2, 3], SimConfig(latency_mode="constant",
                                                            latency_eps=0.3, threshold=0.2))
    assert fast.t[-1] < 1.0 and slow.t[-1] > 1.0


def test_spurious_events_seeded():
    frames = np.full((3, 8, 8), 1.0)
    cfg = _no_latency(spurious_rate=50.0)
    a = simulate_events(frames, [0, 0.5, 1], cfg, np.random.default_rng(3))
    b = simulate_events(frames, [0, 0.5, 1], cfg, np.random.default_rng(3))
    assert len(a) > 0 and np.array_equal(a.t, b.t) and np.array_equal(a.p, b.p)


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(phi=0)
    with pytest.raises(ValueError):
        SimConfig(spurious_rate=-1)
    with pytest.raises(ValueError):
        SimConfig(latency_mode="bogus")


def test_static_single_view_dataset():
    spec = dict(TINY, rig=dict(TINY["rig"], train_views=1, test_views=0),
                shake={"rotation_deg": 0.0, "translation": 0.0},
                sim={"b_sim": 3, "spurious_rate": 0.0})
    ds = generate_dataset(spec, seed=1)
    v = ds.views[0]
    assert len(v.events) == 0
    expect = quantize8(reinhard_tonemap(v.gt_sharp_hdr, v.exposure, ds.meta["phi"]))
    np.testing.assert_array_equal(v.ldr, expect)


def _digest(root):
    h = hashlib.sha256()
    for p in sorted(Path(root).rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_dataset_deterministic_and_valid(tmp_path):
    a = generate_dataset(TINY, tmp_path / "a", seed=5)
    generate_dataset(TINY, tmp_path / "b", seed=5)
    generate_dataset(TINY, tmp_path / "c", seed=6)
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")
    assert _digest(tmp_path / "a") != _digest(tmp_path / "c")
    ds = load_dataset(tmp_path / "a")
    assert len(ds.views) == 2 and len(ds.tests) == 1
    for v, w in zip(ds.views, a.views):
        assert len(v.timed_poses) == TINY["sim"]["b_sim"] + 1
        assert np.all(np.diff([tp.t for tp in v.timed_poses]) > 0)
        assert v.ldr.dtype == np.uint8
        np.testing.assert_array_equal(v.events.t, w.events.t)
    assert ds.crf_gt.shape[1] == 4


def test_blur_consistency_with_uniform_integration():
    from evhdr.render import exposure_weights, integrate_exposure
    from evhdr.simulate import build_scene_field
    ds = generate_dataset(TINY, seed=2)
    field = build_scene_field(TINY)
    v = ds.views[0]
    frames = render_sharp_sequence(field, ds.camera, v.timed_poses, ds.near, ds.far, 32)
    w = exposure_weights([tp.t for tp in v.timed_poses])
    blur = integrate_exposure(frames, w)
    ldr = quantize8(reinhard_tonemap(blur, v.exposure, ds.meta["phi"]))
    np.testing.assert_array_equal(ldr, v.ldr)
