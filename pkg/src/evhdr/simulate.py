"""Synthetic blurry-LDR-plus-events data from a known voxel scene.

For every training view the camera shakes along a constant-velocity
trajectory during the exposure.  ``b_sim + 1`` sharp HDR frames are rendered
along it; their mean is the blurry raw image, which is tone-mapped with the
Reinhard curve and quantized to 8 bits.  The same frames, mosaiced onto the
RGGB plane, drive an integrate-and-fire event sensor with a radiance
dependent latency.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .crf import LOG_FLOOR
from .dataset import Dataset, ExposureBlock, TestView, save_dataset
from .events import EventStream, bayer_adapt
from .field import VoxelField
from .metrics import reinhard
from .render import Camera, TimedPose, look_at, render_image

logger = logging.getLogger(__name__)

PHI_DEFAULT = 62.5
LATENCY_MODES = ("none", "constant", "logistic")


@dataclass
class SimConfig:
    """Sensor settings for data generation.

    Latency modes: ``none`` (eps = 1), ``constant`` (eps = ``latency_eps``) or
    ``logistic``: ``eps = lo + (1 - lo) * sigmoid(slope * (ln E - center))``
    with ``lo = latency_min``, so dim pixels respond slowly.
    """

    phi: float = PHI_DEFAULT
    threshold: float = 0.2
    latency_mode: str = "logistic"
    latency_eps: float = 1.0
    latency_min: float = 0.2
    latency_center: float = -3.0
    latency_slope: float = 1.5
    spurious_rate: float = 0.0
    b_sim: int = 17
    seed: int = 0

    def __post_init__(self):
        if self.phi <= 0 or self.threshold <= 0:
            raise ValueError("phi and threshold must be positive")
        if self.spurious_rate < 0:
            raise ValueError("spurious_rate must be non-negative")
        if self.latency_mode not in LATENCY_MODES:
            raise ValueError(f"latency_mode must be one of {LATENCY_MODES}")
        if self.b_sim < 1:
            raise ValueError("b_sim must be >= 1")


def latency_profile(config: SimConfig, radiance):
    radiance = np.asarray(radiance, dtype=np.float64)
    if config.latency_mode == "none":
        return np.ones_like(radiance)
    if config.latency_mode == "constant":
        return np.full_like(radiance, config.latency_eps)
    z = config.latency_slope * (np.log(np.maximum(radiance, LOG_FLOOR)) - config.latency_center)
    return config.latency_min + (1.0 - config.latency_min) / (1.0 + np.exp(-z))


def reinhard_tonemap(hdr, dt, phi=PHI_DEFAULT):
    return reinhard(hdr, dt, phi)


def quantize8(ldr):
    """``round(ldr * 255)`` with halves rounded away from zero, clamped to [0, 255]."""
    v = np.asarray(ldr, dtype=np.float64) * 255.0
    return np.clip(np.floor(v + 0.5), 0, 255).astype(np.uint8)


def dequantize8(img):
    return np.asarray(img, dtype=np.float64) / 255.0


def render_sharp_sequence(field, camera, timed_poses, near, far, n_samples=128):
    """One full-frame HDR render per timed pose, ``(n, H, W, 3)``."""
    if len(timed_poses) < 1:
        raise ValueError("need at least one pose")
    return np.stack([render_image(field, camera, tp.pose if isinstance(tp, TimedPose) else tp,
                                  near, far, n_samples) for tp in timed_poses])


def synthesize_blur(frames):
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim < 2 or frames.shape[0] < 1:
        raise ValueError("need a non-empty stack of frames")
    return frames.mean(axis=0)


def simulate_events(frames, timestamps, config: SimConfig, rng=None):
    """Events from a stack of event-plane radiance frames ``(n, H, W)``.

    Each pixel low-passes its radiance with the configured latency, then
    fires whenever its log state moves a whole threshold away from a
    reference level.  The reference advances by the emitted multiple of the
    threshold, so sub-threshold residue carries over.  Event times are placed
    where the linearly interpolated log state crosses each level.  Spurious
    events are added uniformly in pixel, time and polarity.
    """
    frames = np.asarray(frames, dtype=np.float64)
    ts = np.asarray(timestamps, dtype=np.float64)
    if frames.ndim != 3 or frames.shape[0] < 2:
        raise ValueError("need at least two (H, W) frames")
    if ts.shape != (frames.shape[0],) or np.any(np.diff(ts) <= 0):
        raise ValueError("timestamps must be strictly increasing, one per frame")
    rng = np.random.default_rng(config.seed if rng is None else rng)
    n, h, w = frames.shape
    theta = config.threshold
    radiance = np.maximum(frames.reshape(n, -1), LOG_FLOOR)
    state = radiance[0].copy()
    log_prev = np.log(state)
    ref = log_prev.copy()
    chunks = []
    for k in range(1, n):
        eps = latency_profile(config, radiance[k])
        state = (1.0 - eps) * state + eps * radiance[k]
        log_now = np.log(state)
        count = np.trunc((log_now - ref) / theta).astype(np.int64)
        fired = np.flatnonzero(count)
        if fired.size:
            reps = np.abs(count[fired])
            pix = np.repeat(fired, reps)
            # 1..|count| within each firing pixel
            j = np.arange(pix.size) - np.repeat(np.cumsum(reps) - reps, reps) + 1
            sign = np.sign(count[pix])
            level = ref[pix] + sign * j * theta
            span = log_now[pix] - log_prev[pix]
            frac = np.clip((level - log_prev[pix]) / span, 0.0, 1.0)
            t = ts[k - 1] + frac * (ts[k] - ts[k - 1])
            # keep events inside [t_{k-1}, t_k) so binning by frame times is exact
            t = np.minimum(t, np.nextafter(ts[k], -np.inf))
            chunks.append((pix % w, pix // w, t, sign))
            ref[fired] += count[fired] * theta
        log_prev = log_now
    if config.spurious_rate > 0:
        m = rng.poisson(config.spurious_rate * (ts[-1] - ts[0]) * h * w)
        chunks.append((rng.integers(0, w, m), rng.integers(0, h, m),
                       rng.uniform(ts[0], ts[-1], m), rng.choice([-1, 1], m)))
    if not chunks:
        return EventStream.empty(w, h)
    x, y, t, p = (np.concatenate(c) for c in zip(*chunks))
    return EventStream.from_unsorted(x, y, t, p, w, h)


# --------------------------------------------------------------------------- scenes


def softplus_inverse(y):
    y = np.asarray(y, dtype=np.float64)
    return np.where(y > 20, y, np.log(np.expm1(np.maximum(y, 1e-12))))


DESK_SCENE = {
    "name": "desk",
    "resolution": [32, 32, 32],
    "bounds": [[-1, -1, -1], [1, 1, 1]],
    "primitives": [
        {"type": "box", "min": [-1, -1, 0.55], "max": [1, 1, 0.85], "density": 40,
         "emission": [0.35, 0.3, 0.25], "checker": {"cells": 5, "emission": [1.4, 1.2, 1.0]}},
        {"type": "box", "min": [-1, -1, -1], "max": [1, -0.75, 0.55], "density": 40,
         "emission": [0.12, 0.1, 0.08], "checker": {"cells": 4, "emission": [0.5, 0.45, 0.4]}},
        {"type": "sphere", "center": [0.35, 0.2, 0.1], "radius": 0.25, "density": 40,
         "emission": [400.0, 300.0, 200.0]},
        {"type": "box", "min": [-0.75, -0.75, -0.35], "max": [-0.25, -0.05, 0.15], "density": 40,
         "emission": [0.01, 0.012, 0.02]},
        {"type": "box", "min": [-0.1, -0.75, -0.6], "max": [0.35, -0.4, -0.15], "density": 40,
         "emission": [3.0, 0.4, 0.2]},
        # side walls and ceiling close the room so every pixel sees a surface
        {"type": "box", "min": [-1, -1, -1], "max": [-0.85, 1, 1], "density": 40,
         "emission": [0.2, 0.22, 0.25], "checker": {"cells": 6, "emission": [0.6, 0.6, 0.7]}},
        {"type": "box", "min": [0.85, -1, -1], "max": [1, 1, 1], "density": 40,
         "emission": [0.25, 0.2, 0.2], "checker": {"cells": 6, "emission": [0.7, 0.6, 0.6]}},
        {"type": "box", "min": [-1, 0.85, -1], "max": [1, 1, 1], "density": 40,
         "emission": [0.8, 0.8, 0.8]},
    ],
    "camera": {"width": 64, "height": 64, "fov": 32.0},
    "rig": {"train_views": 8, "test_views": 4, "radius": 3.5, "elevation_deg": 15.0,
            "azimuth_span_deg": 70.0},
    "near": 1.6,
    "far": 5.4,
    "exposure": 0.016,
    "eval_exposure": 0.016,
    "shake": {"rotation_deg": 3.0, "translation": 0.05},
    "render_samples": 128,
    "sim": {"b_sim": 9},
}


def build_scene_field(spec) -> VoxelField:
    """Rasterize emissive boxes and spheres onto the nodes of a voxel grid."""
    res = spec.get("resolution", [32, 32, 32])
    if isinstance(res, int):
        res = [res] * 3
    bounds = spec.get("bounds", [[-1, -1, -1], [1, 1, 1]])
    field_ = VoxelField(res, bounds)
    lo, hi = field_.bounds
    axes = [np.linspace(lo[k], hi[k], res[k]) for k in range(3)]
    X, Y, Z = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([X, Y, Z], axis=-1)
    density = np.zeros(X.shape)
    emission = np.zeros(X.shape + (3,))
    for prim in spec.get("primitives", []):
        kind = prim["type"]
        if kind == "box":
            pmin, pmax = np.asarray(prim["min"], float), np.asarray(prim["max"], float)
            mask = np.all((pts >= pmin - 1e-9) & (pts <= pmax + 1e-9), axis=-1)
        elif kind == "sphere":
            c = np.asarray(prim["center"], float)
            mask = np.linalg.norm(pts - c, axis=-1) <= prim["radius"] + 1e-9
        else:
            raise ValueError(f"unknown primitive type {kind!r}")
        em = np.broadcast_to(np.asarray(prim["emission"], float), X.shape + (3,)).copy()
        if "checker" in prim:
            cells = prim["checker"]["cells"]
            cell = np.floor((pts - lo) / (hi - lo) * cells).astype(int).sum(axis=-1) % 2 == 1
            em[cell] = prim["checker"]["emission"]
        density[mask] = prim["density"]
        emission[mask] = em[mask]
    background = spec.get("background_raw", -12.0)
    raw = field_.raw
    raw[..., 0] = np.where(density > 0, softplus_inverse(np.maximum(density, 1e-12)), background)
    raw[..., 1:] = np.where(emission > 0, softplus_inverse(np.maximum(emission, 1e-12)), background)
    return field_


def rig_poses(spec, n, offset):
    """Cameras on a horizontal arc around the origin, looking at it."""
    rig = spec["rig"]
    span = np.radians(rig["azimuth_span_deg"])
    elev = np.radians(rig["elevation_deg"])
    az = -span / 2 + span * (np.arange(n) + offset) / max(n - 1 + 2 * offset, 1)
    r = rig["radius"]
    out = []
    for a in az:
        eye = r * np.array([np.sin(a) * np.cos(elev), np.sin(elev), -np.cos(a) * np.cos(elev)])
        out.append(look_at(eye, np.zeros(3), up=(0.0, 1.0, 0.0)))
    return out


def shake_trajectory(reference_pose, t_start, t_end, n, rotation_deg, translation, rng):
    """``n`` constant-velocity poses centred on ``reference_pose`` over the exposure."""
    rng = np.random.default_rng(rng)
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    ts = np.linspace(t_start, t_end, n)
    s = (ts - 0.5 * (t_start + t_end)) / (t_end - t_start)  # in [-0.5, 0.5]
    poses = []
    for t, si in zip(ts, s):
        delta = np.eye(4)
        delta[:3, :3] = Rotation.from_rotvec(axis * np.radians(rotation_deg) * si).as_matrix()
        delta[:3, 3] = direction * translation * si
        poses.append(TimedPose(float(t), reference_pose @ delta))
    return poses


def load_scene_spec(scene):
    """Scene spec from a dict, a built-in preset name or a JSON file path."""
    if isinstance(scene, dict):
        spec = scene
    elif scene in ("desk", "builtin:desk"):
        spec = DESK_SCENE
    else:
        path = Path(scene)
        if not path.exists():
            raise FileNotFoundError(f"scene file not found: {path}")
        spec = json.loads(path.read_text())
        if "preset" in spec:
            base = json.loads(json.dumps(load_scene_spec(spec.pop("preset"))))
            base.update(spec)
            spec = base
    return json.loads(json.dumps(spec))


def generate_dataset(scene, out_dir=None, seed=0, event_format="csv", **overrides) -> Dataset:
    """Simulate training exposures and held-out test views; optionally write them.

    ``overrides`` replace top-level scene keys (``sim`` and ``rig`` are merged).
    """
    spec = load_scene_spec(scene)
    for key, value in overrides.items():
        if key in ("sim", "rig", "camera", "shake") and isinstance(value, dict):
            spec.setdefault(key, {}).update(value)
        else:
            spec[key] = value
    sim_kwargs = dict(spec.get("sim", {}))
    sim_kwargs["seed"] = seed
    config = SimConfig(**sim_kwargs)
    field_ = build_scene_field(spec)
    cam_spec = spec["camera"]
    camera = Camera.from_fov(cam_spec["width"], cam_spec["height"], cam_spec["fov"])
    near, far = float(spec["near"]), float(spec["far"])
    dt = float(spec["exposure"])
    shake = spec["shake"]
    n_samples = int(spec.get("render_samples", 128))
    rng = np.random.default_rng(seed)
    n_frames = config.b_sim + 1

    views = []
    for v, ref in enumerate(rig_poses(spec, spec["rig"]["train_views"], 0.0)):
        traj = shake_trajectory(ref, 0.0, dt, n_frames, shake["rotation_deg"],
                                shake["translation"], rng)
        frames = render_sharp_sequence(field_, camera, traj, near, far, n_samples)
        blur = synthesize_blur(frames)
        ldr = quantize8(reinhard_tonemap(blur, dt, config.phi))
        events = simulate_events(bayer_adapt(frames), [tp.t for tp in traj], config, rng)
        sharp = render_image(field_, camera, ref, near, far, n_samples)
        views.append(ExposureBlock(v, camera, dt, traj, ldr, events, ref, sharp))
        logger.info("view %d: %d events", v, len(events))

    tests = []
    for v, ref in enumerate(rig_poses(spec, spec["rig"]["test_views"], 0.5)):
        traj = shake_trajectory(ref, 0.0, dt, n_frames, shake["rotation_deg"],
                                shake["translation"], rng)
        frames = render_sharp_sequence(field_, camera, traj, near, far, n_samples)
        sharp = render_image(field_, camera, ref, near, far, n_samples)
        tests.append(TestView(v, ref, sharp, synthesize_blur(frames)))

    xs = np.linspace(-12.0, 4.0, 161)
    crf = reinhard_tonemap(np.exp(xs), 1.0, config.phi)
    crf_gt = np.column_stack([xs, crf, crf, crf])
    meta = {"scene": spec.get("name", "custom"), "seed": seed, "exposure": dt,
            "eval_exposure": float(spec.get("eval_exposure", dt)),
            "phi": config.phi, "threshold": config.threshold, "b_sim": config.b_sim,
            "sim": asdict(config)}
    ds = Dataset(camera, near, far, views, tests, meta, crf_gt)
    if out_dir is not None:
        save_dataset(ds, out_dir, event_format)
    return ds
