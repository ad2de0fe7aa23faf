"""Joint optimization of the scene field, response curves and latency network.

One training step samples ``(view, pixel)`` pairs and, for each, renders
``b + 1`` rays at the event-bin boundary times, integrates them into a raw
exposure, maps it to LDR, and (on the RGGB plane) predicts the signed event
count of each bin.  The loss is ``lambda * event_loss + image_loss`` and all
three parameter groups are updated with Adam.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from .crf import CrfField, crf_apply, crf_apply_backward, monotone_penalty
from .dataset import Dataset
from .events import (SOFT_COUNT_MODES, EventMappingField, bayer_channel, bin_counts, divide_events,
                     latency_coefficient, latency_coefficient_backward, lowpass_sequence,
                     lowpass_sequence_backward, offset_grid, predicted_counts,
                     predicted_counts_backward)
from .field import MlpField, VoxelField
from .metrics import eval_hdr, gauge_scale
from .render import (exposure_weights, generate_rays, interpolate_poses, pixel_grid,
                     render_image, render_rays, render_rays_backward)

logger = logging.getLogger(__name__)

GROUPS = ("scene", "crf", "ev")
METRIC_COLUMNS = ("iteration", "loss_total", "loss_ldr", "loss_evs", "psnr_holdout")


@dataclass
class TrainConfig:
    event_weight: float = 0.005
    b: int = 4
    iterations: int = 3000
    batch_rays: int = 1024
    n_samples: int = 64
    lr: float = 5e-4
    lr_final: float = 5e-5
    scene_lr: float = 0.2
    scene_lr_final: float = 0.02
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    weight_scheme: str = "uniform"
    soft_counts: str = "straight_through"
    use_events: bool = True
    threshold: float = 0.2
    backend: str = "voxel"
    grid_resolution: int = 32
    init_density: float = 0.1
    init_emission: float = 1.0
    crf_hidden: tuple = (32, 32)
    ev_hidden: tuple = (16,)
    mlp_hidden: tuple = (64, 64, 64, 64)
    pos_levels: int = 10
    dir_levels: int = 4
    crf_monotone_weight: float = 0.0
    crf_monotone_range: tuple = (-10.0, 4.0)
    log_every: int = 100
    eval_samples: int = 64

    def __post_init__(self):
        if self.event_weight < 0:
            raise ValueError("event_weight must be >= 0")
        if self.b < 1 or self.batch_rays < 1 or self.n_samples < 1:
            raise ValueError("b, batch_rays and n_samples must be >= 1")
        if self.soft_counts not in SOFT_COUNT_MODES:
            raise ValueError(f"soft_counts must be one of {SOFT_COUNT_MODES}")
        if self.backend not in ("voxel", "mlp"):
            raise ValueError("backend must be 'voxel' or 'mlp'")
        self.crf_hidden = tuple(self.crf_hidden)
        self.ev_hidden = tuple(self.ev_hidden)
        self.mlp_hidden = tuple(self.mlp_hidden)
        self.crf_monotone_range = tuple(self.crf_monotone_range)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    @property
    def events_active(self):
        return self.use_events and self.event_weight > 0


@dataclass
class TrainState:
    scene: object
    crf: CrfField
    ev: EventMappingField
    moments: dict
    step: int = 0
    rng: np.random.Generator = field(default_factory=np.random.default_rng)

    def params(self, group):
        return {"scene": self.scene, "crf": self.crf, "ev": self.ev}[group].params

    def set_params(self, group, value):
        target = {"scene": self.scene, "crf": self.crf, "ev": self.ev}[group]
        if group == "scene":
            target.params[:] = value
        else:
            target.params = value

    def flat_params(self):
        return np.concatenate([self.params(g) for g in GROUPS])

    def set_flat_params(self, flat):
        off = 0
        for g in GROUPS:
            n = self.params(g).size
            self.set_params(g, flat[off:off + n])
            off += n


def _softplus_inv(y):
    return float(np.log(np.expm1(y)))


def init_state(config: TrainConfig, bounds=((-1, -1, -1), (1, 1, 1))) -> TrainState:
    """Fresh parameters and zero optimizer moments, all seeded from ``config.seed``."""
    rng = np.random.default_rng(config.seed)
    if config.backend == "voxel":
        res = (config.grid_resolution,) * 3
        scene = VoxelField(res, bounds)
        scene.raw[..., 0] = _softplus_inv(config.init_density)
        scene.raw[..., 1:] = _softplus_inv(config.init_emission)
    else:
        scene = MlpField.initialized(config.mlp_hidden, config.pos_levels, config.dir_levels,
                                     bounds, rng)
    crf = CrfField.initialized(config.crf_hidden, rng)
    ev = EventMappingField.initialized(config.ev_hidden, rng, threshold=config.threshold)
    state = TrainState(scene, crf, ev, {}, 0, rng)
    state.moments = {g: (np.zeros_like(state.params(g)), np.zeros_like(state.params(g)))
                     for g in GROUPS}
    return state


@dataclass
class ViewData:
    """Per-view arrays precomputed once before optimization."""

    exposure: float
    boundaries: np.ndarray  # (b+1,)
    weights: np.ndarray  # (b+1,)
    origins: np.ndarray  # (b+1, HW, 3)
    directions: np.ndarray  # (b+1, HW, 3)
    target: np.ndarray  # (HW, 3) in [0, 1]
    counts: np.ndarray  # (b, HW)
    offsets: np.ndarray  # (b, HW)


@dataclass
class TrainData:
    views: list
    near: float
    far: float
    camera: object
    channel: np.ndarray  # (HW,) Bayer channel per pixel
    dataset: Optional[Dataset] = None

    @property
    def n_pixels(self):
        return self.channel.size


def prepare_data(dataset: Dataset, config: TrainConfig) -> TrainData:
    cam = dataset.camera
    pix = pixel_grid(cam)
    views = []
    for v in dataset.views:
        bounds, grid = divide_events(v.events, v.t_start, v.t_end, config.b)
        counts = grid.counts
        if np.any(np.diff(bounds) <= 0):
            # tied timestamps collapsed a bin; fall back to uniform division
            bounds = np.linspace(v.t_start, v.t_end, config.b + 1)
            counts = bin_counts(v.events.slice_time(v.t_start, v.t_end), bounds)
        poses = interpolate_poses(v.timed_poses, bounds)
        o, d = zip(*(generate_rays(cam, p, pix) for p in poses))
        views.append(ViewData(
            exposure=float(v.exposure), boundaries=bounds,
            weights=exposure_weights(bounds, config.weight_scheme),
            origins=np.stack(o), directions=np.stack(d),
            target=v.ldr.reshape(-1, 3).astype(np.float64) / 255.0,
            counts=counts.reshape(config.b, -1).astype(np.float64),
            offsets=offset_grid(v.events, bounds).reshape(config.b, -1)))
    channel = bayer_channel(pix[:, 0], pix[:, 1])
    return TrainData(views, float(dataset.near), float(dataset.far), cam, channel, dataset)


def image_loss(pred, target):
    pred, target = np.asarray(pred, float), np.asarray(target, float)
    if pred.shape != target.shape:
        raise ValueError("prediction and target shapes differ")
    return float(np.sum((pred - target) ** 2))


def event_loss(pred, target):
    pred, target = np.asarray(pred, float), np.asarray(target, float)
    if pred.shape != target.shape:
        raise ValueError("prediction and target shapes differ")
    return float(np.sum((pred - target) ** 2))


def total_loss(ldr, evs, weight):
    if weight < 0:
        raise ValueError("event weight must be >= 0")
    return weight * evs + ldr


def batch_loss(state: TrainState, data: TrainData, config: TrainConfig, view_idx, pixel_idx,
               offsets_u=None, with_grad=True, probe=None):
    """Loss parts and per-group gradients for one batch of ``(view, pixel)`` pairs.

    ``offsets_u`` ``(R, b+1, N)`` fixes the stratified sample positions within
    their depth bins; ``None`` uses bin midpoints.  ``probe``, if given, is
    called with the integrated raw values right before the response curves.
    """
    view_idx = np.asarray(view_idx)
    pixel_idx = np.asarray(pixel_idx)
    R, T, N = len(pixel_idx), config.b + 1, config.n_samples
    origins = np.empty((R, T, 3))
    dirs = np.empty((R, T, 3))
    weights = np.empty((R, T))
    exposure = np.empty(R)
    target = np.empty((R, 3))
    counts = np.empty((R, T - 1))
    offsets = np.empty((R, T - 1))
    for v in np.unique(view_idx):
        sel = view_idx == v
        vd = data.views[v]
        p = pixel_idx[sel]
        origins[sel] = vd.origins[:, p].transpose(1, 0, 2)
        dirs[sel] = vd.directions[:, p].transpose(1, 0, 2)
        weights[sel] = vd.weights
        exposure[sel] = vd.exposure
        target[sel] = vd.target[p]
        counts[sel] = vd.counts[:, p].T
        offsets[sel] = vd.offsets[:, p].T

    step = (data.far - data.near) / N
    u = np.full((R, T, N), 0.5) if offsets_u is None else offsets_u
    depths = data.near + (np.arange(N) + u) * step
    deltas = np.empty_like(depths)
    deltas[..., :-1] = np.diff(depths, axis=-1)
    deltas[..., -1] = data.far - depths[..., -1]

    E, rctx = render_rays(state.scene, origins.reshape(-1, 3), dirs.reshape(-1, 3),
                          depths.reshape(-1, N), deltas.reshape(-1, N))
    E = E.reshape(R, T, 3)
    hdr = np.einsum("rt,rtc->rc", weights, E)
    if probe is not None:
        probe(hdr)
    scaled = hdr * exposure[:, None]
    ldr = crf_apply(state.crf, scaled, 1.0)
    loss_ldr = image_loss(ldr, target)

    loss_evs = 0.0
    ev_cache = None
    if config.use_events:
        ch = data.channel[pixel_idx]
        e_ev = np.take_along_axis(E, np.broadcast_to(ch[:, None, None], (R, T, 1)), axis=2)[..., 0]
        floor = state.ev.log_floor
        e_ev_c = np.maximum(e_ev, floor)
        eps = latency_coefficient(state.ev, e_ev_c)
        lp = lowpass_sequence(e_ev_c, eps)
        pred = predicted_counts(lp, state.ev.threshold, config.soft_counts) - offsets
        loss_evs = event_loss(pred, counts)
        ev_cache = (ch, e_ev, e_ev_c, eps, lp, pred)

    weight = config.event_weight if config.use_events else 0.0
    parts = {"loss_total": total_loss(loss_ldr, loss_evs, weight),
             "loss_ldr": loss_ldr, "loss_evs": loss_evs}
    if not with_grad:
        return parts, None

    g_ldr = 2.0 * (ldr - target)
    g_scaled, crf_grads = crf_apply_backward(state.crf, scaled, 1.0, g_ldr)
    g_hdr = g_scaled * exposure[:, None]
    g_E = weights[..., None] * g_hdr[:, None, :]
    g_ev = np.zeros_like(state.ev.params)
    if ev_cache is not None:
        ch, e_ev, e_ev_c, eps, lp, pred = ev_cache
        g_pred = 2.0 * weight * (pred - counts)
        g_lp = predicted_counts_backward(lp, state.ev.threshold, g_pred)
        g_ec, g_eps = lowpass_sequence_backward(e_ev_c, eps, lp, g_lp)
        g_ec2, g_ev = latency_coefficient_backward(state.ev, e_ev_c, g_eps)
        g_e = np.where(e_ev > floor, g_ec + g_ec2, 0.0)
        rows = np.arange(R)
        g_E[rows[:, None], np.arange(T)[None, :], ch[:, None]] += g_e
    g_scene = render_rays_backward(state.scene, rctx, g_E.reshape(-1, 3))
    grads = {"scene": g_scene, "crf": np.concatenate(crf_grads), "ev": g_ev}
    if config.crf_monotone_weight > 0:
        pen, g_pen = monotone_penalty(state.crf, config.crf_monotone_range)
        parts["loss_total"] += config.crf_monotone_weight * pen
        grads["crf"] = grads["crf"] + config.crf_monotone_weight * g_pen
    return parts, grads


def adam_update(params, grads, moments, lr, beta1, beta2, eps, step_index):
    """Bias-corrected Adam; ``step_index`` counts from 1.  Returns new arrays."""
    m, v = moments
    m = beta1 * m + (1.0 - beta1) * grads
    v = beta2 * v + (1.0 - beta2) * grads * grads
    m_hat = m / (1.0 - beta1 ** step_index)
    v_hat = v / (1.0 - beta2 ** step_index)
    return params - lr * m_hat / (np.sqrt(v_hat) + eps), (m, v)


def learning_rates(config: TrainConfig, step):
    frac = step / max(config.iterations, 1)
    net = config.lr * (config.lr_final / config.lr) ** frac if config.lr > 0 else 0.0
    scene = config.scene_lr * (config.scene_lr_final / config.scene_lr) ** frac \
        if config.scene_lr > 0 else 0.0
    return {"scene": scene, "crf": net, "ev": net}


def sample_batch(state: TrainState, data: TrainData, config: TrainConfig):
    n_views = len(data.views)
    flat = state.rng.integers(0, n_views * data.n_pixels, config.batch_rays)
    u = state.rng.random((config.batch_rays, config.b + 1, config.n_samples))
    return flat // data.n_pixels, flat % data.n_pixels, u


def train_step(state: TrainState, data: TrainData, config: TrainConfig, batch=None):
    """One optimization step in place.  Returns the loss parts of the batch.

    A non-finite loss or gradient leaves every parameter and moment untouched.
    """
    if batch is None:
        batch = sample_batch(state, data, config)
    views, pixels, u = batch
    parts, grads = batch_loss(state, data, config, views, pixels, u)
    finite = math.isfinite(parts["loss_total"]) and all(np.all(np.isfinite(g)) for g in grads.values())
    if not finite:
        logger.warning("non-finite loss at iteration %d; step skipped", state.step)
        parts["skipped"] = True
        return parts
    t = state.step + 1
    lrs = learning_rates(config, state.step)
    for g in GROUPS:
        new, state.moments[g] = adam_update(state.params(g), grads[g], state.moments[g], lrs[g],
                                            config.beta1, config.beta2, config.adam_eps, t)
        state.set_params(g, new)
    state.step = t
    return parts


def render_hdr(state: TrainState, camera, pose, near, far, n_samples=64):
    return render_image(state.scene, camera, pose, near, far, n_samples)


def render_ldr(state: TrainState, hdr, exposure):
    return crf_apply(state.crf, np.maximum(hdr, 0.0), exposure)


def holdout_psnr(state: TrainState, dataset: Dataset, config: TrainConfig):
    """Mean held-out HDR PSNR after per-channel scale alignment and tone mapping."""
    if not dataset.tests:
        return None
    preds = [render_hdr(state, dataset.camera, t.pose, dataset.near, dataset.far,
                        config.eval_samples) for t in dataset.tests]
    gts = [t.hdr_gt for t in dataset.tests]
    scale = gauge_scale(preds, gts)
    phi = dataset.meta.get("phi", 62.5)
    dt = dataset.meta.get("eval_exposure", dataset.exposure)
    return float(np.mean([eval_hdr(p * scale, g, phi, dt)["psnr"] for p, g in zip(preds, gts)]))


def train(config: TrainConfig, dataset: Dataset, state: TrainState = None, callback=None):
    """Run ``config.iterations`` steps; returns ``(state, metrics_rows)``."""
    data = prepare_data(dataset, config)
    if state is None:
        state = init_state(config)
    rows = []
    # bounded by attempts so a run of skipped (non-finite) steps cannot loop forever
    for _ in range(max(config.iterations - state.step, 0)):
        parts = train_step(state, data, config)
        it = state.step
        if config.log_every and (it % config.log_every == 0 or it == config.iterations):
            psnr = holdout_psnr(state, dataset, config)
            rows.append((it, parts["loss_total"], parts["loss_ldr"], parts["loss_evs"], psnr))
            logger.info("iter %d loss %.5g ldr %.5g evs %.5g psnr %s", it, parts["loss_total"],
                        parts["loss_ldr"], parts["loss_evs"], psnr)
        if callback is not None:
            callback(state, parts)
    return state, rows
