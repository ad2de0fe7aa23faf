"""Metric reports for a trained state against a simulated dataset."""

from __future__ import annotations

import numpy as np

from .crf import crf_apply
from .dataset import Dataset
from .metrics import eval_hdr, gauge_scale, psnr, reinhard, ssim
from .train import render_hdr

REPORT_COLUMNS = ("task", "view_id", "psnr", "ssim")
PHI_DEFAULT = 62.5


def _phi(dataset):
    return float(dataset.meta.get("phi", PHI_DEFAULT))


def _eval_dt(dataset):
    return float(dataset.meta.get("eval_exposure", dataset.exposure))


def blur_baseline(dataset: Dataset):
    """Rows comparing each test view's blurry HDR against its sharp ground truth."""
    phi, dt = _phi(dataset), _eval_dt(dataset)
    return [{"task": "hdr_blur_baseline", "view_id": t.view_id,
             **eval_hdr(t.hdr_blur, t.hdr_gt, phi, dt)}
            for t in dataset.tests if t.hdr_blur is not None]


def training_log_range(dataset: Dataset, lo_pct=1.0, hi_pct=99.0):
    """Percentile range of ``ln(radiance * dt)`` over the training views' sharp radiance."""
    vals = [np.log(np.maximum(v.gt_sharp_hdr * v.exposure, 1e-12)).ravel()
            for v in dataset.views if v.gt_sharp_hdr is not None]
    if not vals:
        raise ValueError("dataset has no ground-truth training radiance")
    vals = np.concatenate(vals)
    return float(np.percentile(vals, lo_pct)), float(np.percentile(vals, hi_pct))


def crf_error(crf, scale, log_range, phi=PHI_DEFAULT, n=256):
    """Mean and max abs difference between the learned curves and Reinhard.

    The learned curve sees radiance divided by the per-channel ``scale``
    (see :func:`~evhdr.metrics.gauge_scale`), so channel ``c`` is compared
    as ``f_c(x - ln s_c)`` against ``reinhard(exp(x))``.
    """
    xs = np.linspace(log_range[0], log_range[1], n)
    target = reinhard(np.exp(xs), 1.0, phi)
    shifted = xs[:, None] - np.log(np.asarray(scale, dtype=np.float64))[None, :]
    pred = np.stack([crf.curve(shifted[:, c])[:, c] for c in range(3)], axis=1)
    err = np.abs(pred - target[:, None])
    return float(err.mean()), float(err.max())


def evaluate(state, dataset: Dataset, n_samples=64, novel_factor=4.0):
    """Per-view metric rows plus per-task means, and the gauge scale used.

    Tasks: ``hdr`` (test views, scale-aligned then tone mapped),
    ``hdr_blur_baseline``, ``deblur`` (sharp LDR at each training view's
    reference pose through the learned curves) and ``novel_exposure`` (test
    views rendered at ``novel_factor`` times the evaluation exposure).
    """
    phi, dt = _phi(dataset), _eval_dt(dataset)
    cam, near, far = dataset.camera, dataset.near, dataset.far
    rows = []
    preds = [render_hdr(state, cam, t.pose, near, far, n_samples) for t in dataset.tests]
    scale = gauge_scale(preds, [t.hdr_gt for t in dataset.tests]) if preds else np.ones(3)
    for t, p in zip(dataset.tests, preds):
        rows.append({"task": "hdr", "view_id": t.view_id,
                     **eval_hdr(np.maximum(p, 0.0) * scale, t.hdr_gt, phi, dt)})
        novel = novel_factor * dt
        a = crf_apply(state.crf, np.maximum(p, 0.0), novel)
        b = reinhard(t.hdr_gt, novel, phi)
        rows.append({"task": "novel_exposure", "view_id": t.view_id,
                     "psnr": psnr(a, b), "ssim": ssim(a, b)})
    rows.extend(blur_baseline(dataset))
    for v in dataset.views:
        if v.gt_sharp_hdr is None:
            continue
        p = render_hdr(state, cam, v.reference_pose, near, far, n_samples)
        a = crf_apply(state.crf, np.maximum(p, 0.0), v.exposure)
        b = reinhard(v.gt_sharp_hdr, v.exposure, phi)
        rows.append({"task": "deblur", "view_id": v.view_id,
                     "psnr": psnr(a, b), "ssim": ssim(a, b)})
    rows.sort(key=lambda r: (r["task"], r["view_id"]))
    means = []
    for task in sorted({r["task"] for r in rows}):
        sel = [r for r in rows if r["task"] == task]
        means.append({"task": task, "view_id": "mean",
                      "psnr": float(np.mean([r["psnr"] for r in sel])),
                      "ssim": float(np.mean([r["ssim"] for r in sel]))})
    return rows + means, scale
