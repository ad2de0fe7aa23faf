"""Image quality metrics and HDR evaluation through a shared tone map."""

from __future__ import annotations

import numpy as np
from scipy.ndimage import correlate1d

PSNR_CAP = 99.0


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b):
    """Peak signal-to-noise ratio in dB for images in [0, 1]; capped at 99 dB."""
    a, b = _pair(a, b)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(1.0 / mse)))


def gaussian_window(size=11, sigma=1.5):
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img, g):
    half = len(g) // 2
    out = correlate1d(img, g, axis=0, mode="constant")
    out = correlate1d(out, g, axis=1, mode="constant")
    return out[half:img.shape[0] - half, half:img.shape[1] - half]


def ssim(a, b, data_range=1.0, win_size=11, sigma=1.5, k1=0.01, k2=0.03):
    """Mean structural similarity over all fully-covered 11x11 Gaussian windows.

    Colour images are scored per channel and averaged.
    """
    a, b = _pair(a, b)
    if min(a.shape[0], a.shape[1]) < win_size:
        raise ValueError(f"images must be at least {win_size}x{win_size}")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    g = gaussian_window(win_size, sigma)
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    scores = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        mx, my = _filter_valid(x, g), _filter_valid(y, g)
        sxx = _filter_valid(x * x, g) - mx * mx
        syy = _filter_valid(y * y, g) - my * my
        sxy = _filter_valid(x * y, g) - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        scores.append(np.mean(num / den))
    return float(np.mean(scores))


def reinhard(hdr, dt, phi):
    """Reinhard curve with display gamma: ``(k / (k + 1)) ** (1 / 2.2)``, ``k = phi * dt * hdr``."""
    hdr = np.asarray(hdr, dtype=np.float64)
    if np.any(hdr < 0):
        raise ValueError("HDR values must be non-negative")
    if dt <= 0 or phi <= 0:
        raise ValueError("exposure and scale must be positive")
    k = phi * dt * hdr
    return (k / (k + 1.0)) ** (1.0 / 2.2)


def eval_hdr(pred_hdr, gt_hdr, phi, dt):
    """PSNR and SSIM after tone-mapping both images with identical parameters."""
    pred_hdr, gt_hdr = _pair(pred_hdr, gt_hdr)
    a = reinhard(np.maximum(pred_hdr, 0.0), dt, phi)
    b = reinhard(gt_hdr, dt, phi)
    return {"psnr": psnr(a, b), "ssim": ssim(a, b)}


def _pixels(images):
    if isinstance(images, (list, tuple)):
        return np.concatenate([np.asarray(i, dtype=np.float64).reshape(-1, 3) for i in images])
    return np.asarray(images, dtype=np.float64).reshape(-1, 3)


def gauge_scale(preds, gts, floor=1e-6):
    """Per-channel factor ``s`` with ``s * pred ~ gt`` (median log ratio).

    Radiance recovered through a learned response curve is only determined
    up to one scale per channel; evaluation fixes that freedom with this
    factor before tone mapping.
    """
    p, g = _pixels(preds), _pixels(gts)
    if p.shape != g.shape:
        raise ValueError("prediction and ground truth differ in size")
    scale = np.ones(3)
    for c in range(3):
        ok = (p[:, c] > floor) & (g[:, c] > floor)
        if ok.any():
            scale[c] = float(np.exp(np.median(np.log(g[ok, c]) - np.log(p[ok, c]))))
    return scale
