"""Per-channel camera response curves applied to integrated raw pixel values.

Each colour channel owns a scalar network ``ln(exposure) -> LDR value`` with a
sigmoid output.  The map runs once per pixel, after exposure integration, on
``ln(max(raw * dt, log_floor))``.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Mlp, mlp_backward, mlp_forward

LOG_FLOOR = 1e-6


class CrfField:
    """Three independent ``1 -> ... -> 1`` networks, one per RGB channel."""

    def __init__(self, nets, log_floor=LOG_FLOOR):
        nets = list(nets)
        if len(nets) != 3:
            raise ValueError("need exactly three channel networks")
        for net in nets:
            if net.n_in != 1 or net.n_out != 1 or net.output_activation != "sigmoid":
                raise ValueError("channel networks must be 1 -> 1 with sigmoid output")
        if log_floor <= 0:
            raise ValueError("log_floor must be positive")
        self.nets = nets
        self.log_floor = float(log_floor)

    @classmethod
    def initialized(cls, hidden=(32, 32), rng=None, hidden_activation="relu",
                    log_floor=LOG_FLOOR):
        rng = np.random.default_rng(rng)
        nets = [Mlp.initialized([1, *hidden, 1], rng, hidden_activation, "sigmoid")
                for _ in range(3)]
        return cls(nets, log_floor)

    @property
    def param_sizes(self):
        return [net.n_params for net in self.nets]

    @property
    def params(self):
        return np.concatenate([net.params for net in self.nets])

    @params.setter
    def params(self, value):
        value = np.asarray(value, dtype=np.float64)
        off = 0
        for net in self.nets:
            net.params = value[off:off + net.n_params].copy()
            off += net.n_params

    def copy(self):
        return CrfField([net.copy() for net in self.nets], self.log_floor)

    def curve(self, log_exposure):
        """Evaluate all channels on log exposures ``(n,)``; returns ``(n, 3)``."""
        u = np.asarray(log_exposure, dtype=np.float64).reshape(-1, 1)
        return np.concatenate([mlp_forward(net, u) for net in self.nets], axis=1)

    def curve_backward(self, log_exposure, upstream):
        """Returns ``(d/d log_exposure (n, 3), flat param grad)``."""
        u = np.asarray(log_exposure, dtype=np.float64).reshape(-1, 1)
        upstream = np.asarray(upstream, dtype=np.float64).reshape(-1, 3)
        gin, gp = [], []
        for c, net in enumerate(self.nets):
            gi, g = mlp_backward(net, u, upstream[:, c:c + 1])
            gin.append(gi[:, 0])
            gp.append(g)
        return np.stack(gin, axis=1), np.concatenate(gp)


def _log_exposure(crf, raw, dt):
    raw = np.asarray(raw, dtype=np.float64)
    if dt <= 0:
        raise ValueError("exposure time must be positive")
    if raw.shape[-1] != 3:
        raise ValueError("raw values need a trailing RGB axis")
    if np.any(raw < 0):
        raise ValueError("negative raw pixel value")
    x = raw * dt
    clamped = x <= crf.log_floor
    return np.log(np.maximum(x, crf.log_floor)), clamped


def crf_apply(crf: CrfField, raw, dt):
    """Map raw RGB values ``(..., 3)`` at exposure ``dt`` to LDR values in (0, 1)."""
    u, _ = _log_exposure(crf, raw, dt)
    flat = u.reshape(-1, 3)
    out = np.stack([mlp_forward(net, flat[:, c:c + 1])[:, 0]
                    for c, net in enumerate(crf.nets)], axis=1)
    return out.reshape(u.shape)


def crf_apply_backward(crf: CrfField, raw, dt, upstream):
    """Returns ``(raw_grad, [grad_r, grad_g, grad_b])``; zero raw gradient where clamped."""
    raw = np.asarray(raw, dtype=np.float64)
    u, clamped = _log_exposure(crf, raw, dt)
    flat = u.reshape(-1, 3)
    up = np.asarray(upstream, dtype=np.float64).reshape(-1, 3)
    g_u = np.empty_like(flat)
    grads = []
    for c, net in enumerate(crf.nets):
        gi, g = mlp_backward(net, flat[:, c:c + 1], up[:, c:c + 1])
        g_u[:, c] = gi[:, 0]
        grads.append(g)
    g_u = g_u.reshape(u.shape)
    safe = np.where(clamped, 1.0, raw)
    raw_grad = np.where(clamped, 0.0, g_u / safe)
    return raw_grad, grads


def crf_export(crf: CrfField, log_range, n):
    """Table of ``n`` evenly spaced log exposures with per-channel outputs, ``(n, 4)``."""
    lo, hi = log_range
    if not lo < hi:
        raise ValueError("need lo < hi")
    if n < 2:
        raise ValueError("need at least two samples")
    xs = np.linspace(lo, hi, int(n))
    return np.column_stack([xs, crf.curve(xs)])


def monotone_penalty(crf: CrfField, log_range, n=64):
    """Soft penalty ``sum(relu(-slope)^2)`` on the sampled curve and its param gradient."""
    xs = np.linspace(log_range[0], log_range[1], n)
    ys = crf.curve(xs)
    d = np.diff(ys, axis=0)
    neg = np.minimum(d, 0.0)
    value = float(np.sum(neg * neg))
    g_d = 2.0 * neg
    g_y = np.zeros_like(ys)
    g_y[1:] += g_d
    g_y[:-1] -= g_d
    _, g = crf.curve_backward(xs, g_y)
    return value, g
