"""Event streams and the mapping from rendered radiance to expected event counts.

The differentiable path for one pixel is::

    E (b+1 radiances on the Bayer plane)
      -> eps_i = latency_net(ln E_i)               latency coefficients
      -> L_i = (1 - eps_i) L_{i-1} + eps_i E_i     first-order low-pass, L_0 = E_0
      -> B'_i = floor0((ln L_{i+1} - ln L_i) / threshold)
      -> B_i  = B'_i - h_i                         h precomputed from real events

``floor0`` truncates toward zero in the forward pass and is treated as the
identity in the backward pass (straight-through), unless counts are run in
``"linear"`` mode where no truncation happens at all.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Mlp, mlp_backward, mlp_forward
from .crf import LOG_FLOOR

SOFT_COUNT_MODES = ("straight_through", "linear")


@dataclass
class EventStream:
    """Time-sorted events with integer pixel coordinates and +-1 polarity."""

    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    p: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.int64).reshape(-1)
        self.y = np.asarray(self.y, dtype=np.int64).reshape(-1)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(-1)
        self.p = np.asarray(self.p, dtype=np.int64).reshape(-1)
        n = self.t.size
        if not (self.x.size == self.y.size == self.p.size == n):
            raise ValueError("event field lengths differ")
        if n:
            if self.x.min() < 0 or self.x.max() >= self.width or self.y.min() < 0 \
                    or self.y.max() >= self.height:
                raise ValueError("event outside sensor bounds")
            if not np.all(np.isfinite(self.t)):
                raise ValueError("non-finite event timestamp")
            if not np.all(np.abs(self.p) == 1):
                raise ValueError("polarity must be +1 or -1")
            if np.any(np.diff(self.t) < 0):
                raise ValueError("events must be sorted by time")

    @classmethod
    def from_unsorted(cls, x, y, t, p, width, height):
        order = np.argsort(np.asarray(t, dtype=np.float64), kind="stable")
        return cls(np.asarray(x)[order], np.asarray(y)[order], np.asarray(t)[order],
                   np.asarray(p)[order], width, height)

    @classmethod
    def empty(cls, width, height):
        return cls(np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0), width, height)

    def __len__(self):
        return int(self.t.size)

    def slice_time(self, t0, t1):
        """Events with ``t0 <= t <= t1``."""
        a = np.searchsorted(self.t, t0, side="left")
        b = np.searchsorted(self.t, t1, side="right")
        return EventStream(self.x[a:b], self.y[a:b], self.t[a:b], self.p[a:b],
                           self.width, self.height)


@dataclass
class BinGrid:
    """Signed per-pixel event counts for each of ``b`` temporal bins."""

    boundaries: np.ndarray
    counts: np.ndarray  # (b, H, W) int

    @property
    def b(self):
        return len(self.boundaries) - 1


def floor_toward_zero(v):
    return np.trunc(v).astype(np.int64)


def ideal_event_count(l1, l2, threshold):
    """Number of events an ideal sensor fires when radiance moves from ``l1`` to ``l2``."""
    l1 = np.asarray(l1, dtype=np.float64)
    l2 = np.asarray(l2, dtype=np.float64)
    if np.any(l1 <= 0) or np.any(l2 <= 0):
        raise ValueError("radiance must be positive")
    if np.any(np.asarray(threshold) <= 0):
        raise ValueError("threshold must be positive")
    return floor_toward_zero((np.log(l2) - np.log(l1)) / threshold)


def bayer_channel(x, y):
    """RGGB channel index (0=R, 1=G, 2=B) of pixel ``(x, y)``, R anchored at (0, 0)."""
    return (np.asarray(y) % 2) + (np.asarray(x) % 2)


def bayer_adapt(rgb):
    """Mosaic an ``(..., H, W, 3)`` image onto a single RGGB plane ``(..., H, W)``."""
    rgb = np.asarray(rgb)
    h, w = rgb.shape[-3], rgb.shape[-2]
    ch = bayer_channel(np.arange(w)[None, :], np.arange(h)[:, None])
    return np.take_along_axis(rgb, np.broadcast_to(ch[..., None], rgb.shape[:-1] + (1,)),
                              axis=-1)[..., 0]


class EventMappingField:
    """Learned latency network plus contrast threshold.

    ``net`` maps ``ln(max(E, log_floor))`` to a latency coefficient in
    ``(0, 1)`` through its sigmoid output; ``1`` means no latency.
    """

    def __init__(self, net: Mlp, threshold=0.2, bayer="rggb", log_floor=LOG_FLOOR):
        if net.n_in != 1 or net.n_out != 1 or net.output_activation != "sigmoid":
            raise ValueError("latency network must be 1 -> 1 with sigmoid output")
        if threshold <= 0:
            raise ValueError("threshold must be positive")
        if bayer not in ("rggb", "none"):
            raise ValueError("bayer must be 'rggb' or 'none'")
        self.net = net
        self.threshold = float(threshold)
        self.bayer = bayer
        self.log_floor = float(log_floor)

    @classmethod
    def initialized(cls, hidden=(16,), rng=None, threshold=0.2, bayer="rggb",
                    output_bias=2.0, hidden_activation="tanh"):
        # positive output bias starts near eps ~ 0.9, i.e. little latency
        net = Mlp.initialized([1, *hidden, 1], rng, hidden_activation, "sigmoid",
                              output_bias=output_bias)
        return cls(net, threshold, bayer)

    @property
    def params(self):
        return self.net.params

    @params.setter
    def params(self, value):
        self.net.params = np.asarray(value, dtype=np.float64).copy()

    def copy(self):
        return EventMappingField(self.net.copy(), self.threshold, self.bayer, self.log_floor)

    def plane(self, radiance_rgb, x, y):
        """Event-sensor radiance for rendered RGB ``(..., 3)`` at pixels ``x, y``."""
        radiance_rgb = np.asarray(radiance_rgb, dtype=np.float64)
        if self.bayer == "none":
            return radiance_rgb.mean(axis=-1)
        ch = np.broadcast_to(bayer_channel(x, y), radiance_rgb.shape[:-1])
        return np.take_along_axis(radiance_rgb, ch[..., None], axis=-1)[..., 0]


def latency_coefficient(field: EventMappingField, radiance):
    """Latency coefficient for event-plane radiance of any shape."""
    radiance = np.asarray(radiance, dtype=np.float64)
    u = np.log(np.maximum(radiance, field.log_floor)).reshape(-1, 1)
    return mlp_forward(field.net, u).reshape(radiance.shape)


def latency_coefficient_backward(field: EventMappingField, radiance, upstream):
    """Returns ``(radiance_grad, param_grad)``; zero radiance gradient where floored."""
    radiance = np.asarray(radiance, dtype=np.float64)
    floored = radiance <= field.log_floor
    u = np.log(np.maximum(radiance, field.log_floor)).reshape(-1, 1)
    g_u, g_p = mlp_backward(field.net, u, np.asarray(upstream, dtype=np.float64).reshape(-1, 1))
    g_u = g_u.reshape(radiance.shape)
    g_r = np.where(floored, 0.0, g_u / np.where(floored, 1.0, radiance))
    return g_r, g_p


def lowpass_sequence(radiance, eps):
    """First-order low-pass along the last axis; ``L_0`` is the first radiance."""
    radiance = np.asarray(radiance, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if radiance.shape != eps.shape:
        raise ValueError("radiance and coefficient sequences differ in shape")
    out = np.empty_like(radiance)
    out[..., 0] = radiance[..., 0]
    for i in range(1, radiance.shape[-1]):
        out[..., i] = (1.0 - eps[..., i]) * out[..., i - 1] + eps[..., i] * radiance[..., i]
    return out


def lowpass_sequence_backward(radiance, eps, lowpassed, upstream):
    """Gradients of ``sum(upstream * L)`` w.r.t. radiance and coefficients."""
    g_l = np.array(upstream, dtype=np.float64, copy=True)
    g_r = np.zeros_like(g_l)
    g_eps = np.zeros_like(g_l)
    for i in range(radiance.shape[-1] - 1, 0, -1):
        g = g_l[..., i]
        g_r[..., i] += eps[..., i] * g
        g_eps[..., i] += (radiance[..., i] - lowpassed[..., i - 1]) * g
        g_l[..., i - 1] += (1.0 - eps[..., i]) * g
    g_r[..., 0] += g_l[..., 0]
    return g_r, g_eps


def predicted_counts(lowpassed, threshold, mode="straight_through"):
    """Expected signed event counts between consecutive low-passed radiances."""
    lowpassed = np.asarray(lowpassed, dtype=np.float64)
    if np.any(lowpassed <= 0):
        raise ValueError("low-passed radiance must be positive")
    ratio = np.diff(np.log(lowpassed), axis=-1) / threshold
    if mode == "straight_through":
        return np.trunc(ratio)
    if mode == "linear":
        return ratio
    raise ValueError(f"unknown soft count mode {mode!r}")


def predicted_counts_backward(lowpassed, threshold, upstream):
    """Gradient w.r.t. the low-passed radiances; truncation passes gradients unchanged."""
    lowpassed = np.asarray(lowpassed, dtype=np.float64)
    g = np.asarray(upstream, dtype=np.float64) / threshold
    g_log = np.zeros_like(lowpassed)
    g_log[..., 1:] += g
    g_log[..., :-1] -= g
    return g_log / lowpassed


def offset_value(ratio_first, p_first, ratio_next, p_first_next):
    """Calibration offset of one bin from its boundary terms.

    ``ratio_*`` is ``None`` when the events needed to form it are missing (the
    term then uses 0.5); ``p_*`` is ``None`` when the bin holding that first
    event is empty (the term is dropped).
    """
    a = 0.0 if p_first is None else (0.5 if ratio_first is None else ratio_first) * p_first
    b = 0.0 if p_first_next is None else \
        (0.5 if ratio_next is None else ratio_next) * p_first_next
    return a - b


def _bin_index(t, boundaries):
    b = len(boundaries) - 1
    idx = np.searchsorted(boundaries, t, side="right") - 1
    idx = np.where(t == boundaries[-1], b - 1, idx)
    valid = (idx >= 0) & (idx < b)
    return idx, valid


def _first_last(stream, boundaries):
    """Per-bin first/last event time and first polarity at every pixel."""
    b = len(boundaries) - 1
    h, w = stream.height, stream.width
    t_first = np.full((b, h, w), np.nan)
    t_last = np.full((b, h, w), np.nan)
    p_first = np.zeros((b, h, w), dtype=np.int64)
    idx, valid = _bin_index(stream.t, boundaries)
    key = ((idx[valid] * h + stream.y[valid]) * w + stream.x[valid])
    ts, ps = stream.t[valid], stream.p[valid]
    # stream is time-sorted, so the first occurrence of a key is its earliest event
    keys, first = np.unique(key, return_index=True)
    t_first.reshape(-1)[keys] = ts[first]
    p_first.reshape(-1)[keys] = ps[first]
    keys_r, last_r = np.unique(key[::-1], return_index=True)
    t_last.reshape(-1)[keys_r] = ts[::-1][last_r]
    return t_first, t_last, p_first


def offset_grid(stream: EventStream, boundaries):
    """Calibration offsets for every pixel and bin, shape ``(b, H, W)``.

    For bin ``i`` the offset is ``phi_a * p_first[i] - phi_b * p_first[i+1]``
    where ``phi_a = (t_i - t_last[i-1]) / (t_first[i] - t_last[i-1])`` and
    ``phi_b = (t_{i+1} - t_last[i]) / (t_first[i+1] - t_last[i])``.  A ratio
    whose events are missing falls back to 0.5; a term whose first-event bin
    is empty (or does not exist) is dropped.
    """
    boundaries = np.asarray(boundaries, dtype=np.float64)
    t_first, t_last, p_first = _first_last(stream, boundaries)
    b = len(boundaries) - 1
    has = ~np.isnan(t_first)
    out = np.zeros(t_first.shape)
    with np.errstate(invalid="ignore", divide="ignore"):
        for i in range(b):
            if i > 0:
                ratio = (boundaries[i] - t_last[i - 1]) / (t_first[i] - t_last[i - 1])
                ok = has[i - 1] & has[i]
                phi = np.where(ok, ratio, 0.5)
            else:
                phi = np.full(out.shape[1:], 0.5)
            out[i] += np.where(has[i], phi * p_first[i], 0.0)
            if i + 1 < b:
                ratio = (boundaries[i + 1] - t_last[i]) / (t_first[i + 1] - t_last[i])
                phi = np.where(has[i] & has[i + 1], ratio, 0.5)
                out[i] -= np.where(has[i + 1], phi * p_first[i + 1], 0.0)
    return out


def calibration_offset(stream: EventStream, boundaries, pixel):
    """Offsets ``h_i`` of one pixel ``(x, y)`` for each of the ``b`` bins."""
    x, y = pixel
    boundaries = np.asarray(boundaries, dtype=np.float64)
    mask = (stream.x == x) & (stream.y == y)
    sub = EventStream(np.zeros(mask.sum()), np.zeros(mask.sum()), stream.t[mask],
                      stream.p[mask], 1, 1)
    return offset_grid(sub, boundaries)[:, 0, 0]


def calibrated_counts(predicted, offsets):
    predicted = np.asarray(predicted, dtype=np.float64)
    offsets = np.asarray(offsets, dtype=np.float64)
    if predicted.shape != offsets.shape:
        raise ValueError("predicted counts and offsets differ in shape")
    return predicted - offsets


def bin_counts(stream: EventStream, boundaries):
    """Signed per-pixel sums of polarity for ``t`` in ``[t_i, t_{i+1})`` (last bin closed)."""
    boundaries = np.asarray(boundaries, dtype=np.float64)
    b = len(boundaries) - 1
    counts = np.zeros((b, stream.height, stream.width), dtype=np.int64)
    idx, valid = _bin_index(stream.t, boundaries)
    np.add.at(counts, (idx[valid], stream.y[valid], stream.x[valid]), stream.p[valid])
    return counts


def divide_events(stream: EventStream, t_start, t_end, b):
    """Split ``[t_start, t_end]`` into ``b`` bins holding equal numbers of events.

    Bin sizes differ by at most one, with the remainder going to the earliest
    bins.  Each interior boundary sits midway between the last event of one
    bin and the first event of the next.  With fewer than ``b`` events the
    interval is divided uniformly in time instead.
    """
    if b < 1:
        raise ValueError("need at least one bin")
    if not t_start < t_end:
        raise ValueError("need t_start < t_end")
    window = stream.slice_time(t_start, t_end)
    n = len(window)
    if n < b:
        boundaries = np.linspace(t_start, t_end, b + 1)
    else:
        sizes = np.full(b, n // b)
        sizes[: n % b] += 1
        ends = np.cumsum(sizes)  # index one past the last event of each bin
        boundaries = np.empty(b + 1)
        boundaries[0], boundaries[-1] = t_start, t_end
        for k in range(1, b):
            last, first = window.t[ends[k - 1] - 1], window.t[ends[k - 1]]
            mid = 0.5 * (last + first)
            # adjacent floats can round the midpoint down onto ``last``
            boundaries[k] = first if mid <= last else mid
    return boundaries, BinGrid(boundaries, bin_counts(window, boundaries))
