"""Scene fields mapping 3D points to raw HDR emission and density.

Two backends share one interface (``params``, ``query``, ``query_backward``):

* :class:`VoxelField` stores raw values on grid nodes, interpolates them
  trilinearly and applies softplus.  It ignores view direction.
* :class:`MlpField` runs positional encodings of point and direction through a
  dense network with softplus outputs.

Both return exact zeros for points outside the bounding box, so empty space
renders to zero radiance.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Mlp, mlp_backward, mlp_forward, positional_encode, sigmoid, softplus


def _check_points(points, directions=None):
    points = np.asarray(points, dtype=np.float64)
    if points.shape[-1] != 3:
        raise ValueError("points must have a trailing dimension of 3")
    if np.isnan(points).any():
        raise ValueError("NaN point")
    if directions is not None:
        directions = np.asarray(directions, dtype=np.float64)
        norms = np.linalg.norm(directions, axis=-1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValueError("directions must have unit norm")
    return points, directions


class VoxelField:
    """Node-based grid of raw density and RGB emission over an axis-aligned box.

    ``resolution`` counts grid nodes per axis; node ``i`` sits at
    ``lo + i * (hi - lo) / (n - 1)``.  Parameters are one contiguous array of
    shape ``(nx, ny, nz, 4)`` holding ``[density, r, g, b]`` raw values.
    """

    def __init__(self, resolution, bounds=((-1, -1, -1), (1, 1, 1)), raw=None):
        self.resolution = tuple(int(n) for n in resolution)
        if len(self.resolution) != 3 or min(self.resolution) < 2:
            raise ValueError("resolution needs at least 2 nodes per axis")
        lo, hi = (np.asarray(b, dtype=np.float64) for b in bounds)
        if np.any(hi <= lo):
            raise ValueError("bounds must satisfy lo < hi")
        self.bounds = (lo, hi)
        shape = self.resolution + (4,)
        if raw is None:
            raw = np.zeros(shape)
        raw = np.ascontiguousarray(raw, dtype=np.float64)
        if raw.size != int(np.prod(shape)):
            raise ValueError(f"raw grid must have {int(np.prod(shape))} values")
        self.params = raw.reshape(-1)

    @property
    def raw(self):
        return self.params.reshape(self.resolution + (4,))

    @property
    def density_raw(self):
        return self.raw[..., 0]

    @property
    def emission_raw(self):
        return self.raw[..., 1:]

    def copy(self):
        return VoxelField(self.resolution, self.bounds, self.params.copy())

    def _corners(self, points):
        """Corner node indices ``(8, n)`` and trilinear weights for in-bounds points ``(n, 3)``."""
        lo, hi = self.bounds
        res = np.asarray(self.resolution)
        u = (points - lo) * ((res - 1) / (hi - lo))
        base = np.minimum(u.astype(np.int64), res - 2)
        frac = u - base
        ny, nz = self.resolution[1], self.resolution[2]
        root = (base[:, 0] * ny + base[:, 1]) * nz + base[:, 2]
        fx, fy, fz = frac[:, 0], frac[:, 1], frac[:, 2]
        gx, gy, gz = 1.0 - fx, 1.0 - fy, 1.0 - fz
        offsets = [(dx * ny + dy) * nz + dz for dx in (0, 1) for dy in (0, 1) for dz in (0, 1)]
        idx = root[None, :] + np.asarray(offsets)[:, None]
        wxy = [gx * gy, gx * fy, fx * gy, fx * fy]
        wts = np.stack([w * z for w in wxy for z in (gz, fz)])
        return idx, wts

    def _inside(self, points):
        lo, hi = self.bounds
        return np.all((points >= lo) & (points <= hi), axis=-1)

    def interpolate_raw(self, points):
        """Trilinear interpolation of the raw ``[density, r, g, b]`` values (in-bounds points)."""
        points, _ = _check_points(points)
        lo, hi = self.bounds
        flat = np.clip(points.reshape(-1, 3), lo, hi)
        idx, wts = self._corners(flat)
        table = self.params.reshape(-1, 4)
        out = np.zeros((flat.shape[0], 4))
        for c in range(8):
            out += wts[c][:, None] * table[idx[c]]
        return out.reshape(points.shape[:-1] + (4,))

    def forward(self, points, directions=None, validate=True):
        """``(emission, density, ctx)``; pass ``ctx`` to :meth:`backward`."""
        if validate:
            points, _ = _check_points(points, directions)
        shape = points.shape[:-1]
        flat = points.reshape(-1, 3)
        inside = np.flatnonzero(self._inside(flat))
        idx, wts = self._corners(flat[inside])
        table = self.params.reshape(-1, 4)
        pre = wts[0][:, None] * table[idx[0]]
        for c in range(1, 8):
            pre += wts[c][:, None] * table[idx[c]]
        act = np.zeros((flat.shape[0], 4))
        act[inside] = softplus(pre)
        act = act.reshape(shape + (4,))
        return act[..., 1:], act[..., 0], (inside, idx, wts, pre)

    def backward(self, ctx, upstream_e, upstream_sigma):
        inside, idx, wts, pre = ctx
        up_e = np.asarray(upstream_e, dtype=np.float64).reshape(-1, 3)[inside]
        up_s = np.asarray(upstream_sigma, dtype=np.float64).reshape(-1)[inside]
        g_pre = np.concatenate([up_s[:, None], up_e], axis=1) * sigmoid(pre)
        n_nodes = self.params.size // 4
        keys = idx.reshape(-1)
        grad = np.empty((n_nodes, 4))
        for c in range(4):
            grad[:, c] = np.bincount(keys, weights=(wts * g_pre[:, c]).reshape(-1), minlength=n_nodes)
        return grad.reshape(-1)

    def query(self, points, directions=None):
        """Return ``(emission, density)`` with shapes ``(..., 3)`` and ``(...)``."""
        e, sigma, _ = self.forward(points, directions)
        return e, sigma

    def query_backward(self, points, directions, upstream_e, upstream_sigma):
        """Flat parameter gradient of ``sum(upstream_e * e) + sum(upstream_sigma * sigma)``."""
        _, _, ctx = self.forward(points, directions)
        return self.backward(ctx, upstream_e, upstream_sigma)


class MlpField:
    """Dense-network scene field on encoded point and view direction.

    Points are normalized to ``[-1, 1]`` within ``bounds`` before encoding.
    Network output 0 is raw density, outputs 1..3 raw RGB emission; the
    network's softplus output activation keeps both non-negative.
    """

    def __init__(self, net: Mlp, pos_levels=10, dir_levels=4,
                 bounds=((-1, -1, -1), (1, 1, 1))):
        self.pos_levels = int(pos_levels)
        self.dir_levels = int(dir_levels)
        expected = self.input_width(self.pos_levels, self.dir_levels)
        if net.n_in != expected or net.n_out != 4:
            raise ValueError(f"network must map {expected} -> 4")
        if net.output_activation != "softplus":
            raise ValueError("MlpField needs a softplus output activation")
        self.net = net
        lo, hi = (np.asarray(b, dtype=np.float64) for b in bounds)
        self.bounds = (lo, hi)

    @staticmethod
    def input_width(pos_levels, dir_levels):
        return 2 * (pos_levels + 1) * 3 + 2 * (dir_levels + 1) * 3

    @classmethod
    def initialized(cls, hidden=(64, 64, 64, 64), pos_levels=10, dir_levels=4,
                    bounds=((-1, -1, -1), (1, 1, 1)), rng=None, hidden_activation="relu"):
        widths = [cls.input_width(pos_levels, dir_levels), *hidden, 4]
        net = Mlp.initialized(widths, rng, hidden_activation, "softplus")
        return cls(net, pos_levels, dir_levels, bounds)

    @property
    def params(self):
        return self.net.params

    @params.setter
    def params(self, value):
        self.net.params = value

    def copy(self):
        return MlpField(self.net.copy(), self.pos_levels, self.dir_levels, self.bounds)

    def _features(self, points, directions):
        lo, hi = self.bounds
        unit = 2.0 * (points - lo) / (hi - lo) - 1.0
        inside = np.all((points >= lo) & (points <= hi), axis=-1)
        if directions is None:
            directions = np.broadcast_to([0.0, 0.0, 1.0], points.shape)
        feats = np.concatenate([positional_encode(unit, self.pos_levels),
                                positional_encode(directions, self.dir_levels)], axis=-1)
        return feats.reshape(-1, feats.shape[-1]), inside

    def forward(self, points, directions=None, validate=True):
        if validate:
            points, directions = _check_points(points, directions)
        feats, inside = self._features(points, directions)
        out = mlp_forward(self.net, feats).reshape(points.shape[:-1] + (4,))
        out = out * inside[..., None]
        return out[..., 1:], out[..., 0], (feats, inside)

    def backward(self, ctx, upstream_e, upstream_sigma):
        feats, inside = ctx
        up = np.concatenate([np.asarray(upstream_sigma, dtype=np.float64)[..., None],
                             np.asarray(upstream_e, dtype=np.float64)], axis=-1)
        up = (up * inside[..., None]).reshape(-1, 4)
        _, grad = mlp_backward(self.net, feats, up)
        return grad

    def query(self, points, directions=None):
        e, sigma, _ = self.forward(points, directions)
        return e, sigma

    def query_backward(self, points, directions, upstream_e, upstream_sigma):
        _, _, ctx = self.forward(points, directions)
        return self.backward(ctx, upstream_e, upstream_sigma)
