"""Pinhole rays, depth sampling, volume rendering and exposure integration."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation, Slerp


@dataclass(frozen=True)
class Camera:
    """Pinhole intrinsics in pixels; camera looks along +z with y pointing down."""

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("sensor must be at least 1x1")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the sensor")

    @classmethod
    def from_fov(cls, width, height, fov_x_deg):
        fx = 0.5 * width / np.tan(0.5 * np.radians(fov_x_deg))
        return cls(int(width), int(height), fx, fx, width / 2.0, height / 2.0)

    def to_dict(self):
        return {"width": self.width, "height": self.height, "fx": self.fx,
                "fy": self.fy, "cx": self.cx, "cy": self.cy}


@dataclass(frozen=True)
class TimedPose:
    """Camera-to-world rigid transform at time ``t`` (seconds)."""

    t: float
    pose: np.ndarray

    def __post_init__(self):
        pose = np.asarray(self.pose, dtype=np.float64).reshape(4, 4)
        rot = pose[:3, :3]
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-6):
            raise ValueError("pose rotation block is not orthonormal")
        object.__setattr__(self, "pose", pose)


def look_at(eye, target, up=(0.0, -1.0, 0.0)):
    """Camera-to-world matrix for a camera at ``eye`` looking at ``target``.

    ``up`` is the world direction that should appear towards the top of the
    image (image y points down, so the camera's y axis is ``-up``).
    """
    eye = np.asarray(eye, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - eye
    z /= np.linalg.norm(z)
    y = -np.asarray(up, dtype=np.float64)
    x = np.cross(y, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    pose = np.eye(4)
    pose[:3, 0], pose[:3, 1], pose[:3, 2], pose[:3, 3] = x, y, z, eye
    return pose


def interpolate_poses(timed_poses, times):
    """Poses at arbitrary ``times`` by slerp on rotation and lerp on translation.

    Times outside the sampled range are clamped to the end poses.
    """
    ts = np.array([tp.t for tp in timed_poses], dtype=np.float64)
    mats = np.stack([tp.pose for tp in timed_poses])
    times = np.clip(np.asarray(times, dtype=np.float64), ts[0], ts[-1])
    if len(ts) == 1:
        return np.repeat(mats, len(np.atleast_1d(times)), axis=0)
    rots = Slerp(ts, Rotation.from_matrix(mats[:, :3, :3]))(times)
    out = np.tile(np.eye(4), (len(times), 1, 1))
    out[:, :3, :3] = rots.as_matrix()
    for k in range(3):
        out[:, k, 3] = np.interp(times, ts, mats[:, k, 3])
    return out


def pixel_grid(camera):
    """All ``(x, y)`` pixel coordinates in row-major order, shape ``(H*W, 2)``."""
    ys, xs = np.mgrid[0:camera.height, 0:camera.width]
    return np.stack([xs.ravel(), ys.ravel()], axis=-1)


def generate_rays(camera: Camera, pose, pixels):
    """Origins and unit directions for integer pixels ``(..., 2)`` as ``(x, y)``."""
    pose = pose.pose if isinstance(pose, TimedPose) else np.asarray(pose, dtype=np.float64)
    pixels = np.asarray(pixels)
    x, y = pixels[..., 0], pixels[..., 1]
    if np.any((x < 0) | (x >= camera.width) | (y < 0) | (y >= camera.height)):
        raise ValueError("pixel outside sensor bounds")
    cam = np.stack([(x + 0.5 - camera.cx) / camera.fx,
                    (y + 0.5 - camera.cy) / camera.fy,
                    np.ones(x.shape)], axis=-1)
    d = cam @ pose[:3, :3].T
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    o = np.broadcast_to(pose[:3, 3], d.shape).copy()
    return o, d


def generate_ray(camera, pose, pixel):
    o, d = generate_rays(camera, pose, np.asarray(pixel)[None])
    return o[0], d[0]


def sample_depths(near, far, n, mode="uniform", rng=None, n_rays=None):
    """Depths along a ray and their spacings.

    ``uniform`` places one sample at each of ``n`` equal bin midpoints;
    ``stratified`` draws one uniform sample per bin.  The last spacing runs to
    ``far``.  With ``n_rays`` set, returns ``(n_rays, n)`` arrays.
    """
    if not 0 <= near < far:
        raise ValueError("need 0 <= near < far")
    if n < 1:
        raise ValueError("need at least one sample")
    shape = (n,) if n_rays is None else (n_rays, n)
    step = (far - near) / n
    if mode == "uniform":
        u = np.full(shape, 0.5)
    elif mode == "stratified":
        u = np.random.default_rng(rng).random(shape)
    else:
        raise ValueError(f"unknown sampling mode {mode!r}")
    depths = near + (np.arange(n) + u) * step
    deltas = np.empty_like(depths)
    deltas[..., :-1] = np.diff(depths, axis=-1)
    deltas[..., -1] = far - depths[..., -1]
    return depths, deltas


def composite(emission, sigma, deltas):
    """Volume-render samples ``(..., N, 3)``, ``(..., N)``; returns ``(E, ctx)``."""
    tau = sigma * deltas
    # transmittance before each sample: exp of exclusive cumulative optical depth
    cum = np.cumsum(tau, axis=-1)
    excl = np.zeros_like(cum)
    excl[..., 1:] = cum[..., :-1]
    trans = np.exp(-excl)
    trans_next = np.exp(-cum)
    weights = trans * -np.expm1(-tau)
    E = np.einsum("...n,...nc->...c", weights, emission)
    return E, (emission, deltas, weights, trans_next)


def composite_backward(ctx, upstream):
    """Gradients of ``sum(upstream * E)`` w.r.t. per-sample emission and density."""
    emission, deltas, weights, trans_next = ctx
    upstream = np.asarray(upstream, dtype=np.float64)
    g_e = weights[..., None] * upstream[..., None, :]
    c = np.einsum("...nc,...c->...n", emission, upstream)
    wc = weights * c
    # suffix sum over samples strictly behind each sample
    suffix = np.cumsum(wc[..., ::-1], axis=-1)[..., ::-1] - wc
    g_sigma = deltas * (trans_next * c - suffix)
    return g_e, g_sigma


def render_rays(field, origins, directions, depths, deltas):
    """Raw HDR radiance per ray; returns ``(E, ctx)`` for :func:`render_rays_backward`."""
    points = origins[..., None, :] + depths[..., None] * directions[..., None, :]
    dirs = np.broadcast_to(directions[..., None, :], points.shape)
    e, sigma, fctx = field.forward(points, dirs, validate=False)
    E, cctx = composite(e, sigma, deltas)
    return E, (fctx, cctx)


def render_rays_backward(field, ctx, upstream):
    fctx, cctx = ctx
    g_e, g_sigma = composite_backward(cctx, upstream)
    return field.backward(fctx, g_e, g_sigma)


def render_ray(field, origin, direction, depths, deltas):
    E, _ = render_rays(field, np.asarray(origin, float)[None], np.asarray(direction, float)[None],
                       np.asarray(depths, float)[None], np.asarray(deltas, float)[None])
    return E[0]


def render_ray_backward(field, origin, direction, depths, deltas, upstream):
    _, ctx = render_rays(field, np.asarray(origin, float)[None], np.asarray(direction, float)[None],
                         np.asarray(depths, float)[None], np.asarray(deltas, float)[None])
    return render_rays_backward(field, ctx, np.asarray(upstream, float)[None])


def render_image(field, camera, pose, near, far, n_samples=128, chunk=8192):
    """Full-frame HDR render with midpoint sampling, shape ``(H, W, 3)``."""
    pix = pixel_grid(camera)
    out = np.empty((pix.shape[0], 3))
    for s in range(0, pix.shape[0], chunk):
        o, d = generate_rays(camera, pose, pix[s:s + chunk])
        depths, deltas = sample_depths(near, far, n_samples, "uniform", n_rays=len(o))
        out[s:s + chunk], _ = render_rays(field, o, d, depths, deltas)
    return out.reshape(camera.height, camera.width, 3)


def exposure_weights(times, scheme="uniform"):
    """Weights for combining ``b + 1`` timed renders into one exposure.

    ``uniform`` gives ``1 / (b + 1)`` each; ``trapezoid`` gives composite
    trapezoid weights ``(t[i+1] - t[i-1]) / 2`` (one-sided at the ends)
    normalized to sum to one.
    """
    times = np.asarray(times, dtype=np.float64).reshape(-1)
    if times.size == 0:
        raise ValueError("need at least one time point")
    if times.size == 1:
        return np.ones(1)
    if np.any(np.diff(times) <= 0):
        raise ValueError("time points must be strictly increasing")
    if scheme == "uniform":
        return np.full(times.size, 1.0 / times.size)
    if scheme == "trapezoid":
        gaps = np.diff(times)
        w = np.zeros(times.size)
        w[:-1] += 0.5 * gaps
        w[1:] += 0.5 * gaps
        return w / w.sum()
    raise ValueError(f"unknown weight scheme {scheme!r}")


def integrate_exposure(renders, weights):
    """Weighted sum over the time axis: ``renders`` is ``(b + 1, ..., 3)``."""
    renders = np.asarray(renders, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if renders.shape[0] != weights.shape[0]:
        raise ValueError("number of renders and weights differ")
    return np.tensordot(weights, renders, axes=(0, 0))
