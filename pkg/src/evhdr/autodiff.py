"""Fixed-topology multilayer perceptrons with hand-derived backward passes.

Every network in the package (scene MLP, per-channel response curves and the
latency network) is one of these.  Parameters live in a single flat float64
vector so optimizers and checkpoints can treat all networks uniformly.  Each
layer stores its weight matrix (``w_in x w_out``, row-major) followed by its
bias vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

HIDDEN_ACTIVATIONS = ("relu", "sigmoid", "tanh")
OUTPUT_ACTIVATIONS = ("identity", "sigmoid", "softplus")


def sigmoid(x):
    return expit(np.asarray(x, dtype=np.float64))


def softplus(x):
    return np.logaddexp(0.0, x)


def _activate(name, z):
    if name == "identity":
        return z
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return sigmoid(z)
    if name == "tanh":
        return np.tanh(z)
    if name == "softplus":
        return softplus(z)
    raise ValueError(f"unknown activation {name!r}")


def _activation_grad(name, z, a):
    # derivative w.r.t. the pre-activation z, given a = act(z); relu'(0) = 0
    if name == "identity":
        return np.ones_like(z)
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    if name == "sigmoid":
        return a * (1.0 - a)
    if name == "tanh":
        return 1.0 - a * a
    if name == "softplus":
        return sigmoid(z)
    raise ValueError(f"unknown activation {name!r}")


def positional_encode(x, levels):
    """Map coordinates to ``sin/cos(2**m * pi * x)`` features for ``m = 0..levels``.

    The last axis holds the coordinates.  Output ordering is level-major; within
    a level each coordinate contributes an adjacent ``(sin, cos)`` pair::

        [sin(pi x0), cos(pi x0), sin(pi x1), cos(pi x1), ..., sin(2^M pi x0), ...]

    so the output's last axis has length ``2 * (levels + 1) * len(x)``.
    """
    if levels < 0:
        raise ValueError("levels must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    freqs = (2.0 ** np.arange(levels + 1)) * np.pi
    arg = x[..., None, :] * freqs[:, None]  # (..., M+1, D)
    out = np.stack([np.sin(arg), np.cos(arg)], axis=-1)  # (..., M+1, D, 2)
    return out.reshape(*x.shape[:-1], -1)


@dataclass
class Mlp:
    """Dense network ``layer_widths[0] -> ... -> layer_widths[-1]``."""

    layer_widths: list[int]
    params: np.ndarray = field(default=None, repr=False)
    hidden_activation: str = "relu"
    output_activation: str = "identity"

    def __post_init__(self):
        self.layer_widths = [int(w) for w in self.layer_widths]
        if len(self.layer_widths) < 2 or min(self.layer_widths) < 1:
            raise ValueError("need at least two positive layer widths")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"hidden_activation must be one of {HIDDEN_ACTIVATIONS}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"output_activation must be one of {OUTPUT_ACTIVATIONS}")
        n = self.n_params
        if self.params is None:
            self.params = np.zeros(n)
        else:
            self.params = np.ascontiguousarray(self.params, dtype=np.float64).reshape(-1)
            if self.params.size != n:
                raise ValueError(f"expected {n} parameters, got {self.params.size}")

    @property
    def n_params(self) -> int:
        w = self.layer_widths
        return sum(a * b + b for a, b in zip(w[:-1], w[1:]))

    @property
    def n_in(self) -> int:
        return self.layer_widths[0]

    @property
    def n_out(self) -> int:
        return self.layer_widths[-1]

    def layer_slices(self):
        """Yield ``(weight_slice, bias_slice, w_in, w_out)`` per layer."""
        off = 0
        for a, b in zip(self.layer_widths[:-1], self.layer_widths[1:]):
            ws = slice(off, off + a * b)
            off += a * b
            bs = slice(off, off + b)
            off += b
            yield ws, bs, a, b

    def layers(self):
        for ws, bs, a, b in self.layer_slices():
            yield self.params[ws].reshape(a, b), self.params[bs]

    @property
    def weights(self) -> np.ndarray:
        return np.concatenate([self.params[ws] for ws, _, _, _ in self.layer_slices()])

    @property
    def biases(self) -> np.ndarray:
        return np.concatenate([self.params[bs] for _, bs, _, _ in self.layer_slices()])

    def copy(self) -> "Mlp":
        return Mlp(list(self.layer_widths), self.params.copy(),
                   self.hidden_activation, self.output_activation)

    @classmethod
    def initialized(cls, layer_widths: Sequence[int], rng=None, hidden_activation="relu",
                    output_activation="identity", output_bias=0.0) -> "Mlp":
        """Glorot-uniform weights ``U[-a, a]``, ``a = sqrt(6 / (w_in + w_out))``; zero biases."""
        rng = np.random.default_rng(rng)
        net = cls(list(layer_widths), None, hidden_activation, output_activation)
        for i, (ws, bs, a, b) in enumerate(net.layer_slices()):
            lim = np.sqrt(6.0 / (a + b))
            net.params[ws] = rng.uniform(-lim, lim, size=a * b)
        net.params[bs] = output_bias
        return net


def _as_batch(net, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.n_in:
        raise ValueError(f"input width {x.shape[-1]} does not match network input {net.n_in}")
    return x, single


def _forward_cache(net, x):
    acts = [x]
    pres = []
    h = x
    n_layers = len(net.layer_widths) - 1
    for i, (W, b) in enumerate(net.layers()):
        z = h @ W + b
        act = net.output_activation if i == n_layers - 1 else net.hidden_activation
        h = _activate(act, z)
        pres.append(z)
        acts.append(h)
    return pres, acts


def mlp_forward(net: Mlp, x) -> np.ndarray:
    """Evaluate the network on one input vector or a batch of row vectors."""
    xb, single = _as_batch(net, x)
    _, acts = _forward_cache(net, xb)
    return acts[-1][0] if single else acts[-1]


def mlp_backward(net: Mlp, x, upstream):
    """Gradients of ``sum(upstream * mlp_forward(net, x))``.

    Returns ``(input_grad, param_grad)``: the input gradient has the shape of
    ``x``; the parameter gradient is a flat vector aligned with ``net.params``
    and summed over the batch.
    """
    xb, single = _as_batch(net, x)
    g = np.asarray(upstream, dtype=np.float64)
    if single:
        g = g[None, :]
    if g.shape != (xb.shape[0], net.n_out):
        raise ValueError(f"upstream shape {g.shape} does not match output {(xb.shape[0], net.n_out)}")
    pres, acts = _forward_cache(net, xb)
    grad = np.zeros_like(net.params)
    slices = list(net.layer_slices())
    n_layers = len(slices)
    for i in range(n_layers - 1, -1, -1):
        ws, bs, a, b = slices[i]
        act = net.output_activation if i == n_layers - 1 else net.hidden_activation
        g = g * _activation_grad(act, pres[i], acts[i + 1])
        grad[ws] = (acts[i].T @ g).reshape(-1)
        grad[bs] = g.sum(axis=0)
        g = g @ net.params[ws].reshape(a, b).T
    return (g[0] if single else g), grad


def finite_diff_check(loss_fn: Callable[[np.ndarray], float], params, step: float,
                      analytic_grad=None, indices=None) -> float:
    """Worst relative error between an analytic gradient and central differences.

    ``loss_fn(params)`` returns either a scalar loss or a ``(loss, grad)`` pair;
    in the first case ``analytic_grad`` must be supplied.  The relative error of
    each compared entry uses the denominator ``max(|analytic|, |numeric|, 1e-8)``.
    A non-finite loss anywhere yields ``inf`` rather than being skipped.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    p = np.array(params, dtype=np.float64, copy=True).reshape(-1)

    def scalar(q):
        out = loss_fn(q)
        if isinstance(out, tuple):
            out = out[0]
        return float(out)

    if analytic_grad is None:
        out = loss_fn(p.copy())
        if not isinstance(out, tuple):
            raise ValueError("loss_fn must return (loss, grad) when analytic_grad is omitted")
        if not np.isfinite(out[0]):
            return float("inf")
        analytic_grad = out[1]
    analytic = np.asarray(analytic_grad, dtype=np.float64).reshape(-1)
    if analytic.size != p.size:
        raise ValueError("analytic gradient length differs from parameter length")
    if indices is None:
        indices = range(p.size)
    worst = 0.0
    for k in indices:
        orig = p[k]
        p[k] = orig + step
        fp = scalar(p)
        p[k] = orig - step
        fm = scalar(p)
        p[k] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)) or not np.isfinite(analytic[k]):
            return float("inf")
        numeric = (fp - fm) / (2.0 * step)
        denom = max(abs(analytic[k]), abs(numeric), 1e-8)
        worst = max(worst, abs(analytic[k] - numeric) / denom)
    return worst
