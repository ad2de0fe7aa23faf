"""scikit-learn style wrappers around the response-curve fit and the full reconstruction."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_log_exposure, check_pose, check_positive, check_targets
from .autodiff import mlp_backward, mlp_forward
from .crf import CrfField, crf_apply, crf_export
from .dataset import Dataset
from .train import TrainConfig, adam_update, holdout_psnr, render_hdr, train


class ResponseCurveRegressor(RegressorMixin, BaseEstimator):
    """Fits the per-channel response networks to ``(log exposure, LDR value)`` pairs.

    Full-batch Adam on the summed squared error with exponential learning-rate
    decay from ``lr`` to ``lr_final``.  ``predict`` returns ``(n, 3)``.
    """

    def __init__(self, hidden=(32, 32), n_steps=5000, lr=1e-2, lr_final=1e-4, seed=0,
                 tol=0.0):
        self.hidden = hidden
        self.n_steps = n_steps
        self.lr = lr
        self.lr_final = lr_final
        self.seed = seed
        self.tol = tol

    def fit(self, X, y):
        X = check_log_exposure(X)
        y = check_targets(y, X.shape[0])
        crf = CrfField.initialized(tuple(self.hidden), np.random.default_rng(self.seed))
        # center and scale the input so the relu units start in a useful range
        self.x_center_ = float(X.mean())
        self.x_scale_ = float(X.std()) or 1.0
        u = (X - self.x_center_) / self.x_scale_
        moments = [(np.zeros(n.n_params), np.zeros(n.n_params)) for n in crf.nets]
        self.loss_curve_ = []
        self.n_iter_ = 0
        for step in range(int(self.n_steps)):
            lr = self.lr * (self.lr_final / self.lr) ** (step / max(self.n_steps, 1))
            loss = 0.0
            for c, net in enumerate(crf.nets):
                pred = mlp_forward(net, u)[:, 0]
                r = pred - y[:, c]
                loss += float(r @ r)
                _, g = mlp_backward(net, u, 2.0 * r[:, None])
                net.params, moments[c] = adam_update(net.params, g, moments[c], lr,
                                                     0.9, 0.999, 1e-8, step + 1)
            self.loss_curve_.append(loss)
            self.n_iter_ = step + 1
            if self.tol > 0 and loss < self.tol:
                break
        self.crf_ = crf
        return self

    def predict(self, X):
        check_is_fitted(self, "crf_")
        X = check_log_exposure(X)
        return self.crf_.curve(((X - self.x_center_) / self.x_scale_)[:, 0])


class EventHdrReconstructor(BaseEstimator):
    """Joint scene / response-curve / latency optimization as an estimator.

    ``fit`` takes a :class:`~evhdr.dataset.Dataset` (the inputs are image and
    event stacks, not a feature matrix).  ``predict`` renders HDR radiance
    for camera poses; ``predict_ldr`` renders at a chosen exposure through the
    learned response curves; ``score`` is the mean held-out HDR PSNR.
    """

    def __init__(self, event_weight=0.005, b=4, iterations=3000, batch_rays=1024,
                 n_samples=64, lr=5e-4, lr_final=5e-5, scene_lr=0.2, scene_lr_final=0.02,
                 weight_scheme="uniform", soft_counts="straight_through", use_events=True,
                 grid_resolution=32, backend="voxel", seed=0):
        self.event_weight = event_weight
        self.b = b
        self.iterations = iterations
        self.batch_rays = batch_rays
        self.n_samples = n_samples
        self.lr = lr
        self.lr_final = lr_final
        self.scene_lr = scene_lr
        self.scene_lr_final = scene_lr_final
        self.weight_scheme = weight_scheme
        self.soft_counts = soft_counts
        self.use_events = use_events
        self.grid_resolution = grid_resolution
        self.backend = backend
        self.seed = seed

    def to_config(self, **extra):
        return TrainConfig.from_dict({**self.get_params(), **extra})

    def fit(self, X: Dataset, y=None, log_every=0):
        if not isinstance(X, Dataset):
            raise TypeError("fit expects an evhdr Dataset")
        self.config_ = self.to_config(log_every=log_every)
        self.state_, self.history_ = train(self.config_, X)
        self.camera_ = X.camera
        self.near_, self.far_ = X.near, X.far
        return self

    def predict(self, poses):
        """HDR images ``(n, H, W, 3)`` for a sequence of 4x4 poses (or one pose)."""
        check_is_fitted(self, "state_")
        arr = np.asarray(poses, dtype=np.float64)
        single = arr.ndim == 2
        arr = arr[None] if single else arr
        out = np.stack([render_hdr(self.state_, self.camera_, check_pose(p), self.near_,
                                   self.far_, self.config_.eval_samples) for p in arr])
        return out[0] if single else out

    def predict_ldr(self, poses, exposure):
        exposure = check_positive(exposure, "exposure")
        hdr = self.predict(poses)
        return crf_apply(self.state_.crf, np.maximum(hdr, 0.0), exposure)

    def export_crf(self, log_range=(-10.0, 2.0), n=256):
        check_is_fitted(self, "state_")
        return crf_export(self.state_.crf, log_range, n)

    def score(self, X: Dataset, y=None):
        check_is_fitted(self, "state_")
        return holdout_psnr(self.state_, X, self.config_)
