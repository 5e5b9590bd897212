"""scikit-learn style wrapper around model construction, training and
evaluation."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .evaluation import DEFAULT_TOLERANCE, default_thresholds, evaluate
from .exceptions import ConfigurationError, DataError
from .loss import LossConfig, wrap_angle
from .model import build_model, variant_by_name
from .postprocess import postprocess
from .synth import OcclusionSample
from .training import TrainConfig, train


def check_images(X) -> np.ndarray:
    """N x H x W x 3 float array with values in [0, 1]."""
    if isinstance(X, (list, tuple)) and X and isinstance(X[0], OcclusionSample):
        X = np.stack([s.image for s in X])
    X = np.asarray(X, dtype=np.float32)
    if X.ndim != 4 or X.shape[-1] != 3:
        raise ConfigurationError(f"expected images of shape (N, H, W, 3), got {X.shape}")
    if X.shape[0] == 0:
        raise ConfigurationError("no images given")
    if not np.isfinite(X).all() or X.min() < 0 or X.max() > 1:
        raise DataError("image values must be finite and lie in [0, 1]")
    return X


def check_targets(y, n: int, h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    """``y`` is N x 2 x H x W: channel 0 the binary edge map, channel 1 the
    orientation in radians."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (n, 2, h, w):
        raise ConfigurationError(f"expected targets of shape {(n, 2, h, w)}, got {y.shape}")
    edge = y[:, 0]
    if not np.isin(edge, (0.0, 1.0)).all():
        raise DataError("edge targets must be 0 or 1")
    if not np.isfinite(y[:, 1]).all():
        raise DataError("orientation targets must be finite")
    return edge.astype(np.uint8), wrap_angle(y[:, 1]).astype(np.float32)


def as_samples(X, y=None) -> list[OcclusionSample]:
    if isinstance(X, (list, tuple)) and X and isinstance(X[0], OcclusionSample):
        if y is not None:
            raise ConfigurationError("pass targets either inside the samples or as y, not both")
        return list(X)
    images = check_images(X)
    if y is None:
        raise ConfigurationError("targets y are required when X is an image array")
    edge, ori = check_targets(y, *images.shape[:3])
    return [OcclusionSample(images[i], edge[i], np.where(edge[i] > 0, ori[i], 0).astype(np.float32)) for i in range(len(images))]


class OFNetEstimator(BaseEstimator):
    """Edge and orientation estimator.

    ``fit`` accepts a list of :class:`~ofnet.synth.OcclusionSample` or an
    image array ``(N, H, W, 3)`` with targets ``(N, 2, H, W)``.  ``predict``
    returns ``(N, 2, H, W)``: edge probability and wrapped orientation.
    ``score`` is the OPR ODS.
    """

    def __init__(
        self,
        variant: str = "default",
        iters: int = 1000,
        batch_size: int = 2,
        crop: int = 96,
        learning_rate: float = 2e-3,
        orientation_weight: float = 0.5,
        gamma: float = 0.5,
        alpha: float | None = None,
        flips: bool = False,
        seed: int = 0,
        tol: float = DEFAULT_TOLERANCE,
        n_thresholds: int = 99,
    ):
        self.variant = variant
        self.iters = iters
        self.batch_size = batch_size
        self.crop = crop
        self.learning_rate = learning_rate
        self.orientation_weight = orientation_weight
        self.gamma = gamma
        self.alpha = alpha
        self.flips = flips
        self.seed = seed
        self.tol = tol
        self.n_thresholds = n_thresholds

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            iters=self.iters,
            batch_size=self.batch_size,
            crop=self.crop,
            learning_rate=self.learning_rate,
            flips=self.flips,
            seed=self.seed,
        )

    def _loss_config(self) -> LossConfig:
        return LossConfig(lam=self.orientation_weight, alpha=self.alpha, gamma=self.gamma)

    def fit(self, X, y=None, log_path=None, checkpoint_dir=None):
        samples = as_samples(X, y)
        cfg, loss_cfg = self._train_config(), self._loss_config()
        self.model_ = build_model(variant_by_name(self.variant), seed=self.seed)
        self.loss_log_ = train(self.model_, samples, cfg, loss_cfg, log_path=log_path, checkpoint_dir=checkpoint_dir)
        self.n_iter_ = self.model_.step
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        images = check_images(X)
        edge, ori = self.model_.predict(images.transpose(0, 3, 1, 2))
        return np.stack([edge, wrap_angle(ori).astype(np.float32)], axis=1)

    def predict_boundaries(self, X):
        out = self.predict(X)
        return [postprocess(o[0], o[1]) for o in out]

    def evaluate(self, X, y=None):
        samples = as_samples(X, y)
        boundaries = self.predict_boundaries(np.stack([s.image for s in samples]))
        return evaluate(boundaries, samples, default_thresholds(self.n_thresholds), self.tol)

    def score(self, X, y=None) -> float:
        return self.evaluate(X, y)["OPR"].ods
