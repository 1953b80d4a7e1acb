"""scikit-learn style wrappers around the trainer and the contour extractor."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .data import Sample
from .losses import LossConfig
from .morphology import StructuringElement, extract_contours_batch
from .network import NetworkConfig, pdanet_forward
from .tensor import Tensor, no_grad, softmax
from .trainer import TrainConfig, per_class_dsc, predict_labels, train
from .validation import LabelVolume, check_labels, check_volume_batch


def _check_targets(y, num_classes: int, n: int, spatial) -> np.ndarray:
    y = check_labels(y, num_classes, ndim=4)
    if y.shape[0] != n or y.shape[1:] != tuple(spatial):
        raise ValueError(f"labels {y.shape} do not match volumes {(n,) + tuple(spatial)}")
    return y


class ContourMapTransformer(TransformerMixin, BaseEstimator):
    """Label batch ``[N, D, H, W]`` to contour weight maps ``[N, M, D, H, W]``."""

    def __init__(self, num_classes: int = 2, k: int = 2, iterations: int = 1):
        self.num_classes = num_classes
        self.k = k
        self.iterations = iterations

    def fit(self, y, _=None):
        check_labels(y, self.num_classes, ndim=4)
        self.n_classes_ = self.num_classes
        return self

    def transform(self, y) -> np.ndarray:
        y = check_labels(y, self.num_classes, ndim=4)
        maps = extract_contours_batch(y, self.num_classes, StructuringElement(self.k), self.iterations)
        return maps.contour.astype(np.float64)


class PDANetSegmenter(BaseEstimator):
    """Voxel classifier: ``fit(X, y)`` on intensity volumes and integer label volumes.

    ``X`` is ``[N, 1, D, H, W]`` (or ``[N, D, H, W]``); ``y`` is
    ``[N, D, H, W]``. The last ``validation_fraction`` of the samples are
    held out for best-epoch selection.
    """

    def __init__(self, num_classes: int = 2, loss: str = "cwcd", alpha: float = 0.5, beta: float = 0.5,
                 lam: float = 2.0, k: int = 2, iterations: int = 1, base_channels: int = 4, levels: int = 3,
                 epochs: int = 30, batch_size: int = 2, lr: float = 3e-4, schedule: str = "halve",
                 augment: bool = True, validation_fraction: float = 0.2, random_state: int = 0):
        self.num_classes = num_classes
        self.loss = loss
        self.alpha = alpha
        self.beta = beta
        self.lam = lam
        self.k = k
        self.iterations = iterations
        self.base_channels = base_channels
        self.levels = levels
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.schedule = schedule
        self.augment = augment
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _train_config(self, in_channels: int) -> TrainConfig:
        return TrainConfig(
            loss=self.loss,
            loss_config=LossConfig(lam=self.lam, alpha=self.alpha, beta=self.beta, k=self.k,
                                   iterations=self.iterations),
            network=NetworkConfig(in_channels, self.num_classes, base_channels=self.base_channels,
                                  levels=self.levels),
            epochs=self.epochs, batch_size=self.batch_size, lr=self.lr, schedule=self.schedule,
            seed=self.random_state, augment=self.augment)

    def fit(self, X, y):
        X = check_volume_batch(X)
        if X.shape[1] != 1:
            raise ValueError(f"only single-channel volumes are supported, got {X.shape[1]} channels")
        y = _check_targets(y, self.num_classes, X.shape[0], X.shape[2:])
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError(f"validation_fraction must lie in (0, 1), got {self.validation_fraction}")
        n = X.shape[0]
        n_val = max(1, int(round(self.validation_fraction * n)))
        if n - n_val < 1:
            raise ValueError(f"need at least 2 samples to fit, got {n}")
        samples = [Sample(X[i], LabelVolume(y[i], self.num_classes)) for i in range(n)]
        cfg = self._train_config(X.shape[1])
        run = train(cfg, samples[:n - n_val], samples[n - n_val:])
        self.config_ = cfg
        self.params_ = run.params
        self.history_ = run.history
        self.best_epoch_ = run.best_epoch
        self.n_classes_ = self.num_classes
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("PDANetSegmenter is not fitted yet; call fit first")

    def predict(self, X) -> np.ndarray:
        self._check_fitted()
        return predict_labels(self.params_, self.config_.network, check_volume_batch(X))

    def predict_proba(self, X) -> np.ndarray:
        """Class probabilities ``[N, M, D, H, W]``."""
        self._check_fitted()
        X = check_volume_batch(X)
        out = []
        with no_grad():
            for i in range(X.shape[0]):
                logits = pdanet_forward(Tensor(X[i:i + 1]), self.params_, self.config_.network)
                out.append(softmax(logits, axis=1).data[0])
        return np.stack(out)

    def score(self, X, y) -> float:
        """Mean foreground DSC over samples and classes."""
        pred = self.predict(X)
        y = _check_targets(y, self.num_classes, pred.shape[0], pred.shape[1:])
        return float(np.mean([per_class_dsc(p, g, self.num_classes).mean() for p, g in zip(pred, y)]))
