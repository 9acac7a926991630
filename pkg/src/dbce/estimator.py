"""scikit-learn style front ends.

:class:`SegmentationNet` trains the small conv net under any of the five
losses (``fit`` / ``predict`` / ``predict_proba`` / ``score``), and
:class:`DilatedWeightMap` turns label masks into pixel weight maps
(``fit`` / ``transform``) so the weighting can be used in other pipelines.

``X`` is a stack of single-channel images ``(N, H, W)``; ``y`` is the
matching stack of label masks.
"""

import logging

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .grid import argmax_labels, check_mask, one_hot, softmax
from .losses import LOSS_KINDS, compute_loss, loss_gradient
from .metrics import evaluate_masks
from .morphology import _check_radius, disk_element
from .nnet import AdamState, ModelConfig, adam_step, backward, forward, init_model
from .weighting import dataset_class_weights, pixel_weight_map, sample_class_weights

log = logging.getLogger(__name__)

PREDICT_CHUNK = 16


def check_images(X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3:
        raise ValueError(f"expected images of shape (N, H, W), got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("images contain non-finite values")
    return X


def check_images_masks(X, y, classes=None):
    X = check_images(X)
    y = check_mask(y, classes)
    if y.ndim == 2:
        y = y[None]
    if X.shape != y.shape:
        raise ValueError(f"images {X.shape} and masks {y.shape} differ in shape")
    return X, y


def poly_lr(iteration, max_iter, initial):
    """``initial * (1 - iteration / max_iter) ** 0.9``."""
    if max_iter <= 0:
        raise ValueError("max_iter must be positive")
    if not 0 <= iteration <= max_iter:
        raise ValueError(f"iteration {iteration} outside [0, {max_iter}]")
    return initial * (1.0 - iteration / max_iter) ** 0.9


class DilatedWeightMap(TransformerMixin, BaseEstimator):
    """Map label masks to dilated balanced pixel weights.

    Stateless apart from remembering the class count seen in ``fit``.
    """

    def __init__(self, radius=10, n_classes=None):
        self.radius = radius
        self.n_classes = n_classes

    def fit(self, y, _ignored=None):
        y = check_mask(y)
        self.n_classes_ = self.n_classes or int(y.max()) + 1
        self.n_classes_ = max(self.n_classes_, 2)
        self.element_ = disk_element(self.radius)
        return self

    def transform(self, y):
        check_is_fitted(self, "element_")
        y = check_mask(y, self.n_classes_)
        return pixel_weight_map(one_hot(y, self.n_classes_), self.element_)


class SegmentationNet(ClassifierMixin, BaseEstimator):
    """Pixel-wise segmentation with the small conv net and a selectable loss.

    Parameters mirror the experiment config: ``loss`` is one of
    ``ce``, ``bce``, ``dice``, ``dice_ce``, ``dbce``; ``radius`` is the disk
    radius for ``dbce``; ``bce_weights`` picks dataset-level (``"dataset"``)
    or per-sample (``"sample"``) inverse frequencies for ``bce``;
    ``compute_dtype="float32"`` runs the convolutions in single precision
    (parameters and optimizer state stay float64).
    """

    def __init__(self, loss="dbce", radius=8, n_classes=None, hidden=16, depth=2,
                 epochs=30, batch_size=8, lr=5e-4, weight_decay=1e-4,
                 lr_schedule=True, smooth=1.0, normalize=None,
                 bce_weights="dataset", compute_dtype="float32", random_state=0):
        self.loss = loss
        self.radius = radius
        self.n_classes = n_classes
        self.hidden = hidden
        self.depth = depth
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.lr_schedule = lr_schedule
        self.smooth = smooth
        self.normalize = normalize
        self.bce_weights = bce_weights
        self.compute_dtype = compute_dtype
        self.random_state = random_state

    def _validate_params(self):
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"unknown loss {self.loss!r}; valid: {', '.join(LOSS_KINDS)}")
        _check_radius(self.radius)
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.bce_weights not in ("dataset", "sample"):
            raise ValueError("bce_weights must be 'dataset' or 'sample'")

    def _loss_kwargs(self, onehot, wmap):
        kw = {"smooth": self.smooth}
        if self.loss == "dbce":
            kw.update(weight_map=wmap, normalize=self.normalize)
        elif self.loss == "bce":
            kw["weights"] = (sample_class_weights(onehot) if self.bce_weights == "sample"
                             else self.class_weights_)
        return kw

    def fit(self, X, y, eval_set=None, callback=None):
        """Train on images ``X`` and masks ``y``.

        ``eval_set=(X_eval, y_eval)`` scores the model after every epoch;
        ``callback(epoch_record)`` receives each epoch's summary dict.
        """
        self._validate_params()
        X, y = check_images_masks(X, y, self.n_classes)
        self.n_classes_ = self.n_classes or max(int(y.max()) + 1, 2)
        self.classes_ = np.arange(self.n_classes_)
        self.element_ = disk_element(self.radius)
        onehot_all = one_hot(y, self.n_classes_)
        if self.loss == "bce" and self.bce_weights == "dataset":
            self.class_weights_ = dataset_class_weights(y, self.n_classes_)
        wmaps = pixel_weight_map(onehot_all, self.element_) if self.loss == "dbce" else None

        scale = float(X.std())
        model = init_model(ModelConfig(classes=self.n_classes_, hidden=self.hidden,
                                       depth=self.depth, seed=self.random_state,
                                       compute_dtype=self.compute_dtype,
                                       input_shift=float(X.mean()),
                                       input_scale=scale if scale > 0 else 1.0))
        state = AdamState.zeros_like(model)
        n = len(X)
        steps = -(-n // self.batch_size)
        max_iter = self.epochs * steps
        self.history_ = []
        it = 0
        for epoch in range(self.epochs):
            # shuffle stream depends on the seed and epoch only, never on the loss
            order = np.random.default_rng([self.random_state, epoch]).permutation(n)
            losses = []
            for b in range(steps):
                idx = order[b * self.batch_size:(b + 1) * self.batch_size]
                onehot = onehot_all[idx]
                where = f"epoch {epoch + 1}, batch {b + 1}"
                with np.errstate(over="ignore", invalid="ignore"):
                    logits, cache = forward(model, X[idx])
                if not np.all(np.isfinite(logits)):
                    raise FloatingPointError(f"non-finite logits at {where} (diverged)")
                kw = self._loss_kwargs(onehot, None if wmaps is None else wmaps[idx])
                value = compute_loss(self.loss, onehot, softmax(logits), **kw).total
                if not np.isfinite(value):
                    raise FloatingPointError(f"non-finite {self.loss} loss at {where}")
                grad = loss_gradient(self.loss, onehot, logits, **kw)
                lr = poly_lr(it, max_iter, self.lr) if self.lr_schedule else self.lr
                try:
                    model, state = adam_step(model, backward(model, cache, grad), state,
                                             lr, self.weight_decay)
                except FloatingPointError as exc:
                    raise FloatingPointError(f"{exc} at {where}") from exc
                losses.append(value)
                it += 1
            record = {"epoch": epoch + 1, "train_loss": float(np.mean(losses)), "lr": lr}
            self.model_ = model
            if eval_set is not None:
                record["eval"] = self.evaluate(*eval_set).summary()
            self.history_.append(record)
            log.info("epoch %d %s", epoch + 1, record)
            if callback is not None:
                callback(record)
        self.model_ = model
        self.optimizer_state_ = state
        return self

    def decision_function(self, X):
        """Raw logits ``(N, C, H, W)``."""
        check_is_fitted(self, "model_")
        X = check_images(X)
        # chunked so the im2col buffers stay small
        return np.concatenate([forward(self.model_, X[i:i + PREDICT_CHUNK])[0]
                               for i in range(0, len(X), PREDICT_CHUNK)])

    def predict_proba(self, X):
        return softmax(self.decision_function(X))

    def predict(self, X):
        return argmax_labels(self.predict_proba(X))

    def evaluate(self, X, y, mode="flat", include_background=False):
        X, y = check_images_masks(X, y, self.n_classes_)
        return evaluate_masks(self.predict(X), y, self.n_classes_, mode, include_background)

    def score(self, X, y, sample_weight=None):
        """Foreground mean Dice."""
        return self.evaluate(X, y).mdice
