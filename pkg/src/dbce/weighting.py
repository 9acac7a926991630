"""Loss weights: area-normalised dilated class masks, the pixel-wise maximum
map used by the dilated balanced loss, and inverse-frequency class weights
for plain balanced cross entropy.

All weights are computed from ground truth only and are constants with
respect to the predictions.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .grid import check_mask
from .morphology import dilate

log = logging.getLogger(__name__)


def _check_onehot(onehot):
    onehot = np.asarray(onehot, dtype=np.float64)
    if onehot.ndim not in (3, 4):
        raise ValueError(f"one-hot tensor must be (C, H, W) or (N, C, H, W), got {onehot.shape}")
    return onehot


def dilated_areas(onehot, element):
    """Dilated masks ``D`` (same shape as ``onehot``) and their pixel areas."""
    onehot = _check_onehot(onehot)
    dil = dilate(onehot, element).astype(np.float64)
    return dil, dil.sum(axis=(-2, -1))


def class_weight_map(onehot, c, element):
    """``D^c / (1 + area(D^c))`` for a single class.

    An absent class yields an all-zero map.
    """
    onehot = _check_onehot(onehot)
    classes = onehot.shape[-3]
    if not 0 <= c < classes:
        raise IndexError(f"class index {c} out of range for {classes} classes")
    dil = dilate(onehot[..., c, :, :], element).astype(np.float64)
    area = dil.sum(axis=(-2, -1), keepdims=True)
    return dil / (1.0 + area)


def class_weight_maps(onehot, element):
    """All ``W^c`` at once, shaped like ``onehot``."""
    dil, area = dilated_areas(onehot, element)
    return dil / (1.0 + area[..., None, None])


def pixel_weight_map(onehot, element):
    """Pointwise maximum over classes of the class weight maps.

    Overlapping dilations take the larger weight, i.e. the weight of the
    smaller dilated object. Strictly positive wherever the one-hot planes
    partition the grid. Batched input ``(N, C, H, W)`` gives ``(N, H, W)``.
    """
    return class_weight_maps(onehot, element).max(axis=-3)


@dataclass(frozen=True)
class ClassWeights:
    """Per-class inverse-frequency weights for balanced cross entropy."""

    values: np.ndarray
    absent: tuple = ()

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or not np.all(values > 0) or not np.all(np.isfinite(values)):
            raise ValueError("class weights must be a 1-D array of finite positive reals")
        object.__setattr__(self, "values", values)

    def __len__(self):
        return len(self.values)


def dataset_class_weights(masks, classes):
    """``w_c = total pixels / pixels of class c`` pooled over ``masks``.

    A class that never occurs is weighted as if it had one pixel and is
    listed in ``absent`` (and logged).
    """
    if isinstance(masks, np.ndarray):
        masks = masks.reshape((-1,) + masks.shape[-2:])
    masks = list(masks)
    if not masks:
        raise ValueError("dataset_class_weights needs at least one mask")
    counts = np.zeros(classes, dtype=np.int64)
    total = 0
    for m in masks:
        m = check_mask(m, classes)
        counts += np.bincount(m.ravel(), minlength=classes)
        total += m.size
    absent = tuple(int(c) for c in np.flatnonzero(counts == 0))
    if absent:
        log.warning("classes %s absent from all masks; weighting them as one pixel", absent)
    return ClassWeights(total / np.maximum(counts, 1), absent)


def sample_class_weights(onehot):
    """Per-sample inverse-frequency weights ``N / (1 + count_c)``.

    The ``+1`` matches the guard in :func:`class_weight_map`, so balanced CE
    with these weights coincides with the dilated loss at radius 0.
    Batched input gives one row per sample.
    """
    onehot = _check_onehot(onehot)
    n = onehot.shape[-2] * onehot.shape[-1]
    return n / (1.0 + onehot.sum(axis=(-2, -1)))
