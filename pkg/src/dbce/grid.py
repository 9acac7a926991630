"""Dense grids and class encodings.

Conventions used across the package:

* a label mask is an ``(H, W)`` integer array of class IDs, class 0 is background;
* one-hot tensors, probability maps, logit maps and gradients are ``(C, H, W)``
  float64 arrays (channel first, row-major, origin top-left);
* a batch prepends one axis: ``(N, H, W)`` masks, ``(N, C, H, W)`` maps.
"""

import numpy as np


class LabelRangeError(ValueError):
    """A label mask contains a class ID outside ``[0, classes)``."""

    def __init__(self, value, coord, classes):
        self.value = value
        self.coord = coord
        self.classes = classes
        super().__init__(
            f"label {value} at (row, col)={coord} is outside [0, {classes})")


def check_mask(mask, classes=None):
    """Validate a label mask and return it as an integer array.

    Accepts ``(H, W)`` or a batch ``(N, H, W)``.
    """
    mask = np.asarray(mask)
    if mask.ndim not in (2, 3):
        raise ValueError(f"label mask must be 2-D (or a 3-D batch), got shape {mask.shape}")
    if mask.size == 0:
        raise ValueError("label mask is empty")
    if not np.issubdtype(mask.dtype, np.integer):
        if not np.all(np.equal(np.mod(mask, 1), 0)):
            raise ValueError("label mask must hold integer class IDs")
        mask = mask.astype(np.int64)
    bad = mask < 0
    if classes is not None:
        if classes < 2:
            raise ValueError(f"classes must be >= 2, got {classes}")
        bad |= mask >= classes
    if bad.any():
        coord = tuple(int(i) for i in np.argwhere(bad)[0])
        raise LabelRangeError(int(mask[coord]), coord, classes)
    return mask


def check_probs(probs, atol=1e-6):
    """Validate a ``(C, H, W)`` or ``(N, C, H, W)`` probability map."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim not in (3, 4) or probs.shape[-3] < 2:
        raise ValueError(f"probability map must be (C, H, W) with C >= 2, got {probs.shape}")
    if not np.all(np.isfinite(probs)):
        raise ValueError("probability map contains non-finite values")
    if probs.min() < 0.0 or probs.max() > 1.0:
        raise ValueError("probabilities must lie in [0, 1]")
    err = np.abs(probs.sum(axis=-3) - 1.0).max()
    if err > atol:
        raise ValueError(f"class planes do not sum to 1 (max deviation {err:.3g} > {atol})")
    return probs


def check_same_shape(a, b, what="inputs"):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch between {what}: {a.shape} vs {b.shape}")


def one_hot(mask, classes):
    """Encode a label mask as ``classes`` binary planes.

    Works on a single ``(H, W)`` mask or an ``(N, H, W)`` batch; the class axis
    is inserted just before the spatial axes.
    """
    mask = check_mask(mask, classes)
    ids = np.arange(classes).reshape((classes,) + (1,) * 2)
    if mask.ndim == 3:
        return (mask[:, None] == ids[None]).astype(np.float64)
    return (mask[None] == ids).astype(np.float64)


def softmax(logits):
    """Numerically stable softmax over the class axis (``-3``)."""
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise ValueError("logits contain non-finite values")
    shifted = logits - logits.max(axis=-3, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-3, keepdims=True)


def log_softmax(logits):
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-3, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-3, keepdims=True))


def argmax_labels(probs):
    """Per-pixel index of the largest class plane.

    Ties go to the lowest class index (``np.argmax`` returns the first maximum).
    """
    return np.argmax(np.asarray(probs), axis=-3).astype(np.int64)
