"""Segmentation losses and their exact gradients with respect to logits.

Selectors (stable names used by configs and the CLI):

``ce``       mean pixel cross entropy
``bce``      balanced CE, per-class inverse-frequency weights
``dice``     soft Dice over the classes present in each sample
``dice_ce``  soft Dice + CE, 1:1
``dbce``     dilated balanced CE, CE map weighted by the dilated-area map and summed

Single samples are ``(C, H, W)``; batches are ``(N, C, H, W)`` and reduce to
the mean of the per-sample losses. All CE-family losses are weighted CE with
a prediction-independent pixel weight map ``v``, whose gradient w.r.t. the
logits is ``v * (P - Y)``.
"""

from dataclasses import dataclass, field

import numpy as np

from .grid import check_same_shape, softmax
from .weighting import ClassWeights, pixel_weight_map

EPS = 1e-12
LOSS_KINDS = ("ce", "bce", "dice", "dice_ce", "dbce")


@dataclass
class LossValue:
    total: float
    parts: dict = field(default_factory=dict)

    def __float__(self):
        return float(self.total)


def _pair(onehot, probs):
    onehot = np.asarray(onehot, dtype=np.float64)
    probs = np.asarray(probs, dtype=np.float64)
    check_same_shape(onehot, probs, "one-hot labels and probabilities")
    if onehot.ndim not in (3, 4):
        raise ValueError(f"expected (C, H, W) or (N, C, H, W), got {onehot.shape}")
    return onehot, probs


def _n_samples(x):
    return x.shape[0] if x.ndim == 4 else 1


def ce_loss_map(onehot, probs):
    """Per-pixel ``-sum_c Y^c log P^c`` with probabilities floored at ``EPS``."""
    onehot, probs = _pair(onehot, probs)
    logp = np.log(np.maximum(probs, EPS))
    return -(onehot * logp).sum(axis=-3)


def _class_weight_array(weights, onehot):
    if isinstance(weights, ClassWeights):
        w = weights.values
    else:
        w = np.asarray(weights, dtype=np.float64)
    c = onehot.shape[-3]
    if w.shape[-1] != c:
        raise ValueError(f"{w.shape[-1]} class weights given for {c} classes")
    if not np.all(w > 0):
        raise ValueError("class weights must be positive")
    if w.ndim == 2 and onehot.ndim != 4:
        raise ValueError("per-sample weights need a batched one-hot tensor")
    return w


def pixel_weights(kind, onehot, element=None, weights=None, weight_map=None,
                  normalize=None):
    """Pixel weight map ``v`` such that the CE-family loss is
    ``sum(v * ce_loss_map)`` per sample."""
    onehot = np.asarray(onehot, dtype=np.float64)
    npix = onehot.shape[-2] * onehot.shape[-1]
    if kind in ("ce", "dice_ce"):
        return np.full(onehot.shape[:-3] + onehot.shape[-2:], 1.0 / npix)
    if kind == "bce":
        if weights is None:
            raise ValueError("balanced CE needs class weights")
        w = _class_weight_array(weights, onehot)
        # per-sample weights (N, C) broadcast against (N, C, H, W)
        wb = w[..., :, None, None]
        return (wb * onehot).sum(axis=-3) / npix
    if kind == "dbce":
        if weight_map is None:
            if element is None:
                raise ValueError("dilated balanced CE needs a structuring element")
            weight_map = pixel_weight_map(onehot, element)
        weight_map = np.asarray(weight_map, dtype=np.float64)
        if normalize == "mean":
            weight_map = weight_map / npix
        elif normalize not in (None, "sum"):
            raise ValueError(f"normalize must be 'sum' or 'mean', got {normalize!r}")
        return weight_map
    raise ValueError(f"no pixel weights for loss kind {kind!r}")


def _weighted_ce(onehot, probs, v):
    per_sample = (v * ce_loss_map(onehot, probs)).sum(axis=(-2, -1))
    return float(np.mean(per_sample))


def ce_loss(onehot, probs):
    onehot, probs = _pair(onehot, probs)
    per_sample = ce_loss_map(onehot, probs).mean(axis=(-2, -1))
    return LossValue(float(np.mean(per_sample)))


def balanced_ce_loss(onehot, probs, weights):
    """``-(1/N) sum_c w_c sum_n y_n^c log p_n^c`` with ``N`` pixels per image.

    ``weights`` is a :class:`ClassWeights`, a length-C array, or an ``(N, C)``
    array of per-sample weights for batched input.
    """
    onehot, probs = _pair(onehot, probs)
    v = pixel_weights("bce", onehot, weights=weights)
    return LossValue(_weighted_ce(onehot, probs, v))


def dbce_loss(onehot, probs, element=None, weight_map=None, normalize=None):
    """Dilated balanced CE: the CE map times the pixel weight map, summed.

    No ``1/N`` by default; ``normalize="mean"`` divides by the pixel count.
    ``weight_map`` overrides the map built from ``element``.
    """
    onehot, probs = _pair(onehot, probs)
    v = pixel_weights("dbce", onehot, element=element, weight_map=weight_map,
                      normalize=normalize)
    return LossValue(_weighted_ce(onehot, probs, v))


def _dice_terms(onehot, probs, smooth):
    inter = (probs * onehot).sum(axis=(-2, -1))
    sp = probs.sum(axis=(-2, -1))
    sy = onehot.sum(axis=(-2, -1))
    present = sy > 0
    return inter, sp, sy, present


def soft_dice_loss(onehot, probs, smooth=1.0):
    """Mean over present classes of ``1 - (2I + s) / (|P| + |Y| + s)``.

    Classes absent from a sample's ground truth are skipped for that sample.
    """
    if smooth <= 0:
        raise ValueError("smooth must be positive")
    onehot, probs = _pair(onehot, probs)
    inter, sp, sy, present = _dice_terms(onehot, probs, smooth)
    dice = (2.0 * inter + smooth) / (sp + sy + smooth)
    per_sample = np.where(present, 1.0 - dice, 0.0).sum(axis=-1) / present.sum(axis=-1)
    return LossValue(float(np.mean(per_sample)))


def dice_ce_loss(onehot, probs, smooth=1.0):
    dice = soft_dice_loss(onehot, probs, smooth).total
    ce = ce_loss(onehot, probs).total
    return LossValue(dice + ce, {"dice": dice, "ce": ce})


def compute_loss(kind, onehot, probs, element=None, weights=None, smooth=1.0,
                 weight_map=None, normalize=None):
    """Dispatch on a loss selector name."""
    if kind == "ce":
        return ce_loss(onehot, probs)
    if kind == "bce":
        return balanced_ce_loss(onehot, probs, weights)
    if kind == "dbce":
        return dbce_loss(onehot, probs, element, weight_map=weight_map, normalize=normalize)
    if kind == "dice":
        return soft_dice_loss(onehot, probs, smooth)
    if kind == "dice_ce":
        return dice_ce_loss(onehot, probs, smooth)
    raise ValueError(f"unknown loss {kind!r}; valid: {', '.join(LOSS_KINDS)}")


def _dice_grad_probs(onehot, probs, smooth):
    inter, sp, sy, present = _dice_terms(onehot, probs, smooth)
    den = sp + sy + smooth
    num = 2.0 * inter + smooth
    # d dice_c / d P_n^c = (2 Y_n^c den - num) / den^2
    den, num = den[..., None, None], num[..., None, None]
    ddice = (2.0 * onehot * den - num) / den ** 2
    scale = present / present.sum(axis=-1, keepdims=True)
    return -ddice * scale[..., None, None]


def _through_softmax(probs, g):
    # dL/dz_k = P_k (g_k - sum_c P_c g_c)
    return probs * (g - (probs * g).sum(axis=-3, keepdims=True))


def loss_gradient(kind, onehot, logits, element=None, weights=None, smooth=1.0,
                  weight_map=None, normalize=None):
    """Exact gradient of the selected loss w.r.t. the logits.

    For batches the gradient is that of the batch-mean loss.
    """
    if kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss {kind!r}; valid: {', '.join(LOSS_KINDS)}")
    onehot = np.asarray(onehot, dtype=np.float64)
    probs = softmax(logits)
    check_same_shape(onehot, probs, "one-hot labels and logits")
    nb = _n_samples(onehot)
    grad = np.zeros_like(probs)
    if kind in ("ce", "bce", "dbce", "dice_ce"):
        v = pixel_weights(kind, onehot, element=element, weights=weights,
                          weight_map=weight_map, normalize=normalize)
        grad += v[..., None, :, :] * (probs - onehot)
    if kind in ("dice", "dice_ce"):
        if smooth <= 0:
            raise ValueError("smooth must be positive")
        grad += _through_softmax(probs, _dice_grad_probs(onehot, probs, smooth))
    return grad / nb
