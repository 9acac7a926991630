"""Dice, IoU, precision and recall on label masks, with two averaging modes.

``flat``       score every (sample, class) entry, mean over samples per class,
               then mean over classes.
``per_organ``  per class, mean over the samples whose ground truth contains
               that class, then mean over classes (multi-organ style).

A 0/0 ratio is 1 when the class is absent from both prediction and truth,
and 0 otherwise. Background (class 0) is left out of the means unless
``include_background`` is set.
"""

import csv
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .grid import check_mask, check_same_shape

METRIC_NAMES = ("dice", "iou", "precision", "recall")


class ConfusionCounts(NamedTuple):
    tp: int
    fp: int
    fn: int
    tn: int


def confusion(pred, truth, c):
    """One-vs-rest confusion counts for class ``c``."""
    pred = check_mask(pred)
    truth = check_mask(truth)
    check_same_shape(pred, truth, "prediction and truth")
    p = pred == c
    t = truth == c
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    return ConfusionCounts(tp, fp, fn, pred.size - tp - fp - fn)


def _ratio(num, den, absent_both):
    if den == 0:
        return 1.0 if absent_both else 0.0
    return num / den


def dice_iou_prec_rec(counts):
    tp, fp, fn = counts.tp, counts.fp, counts.fn
    absent_both = tp == 0 and fp == 0 and fn == 0
    return (
        _ratio(2 * tp, 2 * tp + fp + fn, absent_both),
        _ratio(tp, tp + fp + fn, absent_both),
        _ratio(tp, tp + fp, absent_both),
        _ratio(tp, tp + fn, absent_both),
    )


@dataclass
class MetricsReport:
    """Per-sample scores for every class plus the aggregate over the
    reported classes.

    ``per_sample`` is ``(n_samples, C, 4)`` in :data:`METRIC_NAMES` order;
    ``present`` marks classes in each sample's ground truth and
    ``absent_both`` marks entries scored by the 0/0 rule.
    """

    per_sample: np.ndarray
    present: np.ndarray
    absent_both: np.ndarray
    mode: str = "flat"
    include_background: bool = False
    sample_ids: list = field(default_factory=list)
    per_class: np.ndarray = field(init=False)
    mean: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.mode not in ("flat", "per_organ"):
            raise ValueError(f"unknown aggregation mode {self.mode!r}")
        if not self.sample_ids:
            self.sample_ids = list(range(len(self.per_sample)))
        self.per_class, self.mean = _aggregate_arrays(
            self.per_sample, self.present, self.mode, self.classes)

    @property
    def n_classes(self):
        return self.per_sample.shape[1]

    @property
    def classes(self):
        start = 0 if self.include_background or self.n_classes == 1 else 1
        return list(range(start, self.n_classes))

    @property
    def flagged(self):
        """(sample, class) entries that took the 0/0 convention."""
        return [(self.sample_ids[i], int(c)) for i, c in np.argwhere(self.absent_both)]

    mdice = property(lambda self: float(self.mean[0]))
    miou = property(lambda self: float(self.mean[1]))
    mprec = property(lambda self: float(self.mean[2]))
    mrec = property(lambda self: float(self.mean[3]))

    def summary(self):
        return dict(zip(("mdice", "miou", "mprec", "mrec"), map(float, self.mean)))

    def to_dict(self):
        return {
            "mode": self.mode,
            "include_background": self.include_background,
            "classes": self.classes,
            "mean": self.summary(),
            "per_class": {str(c): dict(zip(METRIC_NAMES, map(float, self.per_class[k])))
                          for k, c in enumerate(self.classes)},
            "flagged": [list(x) for x in self.flagged],
        }

    def rows(self):
        for i, sid in enumerate(self.sample_ids):
            for c in self.classes:
                yield [sid, c] + [float(v) for v in self.per_sample[i, c]]
        for k, c in enumerate(self.classes):
            yield ["mean", c] + [float(v) for v in self.per_class[k]]
        yield ["mean", "mean"] + [float(v) for v in self.mean]

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(("sample", "class") + METRIC_NAMES)
            for row in self.rows():
                w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _aggregate_arrays(per_sample, present, mode, classes):
    vals = per_sample[:, classes]
    if mode == "flat":
        per_class = vals.mean(axis=0)
    else:
        pres = present[:, classes]
        per_class = np.empty(vals.shape[1:])
        for k in range(vals.shape[1]):
            rows = vals[pres[:, k], k]
            # a class never in the ground truth falls back to all samples
            per_class[k] = (rows if len(rows) else vals[:, k]).mean(axis=0)
    return per_class, per_class.mean(axis=0)


def sample_metrics(pred, truth, classes, sample_id=0, include_background=False):
    """Score one predicted mask against its ground truth for every class."""
    scores = np.empty((1, classes, 4))
    absent = np.zeros((1, classes), dtype=bool)
    for c in range(classes):
        counts = confusion(pred, truth, c)
        scores[0, c] = dice_iou_prec_rec(counts)
        absent[0, c] = counts.tp == counts.fp == counts.fn == 0
    present = np.array([[np.any(np.asarray(truth) == c) for c in range(classes)]])
    return MetricsReport(scores, present, absent, include_background=include_background,
                         sample_ids=[sample_id])


def aggregate(reports, mode="flat", include_background=None):
    """Combine per-sample reports into one aggregate report."""
    reports = list(reports)
    if not reports:
        raise ValueError("aggregate needs at least one report")
    if include_background is None:
        include_background = reports[0].include_background
    ids = [sid for r in reports for sid in r.sample_ids]
    return MetricsReport(
        np.concatenate([r.per_sample for r in reports]),
        np.concatenate([r.present for r in reports]),
        np.concatenate([r.absent_both for r in reports]),
        mode=mode, include_background=include_background, sample_ids=ids)


def evaluate_masks(preds, truths, classes, mode="flat", include_background=False,
                   sample_ids=None):
    preds = list(preds)
    truths = list(truths)
    if len(preds) != len(truths):
        raise ValueError(f"{len(preds)} predictions for {len(truths)} ground-truth masks")
    if sample_ids is None:
        sample_ids = list(range(len(preds)))
    reports = [sample_metrics(p, t, classes, sid, include_background)
               for p, t, sid in zip(preds, truths, sample_ids)]
    return aggregate(reports, mode, include_background)
