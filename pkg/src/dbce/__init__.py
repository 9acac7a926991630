"""Dilated balanced cross entropy for class-imbalanced segmentation.

Weight maps from dilated ground-truth masks, the comparison losses with exact
gradients, segmentation metrics, a seeded synthetic data generator and a small
trainer, exposed both as functions and as scikit-learn style estimators.
"""

from .estimator import DilatedWeightMap, SegmentationNet, poly_lr
from .grid import LabelRangeError, argmax_labels, one_hot, softmax
from .losses import LOSS_KINDS, LossValue, compute_loss, loss_gradient
from .metrics import MetricsReport, aggregate, evaluate_masks, sample_metrics
from .morphology import StructuringElement, dilate, disk_element
from .synth import SplitMix64, SynthConfig, generate_batch, generate_dataset, generate_sample
from .trainer import ExperimentConfig, RunRecord, evaluate, radius_sweep, train
from .weighting import (ClassWeights, class_weight_map, class_weight_maps, dataset_class_weights,
                        pixel_weight_map, sample_class_weights)

__version__ = "0.1.0"

__all__ = [
    "LOSS_KINDS", "ClassWeights", "DilatedWeightMap", "ExperimentConfig", "LabelRangeError",
    "LossValue", "MetricsReport", "RunRecord", "SegmentationNet", "SplitMix64",
    "StructuringElement", "SynthConfig", "aggregate", "argmax_labels", "class_weight_map",
    "class_weight_maps", "compute_loss", "dataset_class_weights", "dilate", "disk_element",
    "evaluate", "evaluate_masks", "generate_batch", "generate_dataset", "generate_sample",
    "loss_gradient", "one_hot", "pixel_weight_map", "poly_lr", "radius_sweep",
    "sample_class_weights", "sample_metrics", "softmax", "train",
]
