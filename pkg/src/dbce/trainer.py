"""Experiment orchestration: train under one loss, evaluate a checkpoint,
sweep the dilation radius.

A run writes to its output directory:

``run.jsonl``   one JSON record per epoch, then a final summary record
``metrics.csv`` final evaluation table (see :mod:`dbce.metrics`)
``model.ckpt``  trained parameters
``timing.json`` wall-clock time, kept apart so the other files are
                byte-identical across repeated runs

Synthetic train and eval splits come from disjoint seed ranges, so they never
share a sample, and nothing in the data pipeline, model init or shuffle order
depends on the loss.
"""

import csv
import dataclasses
import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .estimator import SegmentationNet, check_images_masks, poly_lr  # noqa: F401 (re-export)
from .grid import argmax_labels, softmax
from .losses import LOSS_KINDS
from .metrics import evaluate_masks
from .morphology import _check_radius
from .nnet import load_checkpoint, save_checkpoint
from .synth import SynthConfig, generate_batch, load_dataset

log = logging.getLogger(__name__)

EVAL_SEED_OFFSET = 500_000
SEED_STRIDE = 1_000_000


@dataclass(frozen=True)
class ExperimentConfig:
    loss: str = "dbce"
    radius: int = 8
    epochs: int = 30
    batch_size: int = 8
    lr: float = 5e-4
    weight_decay: float = 1e-4
    lr_schedule: bool = True
    eval_fraction: float = 1 / 3
    n_samples: int = 300
    seed: int = 0
    data: str = ""
    out_dir: str = "run"
    hidden: int = 16
    depth: int = 2
    smooth: float = 1.0
    normalize: str = "sum"
    bce_weights: str = "dataset"
    metric_mode: str = "flat"
    include_background: bool = False
    compute_dtype: str = "float32"
    synth: SynthConfig = field(default_factory=SynthConfig)

    def __post_init__(self):
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"unknown loss {self.loss!r}; valid: {', '.join(LOSS_KINDS)}")
        object.__setattr__(self, "radius", _check_radius(self.radius))
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 < self.eval_fraction < 1:
            raise ValueError("eval_fraction must lie in (0, 1)")
        if self.normalize not in ("sum", "mean"):
            raise ValueError("normalize must be 'sum' or 'mean'")
        if self.bce_weights not in ("dataset", "sample"):
            raise ValueError("bce_weights must be 'dataset' or 'sample'")
        if self.metric_mode not in ("flat", "per_organ"):
            raise ValueError("metric_mode must be 'flat' or 'per_organ'")
        if self.compute_dtype not in ("float32", "float64"):
            raise ValueError("compute_dtype must be 'float32' or 'float64'")
        if self.n_train >= EVAL_SEED_OFFSET or self.n_eval >= EVAL_SEED_OFFSET:
            raise ValueError("too many synthetic samples for the seed layout")

    @property
    def n_eval(self):
        return max(1, int(round(self.n_samples * self.eval_fraction)))

    @property
    def n_train(self):
        return max(1, self.n_samples - self.n_eval)

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    def to_dict(self, with_out_dir=True):
        d = dataclasses.asdict(self)
        d["synth"] = dataclasses.asdict(self.synth)
        if not with_out_dir:
            # where a run is written is not part of what it computes
            del d["out_dir"]
        return d

    def estimator(self):
        return SegmentationNet(
            loss=self.loss, radius=self.radius,
            n_classes=None if self.data else self.synth.classes,
            hidden=self.hidden, depth=self.depth, epochs=self.epochs,
            batch_size=self.batch_size, lr=self.lr, weight_decay=self.weight_decay,
            lr_schedule=self.lr_schedule, smooth=self.smooth,
            normalize=None if self.normalize == "sum" else "mean",
            bce_weights=self.bce_weights, compute_dtype=self.compute_dtype,
            random_state=self.seed)


_BOOL = {"true": True, "1": True, "yes": True, "on": True,
         "false": False, "0": False, "no": False, "off": False}


def _coerce(name, value, default):
    if isinstance(default, bool):
        key = str(value).strip().lower()
        if key not in _BOOL:
            raise ValueError(f"{name}: expected a boolean, got {value!r}")
        return _BOOL[key]
    if isinstance(default, int):
        f = float(value)
        if not f.is_integer():
            raise ValueError(f"{name}: expected an integer, got {value!r}")
        return int(f)
    if isinstance(default, float):
        return float(value)
    return str(value)


def config_from_mapping(mapping, base=None):
    """Build a config from flat ``key -> value`` strings.

    Synthetic-data options use a ``synth.`` prefix (``synth.noise = 0.1``).
    """
    base = base or ExperimentConfig()
    top, synth = {}, {}
    names = {f.name for f in dataclasses.fields(ExperimentConfig)} - {"synth"}
    synth_names = {f.name for f in dataclasses.fields(SynthConfig)}
    for key, value in mapping.items():
        if key.startswith("synth."):
            sub = key[len("synth."):]
            if sub not in synth_names:
                raise ValueError(f"unknown config key {key!r}")
            synth[sub] = _coerce(key, value, getattr(base.synth, sub))
        elif key in names:
            top[key] = _coerce(key, value, getattr(base, key))
        else:
            raise ValueError(f"unknown config key {key!r}")
    if synth:
        top["synth"] = dataclasses.replace(base.synth, **synth)
    return dataclasses.replace(base, **top)


def parse_config_text(text):
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ValueError(f"line {lineno}: empty key")
        out[key] = value
    return out


def load_config(path, base=None):
    with open(path) as f:
        return config_from_mapping(parse_config_text(f.read()), base)


def dump_config(cfg, with_out_dir=True):
    lines = []
    for k, v in cfg.to_dict(with_out_dir).items():
        if k == "synth":
            lines += [f"synth.{sk} = {sv}" for sk, sv in v.items()]
        else:
            lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


def load_splits(cfg):
    """``(X_train, y_train, X_eval, y_eval, train_ids, eval_ids)``."""
    if cfg.data:
        X, y, seeds = load_dataset(cfg.data)
        n_eval = max(1, int(round(len(X) * cfg.eval_fraction)))
        if n_eval >= len(X):
            raise ValueError(f"dataset {cfg.data} too small to split")
        k = len(X) - n_eval
        return X[:k], y[:k], X[k:], y[k:], seeds[:k], seeds[k:]
    base = cfg.seed * SEED_STRIDE
    train_ids = list(range(base, base + cfg.n_train))
    eval_ids = list(range(base + EVAL_SEED_OFFSET, base + EVAL_SEED_OFFSET + cfg.n_eval))
    Xtr, ytr = generate_batch(cfg.synth, train_ids)
    Xev, yev = generate_batch(cfg.synth, eval_ids)
    return Xtr, ytr, Xev, yev, train_ids, eval_ids


def content_hash(cfg, arrays):
    """Git-style blob SHA-1 over the config (minus ``out_dir``) and data bytes."""
    d = cfg.to_dict(with_out_dir=False)
    payload = json.dumps(d, sort_keys=True).encode()
    payload += b"".join(np.ascontiguousarray(a).tobytes() for a in arrays)
    h = hashlib.sha1(f"blob {len(payload)}\0".encode())
    h.update(payload)
    return h.hexdigest()


@dataclass
class RunRecord:
    epochs: list
    final: dict
    config: dict
    input_hash: str
    wall_time: float = 0.0
    report: object = None

    def comparable(self):
        """Everything except wall time and the in-memory report object."""
        return {"epochs": self.epochs, "final": self.final, "config": self.config,
                "input_hash": self.input_hash}


def _write_jsonl(path, records):
    with open(path, "w") as f:
        for r in records:
            f.write(json.dumps(r, sort_keys=True) + "\n")


def train(cfg, write=True):
    """Train one model under ``cfg`` and evaluate it on the held-out split."""
    t0 = time.perf_counter()
    Xtr, ytr, Xev, yev, _, eval_ids = load_splits(cfg)
    est = cfg.estimator()
    try:
        est.fit(Xtr, ytr, eval_set=(Xev, yev))
    except FloatingPointError as exc:
        raise FloatingPointError(
            f"{cfg.loss} run (seed {cfg.seed}, R={cfg.radius}): {exc}") from exc
    report = evaluate_masks(est.predict(Xev), yev, est.n_classes_, cfg.metric_mode,
                            cfg.include_background, sample_ids=eval_ids)
    record = RunRecord(
        epochs=est.history_, final=report.to_dict(), config=cfg.to_dict(with_out_dir=False),
        input_hash=content_hash(cfg, [Xtr, ytr, Xev, yev]),
        wall_time=time.perf_counter() - t0, report=report)
    if write:
        os.makedirs(cfg.out_dir, exist_ok=True)
        _write_jsonl(os.path.join(cfg.out_dir, "run.jsonl"), est.history_ + [{
            "record": "final", "final": record.final, "config": record.config,
            "input_hash": record.input_hash}])
        report.to_csv(os.path.join(cfg.out_dir, "metrics.csv"))
        save_checkpoint(est.model_, os.path.join(cfg.out_dir, "model.ckpt"))
        with open(os.path.join(cfg.out_dir, "config.txt"), "w") as f:
            f.write(dump_config(cfg, with_out_dir=False))
        with open(os.path.join(cfg.out_dir, "timing.json"), "w") as f:
            json.dump({"wall_time_s": record.wall_time}, f)
    log.info("%s R=%d seed=%d: %s", cfg.loss, cfg.radius, cfg.seed, report.summary())
    return record


def evaluate(checkpoint, images, masks, mode="flat", include_background=False,
             sample_ids=None):
    """Score a saved model (path or :class:`~dbce.nnet.Model`) on a dataset."""
    model = checkpoint
    if isinstance(checkpoint, (str, os.PathLike)):
        model = load_checkpoint(checkpoint)
    images, masks = check_images_masks(images, masks)
    if masks.max() >= model.config.classes:
        raise ValueError(f"masks hold class {int(masks.max())} but the model predicts "
                         f"{model.config.classes} classes")
    preds = argmax_labels(softmax(model.forward(images)))
    return evaluate_masks(preds, masks, model.config.classes, mode, include_background,
                          sample_ids=sample_ids)


SWEEP_COLUMNS = ("radius", "mdice", "miou", "mprec", "mrec")


def radius_sweep(cfg, radii, out_dir=None):
    """Train and evaluate a ``dbce`` model per radius (shared seed and data).

    Returns one row per radius in the given order; writes ``sweep.csv`` when
    ``out_dir`` is given.
    """
    radii = [_check_radius(r) for r in radii]
    if not radii:
        raise ValueError("radius sweep needs at least one radius")
    rows = []
    for i, r in enumerate(radii):
        run_cfg = cfg.replace(loss="dbce", radius=r,
                              out_dir=os.path.join(out_dir or cfg.out_dir, f"{i:02d}_R{r}"))
        try:
            rec = train(run_cfg, write=out_dir is not None)
        except Exception as exc:
            raise RuntimeError(f"sweep run at radius {r} failed: {exc}") from exc
        s = rec.report.summary()
        rows.append({"radius": r, **{k: s[k] for k in SWEEP_COLUMNS[1:]}})
    if out_dir is not None:
        with open(os.path.join(out_dir, "sweep.csv"), "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(SWEEP_COLUMNS)
            for row in rows:
                w.writerow([row["radius"]] + [repr(float(row[k])) for k in SWEEP_COLUMNS[1:]])
    return rows
