"""Command-line front end.

Exit codes: 0 success, 1 runtime failure, 2 usage or input error.
"""

import argparse
import logging
import os
import sys

from .grid import check_mask, check_probs, one_hot
from .io import NetpbmError, read_pgm, read_prob_planes, write_pfm
from .losses import LOSS_KINDS, ce_loss_map, compute_loss, pixel_weights
from .morphology import disk_element
from .synth import SynthConfig, generate_dataset, load_dataset
from .trainer import (ExperimentConfig, config_from_mapping, evaluate, load_config, load_splits,
                      radius_sweep, train)
from .weighting import class_weight_maps, dataset_class_weights, dilated_areas, pixel_weight_map

# float32 PFM storage limits how closely stored planes can sum to one
PROB_ATOL = 1e-5


class UsageError(Exception):
    """Bad arguments or unreadable inputs (exit code 2)."""


def _radius(text):
    try:
        r = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"radius must be a non-negative integer, got {text!r}")
    if r < 0 or not r.is_integer():
        raise argparse.ArgumentTypeError(f"radius must be a non-negative integer, got {text!r}")
    return int(r)


def _radii(text):
    parts = [p for p in text.split(",") if p.strip()]
    if not parts:
        raise argparse.ArgumentTypeError("need at least one radius")
    return [_radius(p.strip()) for p in parts]


def _loss_name(text):
    if text not in LOSS_KINDS:
        raise argparse.ArgumentTypeError(
            f"unknown loss {text!r}; valid: {', '.join(LOSS_KINDS)}")
    return text


def _read_mask(path, classes=None):
    try:
        return check_mask(read_pgm(path), classes)
    except (OSError, NetpbmError) as exc:
        raise UsageError(f"cannot read mask {path}: {exc}") from exc


def _n_classes(mask, classes):
    return classes if classes is not None else max(int(mask.max()) + 1, 2)


# weights / loss

def cmd_weights(args):
    mask = _read_mask(args.mask, args.classes)
    classes = _n_classes(mask, args.classes)
    onehot = one_hot(mask, classes)
    se = disk_element(args.radius)
    os.makedirs(args.out_dir, exist_ok=True)
    write_pfm(pixel_weight_map(onehot, se), os.path.join(args.out_dir, "M.pfm"))
    for c, w in enumerate(class_weight_maps(onehot, se)):
        write_pfm(w, os.path.join(args.out_dir, f"W_{c}.pfm"))
    for c, area in enumerate(dilated_areas(onehot, se)[1]):
        print(f"class {c}: dilated area {int(area)}")
    return 0


def cmd_loss(args):
    mask = _read_mask(args.mask)
    paths = args.probs
    if len(paths) == 1 and os.path.isdir(paths[0]):
        paths = sorted((os.path.join(paths[0], f) for f in os.listdir(paths[0])
                        if f.startswith("probs_") and f.endswith(".pfm")),
                       key=lambda p: int(os.path.basename(p)[6:-4]))
    try:
        probs = check_probs(read_prob_planes(paths), atol=PROB_ATOL)
    except (OSError, ValueError) as exc:
        raise UsageError(f"bad probability planes: {exc}") from exc
    if probs.shape[1:] != mask.shape:
        raise UsageError(f"probability planes are {probs.shape[1:]}, mask is {mask.shape}")
    if mask.max() >= len(probs):
        raise UsageError(f"mask holds class {int(mask.max())} but only {len(probs)} planes given")
    onehot = one_hot(mask, len(probs))
    kw = {"element": disk_element(args.radius), "smooth": args.smooth}
    if args.loss == "bce":
        kw["weights"] = dataset_class_weights([mask], len(probs))
    value = compute_loss(args.loss, onehot, probs, **kw)
    print(f"total {value.total!r}")
    for name, part in value.parts.items():
        print(f"{name} {part!r}")
    if args.map:
        if args.loss == "dice":
            raise UsageError("the dice loss has no per-pixel loss map")
        v = pixel_weights(args.loss, onehot, kw["element"], kw.get("weights"))
        os.makedirs(args.out_dir, exist_ok=True)
        write_pfm(v * ce_loss_map(onehot, probs), os.path.join(args.out_dir, args.out))
    return 0


# gen / train / eval / sweep

_SYNTH_FLAGS = ("height", "width", "classes", "noise", "boundary_width")
_TRAIN_FLAGS = ("loss", "radius", "epochs", "batch_size", "lr", "weight_decay", "n_samples",
                "eval_fraction", "data", "seed", "hidden", "depth", "metric_mode")


def _overrides(pairs):
    out = {}
    for item in pairs or ():
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _experiment_config(args):
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        mapping = {k: str(getattr(args, k)) for k in _TRAIN_FLAGS
                   if getattr(args, k, None) is not None}
        mapping.update({f"synth.{k}": str(getattr(args, k)) for k in _SYNTH_FLAGS
                        if getattr(args, k, None) is not None})
        if getattr(args, "no_lr_schedule", False):
            mapping["lr_schedule"] = "false"
        if getattr(args, "include_background", False):
            mapping["include_background"] = "true"
        mapping.update(_overrides(args.set))
        cfg = config_from_mapping(mapping, cfg)
        return cfg.replace(out_dir=args.out_dir)
    except (OSError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def cmd_gen(args):
    try:
        cfg = SynthConfig.from_dict(_overrides(args.set) | {
            k: getattr(args, k) for k in _SYNTH_FLAGS if getattr(args, k) is not None})
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    print(generate_dataset(cfg, args.seed, args.n, args.out_dir))
    return 0


def cmd_train(args):
    cfg = _experiment_config(args)
    record = train(cfg)
    print(f"{cfg.loss} R={cfg.radius} seed={cfg.seed}: " + " ".join(
        f"{k}={v:.4f}" for k, v in record.report.summary().items()))
    print(f"wrote {cfg.out_dir}")
    return 0


def cmd_eval(args):
    cfg = _experiment_config(args)
    if args.dataset:
        try:
            images, masks, ids = load_dataset(args.dataset)
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot load dataset {args.dataset}: {exc}") from exc
    else:
        _, _, images, masks, _, ids = load_splits(cfg)
    if not os.path.exists(args.checkpoint):
        raise UsageError(f"no checkpoint at {args.checkpoint}")
    try:
        report = evaluate(args.checkpoint, images, masks, cfg.metric_mode,
                          cfg.include_background, sample_ids=ids)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    os.makedirs(args.out_dir, exist_ok=True)
    report.to_csv(os.path.join(args.out_dir, "metrics.csv"))
    print(" ".join(f"{k}={v!r}" for k, v in report.summary().items()))
    return 0


def cmd_sweep(args):
    cfg = _experiment_config(args)
    rows = radius_sweep(cfg, args.radii, out_dir=args.out_dir)
    for row in rows:
        print(" ".join(f"{k}={v}" if k == "radius" else f"{k}={v:.4f}" for k, v in row.items()))
    print(f"wrote {os.path.join(args.out_dir, 'sweep.csv')}")
    return 0


def _add_experiment_flags(p):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--loss", type=_loss_name)
    p.add_argument("--radius", type=_radius)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--no-lr-schedule", dest="no_lr_schedule", action="store_true")
    p.add_argument("--n-samples", dest="n_samples", type=int)
    p.add_argument("--eval-fraction", dest="eval_fraction", type=float)
    p.add_argument("--data", help="dataset directory instead of synthetic data")
    p.add_argument("--hidden", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--metric-mode", dest="metric_mode", choices=("flat", "per_organ"))
    p.add_argument("--include-background", dest="include_background", action="store_true")
    p.add_argument("--seed", type=int)
    _add_synth_flags(p)


def _add_synth_flags(p):
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--classes", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--boundary-width", dest="boundary_width", type=float)
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="any other config key (repeatable)")


def build_parser():
    parser = argparse.ArgumentParser(prog="dbce", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("weights", help="export dilated weight maps as PFM")
    p.add_argument("--mask", required=True, help="label mask (PGM)")
    p.add_argument("--radius", type=_radius, required=True)
    p.add_argument("--classes", type=int)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_weights)

    p = sub.add_parser("loss", help="evaluate a loss on a mask and probability planes")
    p.add_argument("--mask", required=True)
    p.add_argument("--probs", nargs="+", required=True,
                   help="probs_<c>.pfm files in class order, or their directory")
    p.add_argument("--loss", type=_loss_name, required=True)
    p.add_argument("--radius", type=_radius, default=0)
    p.add_argument("--smooth", type=float, default=1.0)
    p.add_argument("--map", action="store_true", help="write the weighted loss map")
    p.add_argument("--out", default="loss_map.pfm", help="loss map file name")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("gen", help="write a synthetic dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out-dir", required=True)
    _add_synth_flags(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train one model")
    _add_experiment_flags(p)
    p.add_argument("--out-dir", default="run")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", help="dataset directory (default: the config's eval split)")
    _add_experiment_flags(p)
    p.add_argument("--out-dir", default="eval")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="dbce radius sweep")
    p.add_argument("--radii", type=_radii, required=True, help="comma-separated, e.g. 0,4,8")
    _add_experiment_flags(p)
    p.add_argument("--out-dir", default="sweep")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"dbce {args.command}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"dbce {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
