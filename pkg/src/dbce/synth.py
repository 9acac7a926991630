"""Seeded generator of class-imbalanced synthetic segmentation samples.

Each sample is a single-channel image in [0, 1] holding a few small
elliptical objects on a textured background, plus the crisp label mask.
Object edges are blurred over ``boundary_width`` pixels so object and
background intensities overlap around every object.

Randomness comes from :class:`SplitMix64`, a counter-based generator with
fixed constants, so a sample depends only on ``(config, seed)``:

    z = key + GAMMA * (counter + 1)            (mod 2**64)
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    out = z ^ (z >> 31)

with ``GAMMA = 0x9E3779B97F4A7C15``. Uniforms use the top 53 bits; normals
use Box-Muller on consecutive uniform pairs.
"""

import csv
import os
from dataclasses import asdict, dataclass, fields

import numpy as np

from .io import read_pfm, read_pgm, write_pfm, write_pgm

GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    """Counter-based 64-bit generator; draws are pure functions of
    ``(key, counter)``."""

    def __init__(self, seed, stream=0):
        base = np.array([(int(seed) * 0x9E3779B97F4A7C15 + int(stream)) & _MASK64],
                        dtype=np.uint64)
        with np.errstate(over="ignore"):
            self.key = _mix(base)[0]
        self.counter = 0

    def next_u64(self, n):
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return _mix(self.key + GAMMA * idx)

    def uniform(self, low=0.0, high=1.0, size=None):
        n = 1 if size is None else int(np.prod(size))
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
        out = low + (high - low) * u
        return float(out[0]) if size is None else out.reshape(size)

    def integers(self, low, high):
        """Integer in ``[low, high]`` inclusive."""
        return low + min(int(self.uniform() * (high - low + 1)), high - low)

    def normal(self, size):
        n = int(np.prod(size))
        m = (n + 1) // 2
        u1 = 1.0 - self.uniform(size=m)  # (0, 1]
        u2 = self.uniform(size=m)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])
        return z[:n].reshape(size)


@dataclass(frozen=True)
class SynthConfig:
    height: int = 96
    width: int = 96
    classes: int = 2
    min_objects: int = 1
    max_objects: int = 3
    min_radius: float = 3.0
    max_radius: float = 7.0
    min_fraction: float = 0.005
    max_fraction: float = 0.04
    boundary_width: float = 2.0
    noise: float = 0.08
    noise_smoothing: int = 2
    background_level: float = 0.3
    object_level: float = 0.7
    max_retries: int = 64

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError("image dims must be >= 1")
        if not 2 <= self.classes <= 255:
            raise ValueError("classes must be in [2, 255]")
        if not 1 <= self.min_objects <= self.max_objects:
            raise ValueError("need 1 <= min_objects <= max_objects")
        if not 0 < self.min_radius <= self.max_radius:
            raise ValueError("radius range must be positive and ordered")
        if not 0 < self.min_fraction <= self.max_fraction < 1:
            raise ValueError("foreground fraction band must lie inside (0, 1)")
        if self.boundary_width < 0 or self.noise < 0 or self.noise_smoothing < 0:
            raise ValueError("boundary width, noise and smoothing must be >= 0")

    @classmethod
    def from_dict(cls, d):
        names = {f.name: f.type for f in fields(cls)}
        kw = {}
        for k, v in d.items():
            if k not in names:
                raise ValueError(f"unknown synth option {k!r}")
            kw[k] = int(v) if isinstance(getattr(cls, k), int) else float(v)
        return cls(**kw)

    def class_levels(self):
        """Mean intensity of each class; class 0 is the background."""
        fg = np.linspace(self.object_level, 1.0, self.classes - 1) if self.classes > 2 \
            else np.array([self.object_level])
        return np.concatenate([[self.background_level], fg])


@dataclass
class SynthSample:
    image: np.ndarray
    mask: np.ndarray
    seed: int


def _smooth(noise, k):
    # separable box filter of half-width k, applied twice (roughly Gaussian)
    if k == 0:
        return noise
    out = noise
    for _ in range(2):
        for axis in (0, 1):
            pad = [(0, 0), (0, 0)]
            pad[axis] = (k, k)
            p = np.pad(out, pad, mode="reflect")
            cs = np.cumsum(p, axis=axis)
            cs = np.concatenate([np.zeros_like(np.take(cs, [0], axis=axis)), cs], axis=axis)
            n = out.shape[axis]
            hi = np.take(cs, np.arange(2 * k + 1, n + 2 * k + 1), axis=axis)
            lo = np.take(cs, np.arange(0, n), axis=axis)
            out = (hi - lo) / (2 * k + 1)
    return out / out.std() if out.std() > 0 else out


def _layout(cfg, rng):
    """Draw objects until the foreground fraction lands in the band."""
    h, w = cfg.height, cfg.width
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    for _ in range(cfg.max_retries):
        dist = np.full((h, w), np.inf)
        owner = np.zeros((h, w), dtype=np.int64)
        n_obj = rng.integers(cfg.min_objects, cfg.max_objects)
        for _ in range(n_obj):
            cls = 1 + rng.integers(0, cfg.classes - 2)
            ry = rng.uniform(cfg.min_radius, cfg.max_radius)
            rx = rng.uniform(cfg.min_radius, cfg.max_radius)
            cy = rng.uniform(0, h - 1)
            cx = rng.uniform(0, w - 1)
            theta = rng.uniform(0, np.pi)
            dy, dx = yy - cy, xx - cx
            u = (dy * np.cos(theta) + dx * np.sin(theta)) / ry
            v = (-dy * np.sin(theta) + dx * np.cos(theta)) / rx
            rho = np.sqrt(u * u + v * v)
            # approximate signed distance to the ellipse edge, in pixels
            sd = (rho - 1.0) * np.sqrt(rx * ry)
            closer = sd < dist
            dist = np.where(closer, sd, dist)
            owner = np.where(closer, cls, owner)
        mask = np.where(dist <= 0.0, owner, 0)
        frac = np.count_nonzero(mask) / mask.size
        if cfg.min_fraction <= frac <= cfg.max_fraction:
            return mask, dist, owner
    raise ValueError(
        f"could not place objects with foreground fraction in "
        f"[{cfg.min_fraction}, {cfg.max_fraction}] on a {h}x{w} grid with radii "
        f"[{cfg.min_radius}, {cfg.max_radius}] after {cfg.max_retries} attempts")


def generate_sample(cfg, seed):
    """Deterministic sample for ``(cfg, seed)``."""
    rng = SplitMix64(seed, stream=1)
    mask, dist, owner = _layout(cfg, rng)
    levels = cfg.class_levels()
    if cfg.boundary_width > 0:
        alpha = 0.5 * (1.0 - np.tanh(dist / cfg.boundary_width))
    else:
        alpha = (dist <= 0.0).astype(np.float64)
    bg = levels[0]
    image = bg + (levels[owner] - bg) * alpha
    if cfg.noise > 0:
        tex = _smooth(SplitMix64(seed, stream=2).normal((cfg.height, cfg.width)),
                      cfg.noise_smoothing)
        image = image + cfg.noise * tex
    return SynthSample(np.clip(image, 0.0, 1.0), mask, int(seed))


def generate_batch(cfg, seeds):
    samples = [generate_sample(cfg, s) for s in seeds]
    return (np.stack([s.image for s in samples]),
            np.stack([s.mask for s in samples]))


MANIFEST = "manifest.csv"


def generate_dataset(cfg, base_seed, n, out_dir):
    """Write ``n`` (image PFM, mask PGM) pairs plus ``manifest.csv``."""
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for i in range(n):
        seed = base_seed + i
        s = generate_sample(cfg, seed)
        img_name = f"image_{seed:06d}.pfm"
        mask_name = f"mask_{seed:06d}.pgm"
        try:
            write_pfm(s.image, os.path.join(out_dir, img_name))
            write_pgm(s.mask, os.path.join(out_dir, mask_name))
        except OSError as exc:
            raise OSError(f"failed writing sample {seed} under {out_dir}: {exc}") from exc
        counts = np.bincount(s.mask.ravel(), minlength=cfg.classes)
        rows.append([img_name, mask_name, seed] + [int(c) for c in counts])
    with open(os.path.join(out_dir, MANIFEST), "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["file_image", "file_mask", "seed"]
                   + [f"count_class_{c}" for c in range(cfg.classes)])
        w.writerows(rows)
    return os.path.join(out_dir, MANIFEST)


def load_dataset(path):
    """Load a directory written by :func:`generate_dataset` (or any directory
    with a manifest of PFM/PGM pairs). Returns images, masks, seeds."""
    manifest = os.path.join(path, MANIFEST)
    if not os.path.exists(manifest):
        raise FileNotFoundError(f"no {MANIFEST} in {path}")
    images, masks, seeds = [], [], []
    with open(manifest, newline="") as f:
        for row in csv.DictReader(f):
            images.append(read_pfm(os.path.join(path, row["file_image"])))
            masks.append(read_pgm(os.path.join(path, row["file_mask"])))
            seeds.append(int(row["seed"]))
    if not images:
        raise ValueError(f"{manifest} lists no samples")
    return np.stack(images), np.stack(masks), seeds


def config_dict(cfg):
    return asdict(cfg)
