"""A small fully convolutional segmentation net with a hand-written backward
pass, Adam with decoupled weight decay, and a bit-exact checkpoint format.

Architecture: ``depth`` blocks of 3x3 conv + ReLU (zero same-padding), then
a 1x1 conv to ``classes`` logits. No downsampling, so the receptive field is
``2 * depth + 1`` pixels wide.

Inputs are standardised by the config's fixed ``input_shift`` /
``input_scale``. Parameters, gradients and optimizer state are float64;
``compute_dtype="float32"`` runs the convolutions in single precision for
speed (gradient checks use the float64 default).
"""

import io
import json
import struct
from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

CHECKPOINT_MAGIC = b"DBCENET1"


@dataclass(frozen=True)
class ModelConfig:
    classes: int = 2
    in_channels: int = 1
    hidden: int = 16
    depth: int = 2
    kernel: int = 3
    seed: int = 0
    input_shift: float = 0.0
    input_scale: float = 1.0
    compute_dtype: str = "float64"

    def __post_init__(self):
        if self.hidden < 1 or self.depth < 1 or self.in_channels < 1:
            raise ValueError("hidden, depth and in_channels must be >= 1")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError("kernel size must be odd")
        if self.classes < 2:
            raise ValueError("need at least 2 classes")
        if not self.input_scale > 0:
            raise ValueError("input_scale must be positive")
        if self.compute_dtype not in ("float64", "float32"):
            raise ValueError("compute_dtype must be 'float64' or 'float32'")

    def shapes(self):
        """Parameter shapes in checkpoint order: (weight, bias) per layer."""
        out = []
        cin = self.in_channels
        for _ in range(self.depth):
            out += [(self.hidden, cin, self.kernel, self.kernel), (self.hidden,)]
            cin = self.hidden
        out += [(self.classes, cin, 1, 1), (self.classes,)]
        return out


@dataclass
class Model:
    config: ModelConfig
    params: list

    def copy(self):
        return Model(self.config, [p.copy() for p in self.params])

    def forward(self, images):
        return forward(self, images)[0]


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, model, **kw):
        return cls([np.zeros_like(p) for p in model.params],
                   [np.zeros_like(p) for p in model.params], **kw)

    def copy(self):
        return AdamState([a.copy() for a in self.m], [a.copy() for a in self.v],
                         self.step, self.beta1, self.beta2, self.eps)


def init_model(cfg):
    """He-initialised kernels (std ``sqrt(2 / fan_in)``), zero biases."""
    rng = np.random.default_rng(cfg.seed)
    params = []
    for shape in cfg.shapes():
        if len(shape) == 1:
            params.append(np.zeros(shape))
        else:
            fan_in = shape[1] * shape[2] * shape[3]
            params.append(rng.standard_normal(shape) * np.sqrt(2.0 / fan_in))
    return Model(cfg, params)


def _as_batch(images):
    x = np.asarray(images, dtype=np.float64)
    single = x.ndim == 2
    if x.ndim == 2:
        x = x[None, None]
    elif x.ndim == 3:
        x = x[:, None]
    elif x.ndim != 4:
        raise ValueError(f"images must be (H, W), (N, H, W) or (N, Cin, H, W), got {x.shape}")
    return x, single


def _im2col(a, k):
    # (N, H, W, C) -> (N*H*W, k*k*C) with column order (dy, dx, channel)
    n, h, w, c = a.shape
    if k == 1:
        return a.reshape(n * h * w, c)
    p = k // 2
    ap = np.pad(a, ((0, 0), (p, p), (p, p), (0, 0)))
    win = sliding_window_view(ap, (k, k), axis=(1, 2))  # (N, H, W, C, k, k)
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(n * h * w, k * k * c)


def _flat_kernel(wgt):
    # (Cout, Cin, k, k) -> (Cout, k*k*Cin) matching the im2col column order
    return wgt.transpose(0, 2, 3, 1).reshape(wgt.shape[0], -1)


def forward(model, images):
    """Logits for ``images`` plus the activation cache for :func:`backward`.

    ``(H, W)`` input gives ``(C, H, W)`` logits; batches give ``(N, C, H, W)``.
    """
    x, single = _as_batch(images)
    cfg = model.config
    if x.shape[1] != cfg.in_channels:
        raise ValueError(f"model expects {cfg.in_channels} input channels, got {x.shape[1]}")
    if min(x.shape[2:]) < cfg.kernel:
        raise ValueError(f"image {x.shape[2:]} smaller than the {cfg.kernel}x{cfg.kernel} kernel")
    n, _, h, w = x.shape
    dt = np.dtype(cfg.compute_dtype)
    cache = []
    # fixed input standardisation, part of the model config
    a = np.ascontiguousarray((x.transpose(0, 2, 3, 1) - cfg.input_shift) / cfg.input_scale,
                             dtype=dt)
    n_layers = len(model.params) // 2
    for layer in range(n_layers):
        wgt, bias = model.params[2 * layer], model.params[2 * layer + 1]
        cols = _im2col(a, wgt.shape[-1])
        z = (cols @ _flat_kernel(wgt).T.astype(dt) + bias.astype(dt)).reshape(n, h, w, -1)
        last = layer == n_layers - 1
        if not last:
            np.maximum(z, 0, out=z)
        cache.append((a.shape, cols, None if last else z))
        a = z
    logits = a.transpose(0, 3, 1, 2).astype(np.float64)
    return (logits[0] if single else logits), (single, cache)


def backward(model, cache, grad_logits):
    """Gradients of ``sum(logits * grad_logits)`` for every parameter."""
    single, layers = cache
    g = np.asarray(grad_logits, dtype=np.float64)
    if single:
        g = g[None]
    n_layers = len(model.params) // 2
    if len(layers) != n_layers:
        raise ValueError("cache does not match this model")
    n, h, w, _ = layers[-1][0]
    expected = (n, model.config.classes, h, w)
    if g.shape != expected:
        raise ValueError(f"grad_logits shape {g.shape} does not match logits {expected}")
    dt = np.dtype(model.config.compute_dtype)
    g = g.transpose(0, 2, 3, 1).astype(dt)
    grads = [None] * len(model.params)
    for layer in reversed(range(n_layers)):
        shape, cols, relu_out = layers[layer]
        wgt = model.params[2 * layer]
        if relu_out is not None:
            g = np.where(relu_out > 0, g, 0)
        cout, cin, k, _ = wgt.shape
        gz = g.reshape(-1, cout)
        dw = (gz.T @ cols).reshape(cout, k, k, cin).transpose(0, 3, 1, 2)
        grads[2 * layer] = dw.astype(np.float64)
        grads[2 * layer + 1] = gz.sum(axis=0, dtype=np.float64)
        if layer:
            # input gradient: correlate with the flipped, transposed kernel
            flipped = _flat_kernel(wgt[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
            g = (_im2col(g, k) @ flipped.T.astype(dt)).reshape(shape)
    return grads


def adam_step(model, grads, state, lr, weight_decay=0.0):
    """One Adam update with bias correction and decoupled weight decay
    (``p -= lr * wd * p`` before the Adam step). Returns new model and state."""
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient; refusing to update")
    new = model.copy()
    st = state.copy()
    st.step += 1
    b1, b2 = st.beta1, st.beta2
    c1 = 1.0 - b1 ** st.step
    c2 = 1.0 - b2 ** st.step
    for i, (p, g) in enumerate(zip(new.params, grads)):
        if weight_decay:
            p -= lr * weight_decay * p
        st.m[i] = b1 * st.m[i] + (1.0 - b1) * g
        st.v[i] = b2 * st.v[i] + (1.0 - b2) * g * g
        p -= lr * (st.m[i] / c1) / (np.sqrt(st.v[i] / c2) + st.eps)
    return new, st


def save_checkpoint(model, path):
    """Magic, length-prefixed JSON config, then every tensor as ``<f8``."""
    blob = json.dumps(asdict(model.config), sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for p in model.params:
            f.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as f:
        data = f.read()
    buf = io.BytesIO(data)
    if buf.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a model checkpoint (bad magic)")
    (n,) = struct.unpack("<I", buf.read(4))
    cfg = ModelConfig(**json.loads(buf.read(n).decode("utf-8")))
    params = []
    for shape in cfg.shapes():
        count = int(np.prod(shape))
        raw = buf.read(8 * count)
        if len(raw) != 8 * count:
            raise ValueError(f"{path}: truncated checkpoint")
        params.append(np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64))
    if buf.read(1):
        raise ValueError(f"{path}: trailing bytes after parameters")
    return Model(cfg, params)
