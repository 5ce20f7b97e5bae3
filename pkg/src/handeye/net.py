"""Grasp success predictor: a batch-normalized CNN over (I0, It) with a tiled
motor-command injection, written directly in numpy with hand-derived gradients.

Activations are NHWC float64. The architecture lives in a plain-text
descriptor (one layer per line) which is also what the model file stores.
"""

import logging
import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import as_strided

log = logging.getLogger(__name__)

MAGIC = b"SGNT"
FORMAT_VERSION = 1
BN_EPS = 1e-5
BN_MOMENTUM = 0.99


class ArchitectureError(ValueError):
    """The layer chain is inconsistent."""


class ModelFormatError(ValueError):
    """Model file is not a readable network file."""


class ModelVersionError(ModelFormatError):
    pass


class TruncatedModelError(ModelFormatError):
    pass


@dataclass(frozen=True)
class ArchConfig:
    image_size: int = 56
    image_channels: int = 1
    stem_filters: int = 8
    stem_kernel: int = 6
    mid_filters: int = 16
    n_mid_convs: int = 2
    post_filters: int = 16
    n_post_convs: int = 2
    n_final_convs: int = 1
    fc_units: tuple = (64, 64)
    injection: str = "add"
    # commands are in meters; scale translations to O(1) before the injection layer
    command_scale: tuple = (10.0, 10.0, 10.0, 1.0, 1.0)

    def descriptor(self):
        f = self.mid_filters
        lines = [
            f"input size={self.image_size} channels={2 * self.image_channels}",
            "command " + "scale=" + ",".join(repr(float(s)) for s in self.command_scale),
            f"conv name=conv1 filters={self.stem_filters} kernel={self.stem_kernel} stride=2 pad={(self.stem_kernel - 1) // 2}",
            "bn name=bn1", "relu", "maxpool kernel=3 stride=2 pad=1",
        ]
        k = 2
        for _ in range(self.n_mid_convs):
            lines += [f"conv name=conv{k} filters={f} kernel=5 stride=1 pad=2", f"bn name=bn{k}", "relu"]
            k += 1
        lines += ["maxpool kernel=3 stride=2 pad=1", f"inject name=inject width={f} mode={self.injection}"]
        for _ in range(self.n_post_convs):
            lines += [f"conv name=conv{k} filters={self.post_filters} kernel=3 stride=1 pad=1", f"bn name=bn{k}", "relu"]
            k += 1
        lines += ["maxpool kernel=2 stride=2 pad=0"]
        for _ in range(self.n_final_convs):
            lines += [f"conv name=conv{k} filters={self.post_filters} kernel=3 stride=1 pad=1", f"bn name=bn{k}", "relu"]
            k += 1
        lines += ["flatten"]
        for i, units in enumerate(self.fc_units, 1):
            lines += [f"fc name=fc{i} units={units}", "relu"]
        lines += ["fc name=out units=1", "sigmoid"]
        return "\n".join(lines)


@dataclass
class Layer:
    kind: str
    name: str = ""
    opts: dict = field(default_factory=dict)
    in_shape: tuple = ()
    out_shape: tuple = ()


@dataclass
class NetParams:
    descriptor: str
    params: dict  # name -> float64 array, in descriptor order

    def __post_init__(self):
        self.input_size, self.input_channels, self.command_scale, self.layers = parse_descriptor(self.descriptor)

    def copy(self):
        return NetParams(self.descriptor, {k: v.copy() for k, v in self.params.items()})

    def equals(self, other):
        return (self.descriptor == other.descriptor and list(self.params) == list(other.params)
                and all(np.array_equal(self.params[k], other.params[k]) for k in self.params))


def _opts(tokens):
    out = {}
    for tok in tokens:
        key, _, val = tok.partition("=")
        out[key] = val
    return out


def parse_descriptor(text):
    """Parse and shape-check a descriptor; returns (size, channels, command_scale, layers)."""
    lines = [ln.split() for ln in text.strip().splitlines() if ln.strip()]
    if not lines or lines[0][0] != "input":
        raise ArchitectureError("descriptor must start with an 'input' line")
    head = _opts(lines[0][1:])
    size, channels = int(head["size"]), int(head["channels"])
    scale = np.ones(5)
    body = lines[1:]
    if body and body[0][0] == "command":
        scale = np.array([float(s) for s in _opts(body[0][1:])["scale"].split(",")])
        body = body[1:]
    shape = (size, size, channels)
    layers = []
    injected = False
    for idx, toks in enumerate(body):
        kind, o = toks[0], _opts(toks[1:])
        name = o.pop("name", f"{kind}{idx}")
        layer = Layer(kind, name, o, shape)
        h, w, c = shape if len(shape) == 3 else (None, None, shape[0])
        if kind == "conv":
            k, s, p, f = int(o["kernel"]), int(o["stride"]), int(o["pad"]), int(o["filters"])
            if h + 2 * p < k:
                raise ArchitectureError(f"layer {name!r}: kernel {k} larger than padded input {h + 2 * p}")
            shape = ((h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1, f)
        elif kind == "maxpool":
            k, s, p = int(o["kernel"]), int(o["stride"]), int(o["pad"])
            if h + 2 * p < k:
                raise ArchitectureError(f"layer {name!r}: pool window {k} larger than input {h + 2 * p}")
            shape = ((h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1, c)
        elif kind == "inject":
            width, mode = int(o["width"]), o.get("mode", "add")
            if mode == "add" and width != c:
                raise ArchitectureError(f"layer {name!r}: width {width} != {c} channels of the map it is added to")
            if mode not in ("add", "concat"):
                raise ArchitectureError(f"layer {name!r}: unknown injection mode {mode!r}")
            shape = (h, w, c if mode == "add" else c + width)
            injected = True
        elif kind == "flatten":
            shape = (h * w * c,)
        elif kind == "fc":
            if len(shape) != 1:
                raise ArchitectureError(f"layer {name!r}: fully connected layer needs a flat input")
            shape = (int(o["units"]),)
        elif kind in ("bn", "relu", "sigmoid"):
            pass
        else:
            raise ArchitectureError(f"layer {name!r}: unknown layer type {kind!r}")
        if min(shape) <= 0:
            raise ArchitectureError(f"layer {name!r}: empty output shape {shape}")
        layer.out_shape = shape
        layers.append(layer)
    if not injected:
        raise ArchitectureError("descriptor has no 'inject' layer for the motor command")
    if shape != (1,) or layers[-1].kind != "sigmoid":
        raise ArchitectureError("network must end in a single-unit fc followed by sigmoid")
    for i, layer in enumerate(layers):
        if layer.kind == "conv":
            layer.opts["bias"] = not (i + 1 < len(layers) and layers[i + 1].kind == "bn")
    return size, channels, scale, layers


def _param_shapes(layers):
    out = []
    for layer in layers:
        if layer.kind == "conv":
            k, f = int(layer.opts["kernel"]), int(layer.opts["filters"])
            out.append((f"{layer.name}.w", (layer.in_shape[2] * k * k, f)))
            if layer.opts["bias"]:
                out.append((f"{layer.name}.b", (f,)))
        elif layer.kind == "bn":
            c = layer.in_shape[-1]
            out += [(f"{layer.name}.gamma", (c,)), (f"{layer.name}.beta", (c,)),
                    (f"{layer.name}.mean", (c,)), (f"{layer.name}.var", (c,))]
        elif layer.kind == "inject":
            width = int(layer.opts["width"])
            out += [(f"{layer.name}.w", (5, width)), (f"{layer.name}.b", (width,))]
        elif layer.kind == "fc":
            out += [(f"{layer.name}.w", (layer.in_shape[0], layer.out_shape[0])), (f"{layer.name}.b", (layer.out_shape[0],))]
    return out


def is_running_stat(name):
    return name.endswith(".mean") or name.endswith(".var")


def build_network(arch=None, seed=0):
    """Freshly initialized parameters (He fan-in scaling, BN scale 1 shift 0)."""
    descriptor = arch if isinstance(arch, str) else (arch or ArchConfig()).descriptor()
    _, _, _, layers = parse_descriptor(descriptor)
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in _param_shapes(layers):
        if name.endswith(".w"):
            params[name] = rng.normal(0.0, np.sqrt(2.0 / shape[0]), shape)
        elif name.endswith(".gamma") or name.endswith(".var"):
            params[name] = np.ones(shape)
        else:
            params[name] = np.zeros(shape)
    return NetParams(descriptor, params)


# --- layer kernels -----------------------------------------------------------------------------

def _pad(x, p, value=0.0):
    if not p:
        return x
    n, h, w, c = x.shape
    xp = np.full((n, h + 2 * p, w + 2 * p, c), value)
    xp[:, p:p + h, p:p + w, :] = x
    return xp


def _windows(xp, k, s):
    """Strided (N, Ho, Wo, k, k, C) view of k x k windows."""
    n, h, w, c = xp.shape
    ho, wo = (h - k) // s + 1, (w - k) // s + 1
    sn, sh, sw, sc = xp.strides
    return as_strided(xp, (n, ho, wo, k, k, c), (sn, sh * s, sw * s, sh, sw, sc), writeable=False)


def _im2col(x, k, s, p):
    xp = _pad(x, p)
    win = _windows(xp, k, s)
    n, ho, wo = win.shape[:3]
    return win.reshape(n * ho * wo, -1), (n, ho, wo), xp.shape


def _conv_input_grad(d, w, xp_shape, k, s, p):
    """Gradient w.r.t. the conv input."""
    n, ho, wo, f = d.shape
    c = xp_shape[3]
    if s == 1:
        # transposed convolution: correlate the padded output grad with the flipped kernel
        cols, _, _ = _im2col(d, k, 1, k - 1 - p) if k - 1 - p >= 0 else (None, None, None)
        if cols is not None:
            wflip = w.reshape(k, k, c, f)[::-1, ::-1].transpose(0, 1, 3, 2).reshape(k * k * f, c)
            h, w_ = xp_shape[1] - 2 * p, xp_shape[2] - 2 * p
            return (cols @ wflip).reshape(n, h, w_, c)
    dd = (d.reshape(-1, f) @ w.T).reshape(n, ho, wo, k, k, c)
    dxp = np.zeros(xp_shape)
    for i in range(k):
        for j in range(k):
            dxp[:, i:i + s * ho:s, j:j + s * wo:s, :] += dd[:, :, :, i, j, :]
    return dxp[:, p:xp_shape[1] - p, p:xp_shape[2] - p, :] if p else dxp


def _pool_forward(x, k, s, p):
    xp = _pad(x, p, -np.inf)
    win = _windows(xp, k, s).transpose(0, 1, 2, 5, 3, 4)
    flat = win.reshape(win.shape[:4] + (k * k,))
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    return out, (arg, xp.shape)


def _pool_backward(dout, cache, k, s, p):
    arg, xp_shape = cache
    n, ho, wo, c = dout.shape
    dxp = np.zeros(xp_shape)
    for i in range(k):
        for j in range(k):
            dxp[:, i:i + s * ho:s, j:j + s * wo:s, :] += np.where(arg == i * k + j, dout, 0.0)
    return dxp[:, p:xp_shape[1] - p, p:xp_shape[2] - p, :] if p else dxp


def _scaled_commands(net, v):
    return np.atleast_2d(np.asarray(v, dtype=np.float64)) * net.command_scale


def _run(net, x, v, train, caches=None, stats=None, start=0, stop=None):
    """Forward pass over layers [start, stop); returns logits when run to the end."""
    p = net.params
    for layer in net.layers[start:stop]:
        kind, name, o = layer.kind, layer.name, layer.opts
        if kind == "conv":
            k, s, pad = int(o["kernel"]), int(o["stride"]), int(o["pad"])
            cols, out3, xp_shape = _im2col(x, k, s, pad)
            y = cols @ p[f"{name}.w"]
            if o["bias"]:
                y = y + p[f"{name}.b"]
            if caches is not None:
                caches.append((cols, out3, xp_shape))
            x = y.reshape(out3 + (-1,))
        elif kind == "bn":
            gamma, beta = p[f"{name}.gamma"], p[f"{name}.beta"]
            if train:
                mu = x.mean(axis=(0, 1, 2))
                var = x.var(axis=(0, 1, 2))
                if stats is not None:
                    stats[name] = (mu, var)
            else:
                mu, var = p[f"{name}.mean"], p[f"{name}.var"]
            inv = 1.0 / np.sqrt(var + BN_EPS)
            xhat = (x - mu) * inv
            if caches is not None:
                caches.append((xhat, inv))
            x = gamma * xhat + beta
        elif kind == "relu":
            if caches is not None:
                caches.append(x > 0)
            x = np.maximum(x, 0.0)
        elif kind == "maxpool":
            x, c = _pool_forward(x, int(o["kernel"]), int(o["stride"]), int(o["pad"]))
            if caches is not None:
                caches.append(c)
        elif kind == "inject":
            vs = _scaled_commands(net, v)
            e = vs @ p[f"{name}.w"] + p[f"{name}.b"]
            if caches is not None:
                caches.append((vs, x.shape))
            if o.get("mode", "add") == "add":
                x = x + e[:, None, None, :]
            else:
                n = max(x.shape[0], e.shape[0])
                tiled = np.broadcast_to(e[:, None, None, :], (n,) + x.shape[1:3] + (e.shape[1],))
                x = np.concatenate([np.broadcast_to(x, (n,) + x.shape[1:]), tiled], axis=-1)
        elif kind == "flatten":
            if caches is not None:
                caches.append(x.shape)
            x = x.reshape(x.shape[0], -1)
        elif kind == "fc":
            if caches is not None:
                caches.append(x)
            x = x @ p[f"{name}.w"] + p[f"{name}.b"]
        elif kind == "sigmoid":
            if caches is not None:
                caches.append(None)
            x = x[:, 0]
    return x


def _backward(net, caches, dlogits):
    p = net.params
    grads = {k: np.zeros_like(v) for k, v in p.items()}
    d = dlogits[:, None]
    for layer, cache in zip(reversed(net.layers), reversed(caches)):
        kind, name, o = layer.kind, layer.name, layer.opts
        if kind == "sigmoid":
            continue
        if kind == "fc":
            grads[f"{name}.w"] = cache.T @ d
            grads[f"{name}.b"] = d.sum(axis=0)
            d = d @ p[f"{name}.w"].T
        elif kind == "flatten":
            d = d.reshape(cache)
        elif kind == "relu":
            d = d * cache
        elif kind == "maxpool":
            d = _pool_backward(d, cache, int(o["kernel"]), int(o["stride"]), int(o["pad"]))
        elif kind == "inject":
            vs, x_shape = cache
            if o.get("mode", "add") == "add":
                de = d.sum(axis=(1, 2))
                dx = d
            else:
                c = x_shape[-1]
                de = d[..., c:].sum(axis=(1, 2))
                dx = d[..., :c]
            grads[f"{name}.w"] = vs.T @ de
            grads[f"{name}.b"] = de.sum(axis=0)
            d = dx
        elif kind == "bn":
            xhat, inv = cache
            gamma = p[f"{name}.gamma"]
            grads[f"{name}.gamma"] = (d * xhat).sum(axis=(0, 1, 2))
            grads[f"{name}.beta"] = d.sum(axis=(0, 1, 2))
            m = d.shape[0] * d.shape[1] * d.shape[2]
            dxhat = d * gamma
            d = (inv / m) * (m * dxhat - dxhat.sum(axis=(0, 1, 2)) - xhat * (dxhat * xhat).sum(axis=(0, 1, 2)))
        elif kind == "conv":
            cols, out3, xp_shape = cache
            k, s, pad = int(o["kernel"]), int(o["stride"]), int(o["pad"])
            d2 = d.reshape(-1, d.shape[-1])
            grads[f"{name}.w"] = cols.T @ d2
            if o["bias"]:
                grads[f"{name}.b"] = d2.sum(axis=0)
            if layer is net.layers[0]:
                break
            d = _conv_input_grad(d, p[f"{name}.w"], xp_shape, k, s, pad)
    return grads


def _stack(net, i0, it):
    i0, it = np.asarray(i0, dtype=np.float64), np.asarray(it, dtype=np.float64)
    if i0.ndim == 3:
        i0, it = i0[None], it[None]
    x = np.concatenate([i0, it], axis=-1)
    if x.shape[1:] != (net.input_size, net.input_size, net.input_channels):
        raise ValueError(f"input images {x.shape[1:]} do not match network input "
                         f"{(net.input_size, net.input_size, net.input_channels)}")
    return x


def sigmoid(z):
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


def forward(net, i0, it, v, mode="eval"):
    """Success probabilities for image pairs and commands.

    Images are (H, W, C) or (N, H, W, C) at the network input size; `v` is a
    command array (5,) or (N, 5). A single image pair broadcasts over N
    commands in eval mode. In train mode returns (probabilities, cache).
    """
    if hasattr(v, "as_array"):
        v = v.as_array()
    v = np.atleast_2d(np.asarray(v, dtype=np.float64))
    if v.shape[1] != 5:
        raise ValueError(f"commands must have 5 values, got shape {v.shape}")
    x = _stack(net, i0, it)
    if mode == "train":
        caches, stats = [], {}
        z = _run(net, x, v, True, caches, stats)
        return sigmoid(z), {"caches": caches, "stats": stats, "logits": z}
    if mode != "eval":
        raise ValueError(f"unknown mode {mode!r}")
    return sigmoid(_run(net, x, v, False))


@dataclass
class TrainBatch:
    images_pregrasp: np.ndarray
    images_current: np.ndarray
    commands: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        n = len(self.labels)
        if n == 0 or not (len(self.images_pregrasp) == len(self.images_current) == len(self.commands) == n):
            raise ValueError("batch fields must have equal, non-zero length")


def _loss_and_grad(net, batch):
    y = np.asarray(batch.labels, dtype=np.float64)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    x = _stack(net, batch.images_pregrasp, batch.images_current)
    caches, stats = [], {}
    z = _run(net, x, batch.commands, True, caches, stats)
    # mean binary cross-entropy, written on the logits for stability
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
    grads = _backward(net, caches, (sigmoid(z) - y) / len(y))
    return loss, grads, stats


def loss_and_grad(net, batch):
    """Mean binary cross-entropy and its gradient (same keys and shapes as the params)."""
    loss, grads, _ = _loss_and_grad(net, batch)
    return loss, grads


def crop(img, size, offset):
    r, c = offset
    return img[..., r:r + size, c:c + size, :]


def random_crop(img, crop_hw, seed=None, mode="train"):
    """Uniform random crop in train mode, center crop in eval mode."""
    h, w = img.shape[-3], img.shape[-2]
    ch, cw = (crop_hw, crop_hw) if np.isscalar(crop_hw) else crop_hw
    if ch > h or cw > w:
        raise ValueError(f"crop {ch}x{cw} larger than image {h}x{w}")
    if mode == "eval":
        r, c = (h - ch) // 2, (w - cw) // 2
    else:
        rng = np.random.default_rng(seed)
        r, c = int(rng.integers(0, h - ch + 1)), int(rng.integers(0, w - cw + 1))
    return img[..., r:r + ch, c:c + cw, :]


def dihedral(img, k, flip):
    """Rotate an (..., H, W, C) image by k quarter turns counterclockwise, then mirror left-right if `flip`."""
    out = np.rot90(img, k, axes=(-3, -2))
    return out[..., ::-1, :] if flip else out


def dihedral_command(v, k, flip):
    """The motor vector (dx, dy, dz, sin, cos) seen through the same `dihedral` transform.

    Image columns run along +x and rows along -y, so a counterclockwise quarter
    turn of the picture maps (dx, dy) to (-dy, dx) and leaves the yaw change
    alone; the mirror negates dx and the yaw change.
    """
    v = np.array(v, dtype=np.float64)
    for _ in range(k % 4):
        v[..., 0], v[..., 1] = -v[..., 1], v[..., 0].copy()
    if flip:
        v[..., 0] = -v[..., 0]
        v[..., 3] = -v[..., 3]
    return v


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    lr: float = 1e-3
    momentum: float = 0.9
    seed: int = 0
    # the epoch count is raised until at least this many minibatch steps are taken
    min_steps: int = 0
    # random quarter turns and mirrors of (I0, It) with the command transformed to match
    dihedral: bool = False

    def epochs_for(self, n):
        per_epoch = -(-n // self.batch_size)
        return max(self.epochs, -(-self.min_steps // per_epoch))


@dataclass
class ArraySamples:
    """In-memory training samples: per-sample pregrasp and current images (uint8 or float)."""

    pregrasp: np.ndarray
    current: np.ndarray
    commands: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.labels)

    def batch(self, idx):
        return self.pregrasp[idx], self.current[idx], self.commands[idx], self.labels[idx]


def _as_float(img):
    return img.astype(np.float64) / 255.0 if img.dtype == np.uint8 else np.asarray(img, dtype=np.float64)


def train(net, dataset, config=TrainConfig()):
    """Minibatch SGD with momentum and random-crop augmentation.

    Crops share one offset per (I0, It) pair, and so do the optional dihedral
    transforms. Returns new parameters and leaves `net` untouched.
    """
    n = len(dataset)
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    net = net.copy()
    rng = np.random.default_rng(config.seed)
    size = net.input_size
    velocity = {k: np.zeros_like(v) for k, v in net.params.items() if not is_running_stat(k)}
    history = []
    epochs = config.epochs_for(n)
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = np.sort(order[start:start + config.batch_size])
            i0, it, v, y = dataset.batch(idx)
            h, w = i0.shape[1], i0.shape[2]
            offs = np.stack([rng.integers(0, h - size + 1, len(idx)), rng.integers(0, w - size + 1, len(idx))], axis=1)
            i0c = np.stack([crop(a, size, o) for a, o in zip(i0, offs)])
            itc = np.stack([crop(a, size, o) for a, o in zip(it, offs)])
            if config.dihedral:
                ks, flips = rng.integers(0, 4, len(idx)), rng.integers(0, 2, len(idx))
                i0c = np.stack([dihedral(a, k, f) for a, k, f in zip(i0c, ks, flips)])
                itc = np.stack([dihedral(a, k, f) for a, k, f in zip(itc, ks, flips)])
                v = np.stack([dihedral_command(c, k, f) for c, k, f in zip(v, ks, flips)])
            batch = TrainBatch(_as_float(i0c), _as_float(itc), np.asarray(v, dtype=np.float64), y)
            loss, grads, stats = _loss_and_grad(net, batch)
            total += loss * len(idx)
            for k, vel in velocity.items():
                vel *= config.momentum
                vel -= config.lr * grads[k]
                net.params[k] += vel
            for name, (mu, var) in stats.items():
                net.params[f"{name}.mean"] = BN_MOMENTUM * net.params[f"{name}.mean"] + (1 - BN_MOMENTUM) * mu
                net.params[f"{name}.var"] = BN_MOMENTUM * net.params[f"{name}.var"] + (1 - BN_MOMENTUM) * var
        history.append(total / n)
        log.info("epoch %d/%d loss %.5f", epoch + 1, epochs, history[-1])
    net.history = history
    return net


class Predictor:
    """g(I0, It, commands) for the servo: center-crops and shares the image trunk."""

    def __init__(self, net):
        self.net = net

    def __call__(self, i0, it, commands):
        size = self.net.input_size
        i0 = random_crop(np.asarray(i0, dtype=np.float64), size, mode="eval")
        it = random_crop(np.asarray(it, dtype=np.float64), size, mode="eval")
        return forward(self.net, i0, it, np.atleast_2d(commands), mode="eval")


# --- serialization -----------------------------------------------------------------------------

def save(net, path):
    desc = net.descriptor.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(desc)))
        fh.write(desc)
        fh.write(struct.pack("<I", len(net.params)))
        for name, arr in net.params.items():
            key = name.encode("utf-8")
            fh.write(struct.pack("<I", len(key)) + key)
            fh.write(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load(path):
    with open(path, "rb") as fh:
        data = fh.read()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise TruncatedModelError(f"{path}: file ends after {len(data)} bytes, needed {pos + n}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    if take(4) != MAGIC:
        raise ModelFormatError(f"{path}: bad magic header")
    version, dlen = struct.unpack("<II", take(8))
    if version != FORMAT_VERSION:
        raise ModelVersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    descriptor = take(dlen).decode("utf-8")
    (count,) = struct.unpack("<I", take(4))
    params = {}
    for _ in range(count):
        (klen,) = struct.unpack("<I", take(4))
        name = take(klen).decode("utf-8")
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        size = int(np.prod(shape)) if ndim else 1
        params[name] = np.frombuffer(take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    if pos != len(data):
        raise ModelFormatError(f"{path}: {len(data) - pos} trailing bytes")
    _, _, _, layers = parse_descriptor(descriptor)
    expected = _param_shapes(layers)
    if [(k, tuple(v.shape)) for k, v in params.items()] != [(k, tuple(s)) for k, s in expected]:
        raise ModelFormatError(f"{path}: parameter blocks do not match the architecture descriptor")
    return NetParams(descriptor, params)
