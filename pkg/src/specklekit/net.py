"""Small encoder-decoder convolutional network with hand-written backprop.

The architecture is a reduced U-Net: per encoder level two 3x3
convolutions with leaky-ReLU (slope 0.1) followed by 2x2 max pooling; a
two-convolution bottleneck; per decoder level nearest-neighbour 2x
upsampling, concatenation with the matching encoder skip, and two more
convolutions.  The final convolution is 1x1 to a single channel with
linear activation.  Channel width doubles per level starting from
``base_channels``.

Everything here operates on plain numpy arrays shaped (channels, height,
width); forward, backward and the Adam update are exact and deterministic
for a fixed thread count.  Convolutions are computed as one matmul per
kernel tap, which keeps memory at O(C*H*W) even for large inference
images.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, ShapeError, TrainingDivergedError
from .grid import ImageGrid, mirror_indices

CHECKPOINT_MAGIC = b"S2SN"


@dataclass
class NetworkSpec:
    depth: int = 3            # number of pooling levels
    base_channels: int = 32   # channels at the first level, doubling per level
    kernel_size: int = 3
    lrelu_slope: float = 0.1

    def __post_init__(self):
        if self.depth < 1 or self.base_channels < 1:
            raise ShapeError("depth and base_channels must be >= 1")
        if self.kernel_size % 2 == 0:
            raise ShapeError("kernel_size must be odd")


@dataclass
class LayerDef:
    name: str
    in_channels: int
    out_channels: int
    kernel_size: int
    linear: bool  # final layer has no activation


def layer_plan(spec: NetworkSpec):
    """Ordered convolution layers of the network, encoder to final."""
    ch = lambda lvl: spec.base_channels * (2 ** lvl)
    k = spec.kernel_size
    plan = []
    prev = 1
    for lvl in range(spec.depth):
        plan.append(LayerDef(f"enc{lvl}a", prev, ch(lvl), k, False))
        plan.append(LayerDef(f"enc{lvl}b", ch(lvl), ch(lvl), k, False))
        prev = ch(lvl)
    plan.append(LayerDef("bot_a", prev, ch(spec.depth), k, False))
    plan.append(LayerDef("bot_b", ch(spec.depth), ch(spec.depth), k, False))
    prev = ch(spec.depth)
    for lvl in reversed(range(spec.depth)):
        plan.append(LayerDef(f"dec{lvl}a", prev + ch(lvl), ch(lvl), k, False))
        plan.append(LayerDef(f"dec{lvl}b", ch(lvl), ch(lvl), k, False))
        prev = ch(lvl)
    plan.append(LayerDef("final", prev, 1, 1, True))
    return plan


@dataclass
class NetworkParams:
    """Kernels and biases plus Adam moment state, ordered as in layer_plan."""

    weights: list
    biases: list
    m_weights: list = field(default=None)
    m_biases: list = field(default=None)
    v_weights: list = field(default=None)
    v_biases: list = field(default=None)
    step_count: int = 0

    def __post_init__(self):
        if self.m_weights is None:
            self.m_weights = [np.zeros_like(w) for w in self.weights]
            self.m_biases = [np.zeros_like(b) for b in self.biases]
            self.v_weights = [np.zeros_like(w) for w in self.weights]
            self.v_biases = [np.zeros_like(b) for b in self.biases]

    @property
    def dtype(self):
        return self.weights[0].dtype

    def parameter_count(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)


def init_params(spec: NetworkSpec, seed: int, dtype=np.float32) -> NetworkParams:
    """Glorot-uniform kernels (fan counts include the kernel area), zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for layer in layer_plan(spec):
        k = layer.kernel_size
        fan_in = layer.in_channels * k * k
        fan_out = layer.out_channels * k * k
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-bound, bound,
                        (layer.out_channels, layer.in_channels, k, k))
        weights.append(w.astype(dtype))
        biases.append(np.zeros(layer.out_channels, dtype=dtype))
    return NetworkParams(weights=weights, biases=biases)


# ---------------------------------------------------------------------------
# primitive operations


def conv2d_forward(x: np.ndarray, k: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Same-padded (zeros) stride-1 convolution: (C,H,W) -> (O,H,W)."""
    if x.ndim != 3 or k.ndim != 4:
        raise ShapeError("conv2d expects x:(C,H,W) and k:(O,C,kh,kw)")
    c, h, w = x.shape
    o, c2, kh, kw = k.shape
    if c2 != c:
        raise ShapeError(f"channel mismatch: x has {c}, kernel expects {c2}")
    if b.shape != (o,):
        raise ShapeError("bias shape must be (out_channels,)")
    p = kh // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p))) if p else x
    y2d = np.zeros((o, h * w), dtype=x.dtype)
    tmp = np.empty_like(y2d)
    for u in range(kh):
        for v in range(kw):
            block = xp[:, u:u + h, v:v + w].reshape(c, h * w)
            np.matmul(k[:, :, u, v], block, out=tmp)
            y2d += tmp
    return y2d.reshape(o, h, w) + b[:, None, None]


def conv2d_backward(x: np.ndarray, k: np.ndarray, grad_y: np.ndarray):
    """Exact gradients of conv2d_forward: returns (grad_x, grad_k, grad_b)."""
    c, h, w = x.shape
    o, _, kh, kw = k.shape
    if grad_y.shape != (o, h, w):
        raise ShapeError("grad_y shape inconsistent with forward output")
    grad_b = grad_y.sum(axis=(1, 2))
    p = kh // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p))) if p else x
    g2d = grad_y.reshape(o, h * w)
    grad_k = np.empty_like(k)
    for u in range(kh):
        for v in range(kw):
            block = xp[:, u:u + h, v:v + w].reshape(c, h * w)
            grad_k[:, :, u, v] = g2d @ block.T
    # input gradient: convolve grad_y with the spatially flipped, transposed kernel
    kt = np.ascontiguousarray(k[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    grad_x = conv2d_forward(grad_y, kt, np.zeros(c, dtype=x.dtype))
    return grad_x, grad_k, grad_b


def leaky_relu(z: np.ndarray, slope: float) -> np.ndarray:
    return np.where(z >= 0, z, slope * z)


def leaky_relu_backward(z: np.ndarray, grad: np.ndarray, slope: float) -> np.ndarray:
    return np.where(z >= 0, grad, slope * grad)


def maxpool2(x: np.ndarray):
    """2x2 non-overlapping max pool; ties go to the first element in
    row-major block order.  Returns (pooled, argmax_mask)."""
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError("maxpool2 requires even spatial dimensions")
    blocks = x.reshape(c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 2, 4) \
              .reshape(c, h // 2, w // 2, 4)
    mask = blocks.argmax(axis=-1)
    y = np.take_along_axis(blocks, mask[..., None], axis=-1)[..., 0]
    return y, mask


def maxpool2_backward(mask: np.ndarray, grad_y: np.ndarray) -> np.ndarray:
    if mask.shape != grad_y.shape:
        raise ShapeError("mask and gradient shapes differ")
    c, h2, w2 = grad_y.shape
    blocks = np.zeros((c, h2, w2, 4), dtype=grad_y.dtype)
    np.put_along_axis(blocks, mask[..., None], grad_y[..., None], axis=-1)
    return blocks.reshape(c, h2, w2, 2, 2).transpose(0, 1, 3, 2, 4) \
                 .reshape(c, 2 * h2, 2 * w2)


def upsample2_nearest(x: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)


def upsample2_backward(grad_y: np.ndarray) -> np.ndarray:
    c, h, w = grad_y.shape
    return grad_y.reshape(c, h // 2, 2, w // 2, 2).sum(axis=(2, 4))


def concat_channels(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape[1:] != b.shape[1:]:
        raise ShapeError("spatial dimensions differ for channel concat")
    return np.concatenate([a, b], axis=0)


# ---------------------------------------------------------------------------
# full network


def _as_chw(x) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3:
        raise ShapeError("network input must be (H,W) or (C,H,W)")
    return x


def forward(params: NetworkParams, spec: NetworkSpec, x, train: bool = False):
    """Full forward pass.  With ``train=True`` returns (output, tape) where
    the tape caches every intermediate needed by :func:`backward`."""
    x = _as_chw(x).astype(params.dtype, copy=False)
    h, w = x.shape[1:]
    div = 2 ** spec.depth
    if h % div or w % div:
        raise ShapeError(f"spatial dims must be divisible by {div}, got {h}x{w}")

    plan = layer_plan(spec)
    slope = spec.lrelu_slope
    conv_cache = []   # (input, pre_activation or None) per layer
    pool_masks = []
    skips = []
    li = 0

    def conv_block(t, linear=False):
        nonlocal li
        pre = conv2d_forward(t, params.weights[li], params.biases[li])
        out = pre if linear else leaky_relu(pre, slope)
        if train:
            conv_cache.append((t, None if linear else pre))
        li += 1
        return out

    t = x
    for _ in range(spec.depth):
        t = conv_block(conv_block(t))
        skips.append(t)
        t, mask = maxpool2(t)
        pool_masks.append(mask)
    t = conv_block(conv_block(t))
    for lvl in reversed(range(spec.depth)):
        t = concat_channels(upsample2_nearest(t), skips[lvl])
        t = conv_block(conv_block(t))
    y = conv_block(t, linear=True)
    assert li == len(plan)
    if train:
        return y, {"conv": conv_cache, "masks": pool_masks, "spec": spec}
    return y


def backward(params: NetworkParams, spec: NetworkSpec, tape: dict, grad_out):
    """Backpropagate d(loss)/d(output) through the tape.

    Returns (grad_weights, grad_biases, grad_input), aligned with the
    layer plan.
    """
    grad_out = _as_chw(grad_out).astype(params.dtype, copy=False)
    conv_cache = tape["conv"]
    pool_masks = tape["masks"]
    slope = spec.lrelu_slope
    n_layers = len(conv_cache)
    grad_w = [None] * n_layers
    grad_b = [None] * n_layers
    li = n_layers - 1

    def conv_back(g):
        nonlocal li
        x_in, pre = conv_cache[li]
        if pre is not None:
            g = leaky_relu_backward(pre, g, slope)
        gx, gk, gb = conv2d_backward(x_in, params.weights[li], g)
        grad_w[li], grad_b[li] = gk, gb
        li -= 1
        return gx

    g = conv_back(grad_out)  # final 1x1 linear conv
    skip_grads = [None] * spec.depth
    for lvl in range(spec.depth):  # decoder levels, most recent first
        g = conv_back(conv_back(g))
        n_up = g.shape[0] - _skip_channels(spec, lvl)
        skip_grads[lvl] = g[n_up:]
        g = upsample2_backward(g[:n_up])
    g = conv_back(conv_back(g))  # bottleneck
    for lvl in reversed(range(spec.depth)):  # encoder levels in reverse
        g = maxpool2_backward(pool_masks[lvl], g)
        g = g + skip_grads[lvl]
        g = conv_back(conv_back(g))
    assert li == -1
    return grad_w, grad_b, g


def _skip_channels(spec: NetworkSpec, lvl: int) -> int:
    return spec.base_channels * (2 ** lvl)


def adam_step(params: NetworkParams, grad_w, grad_b, lr: float,
              beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> NetworkParams:
    """Bias-corrected Adam update, in place; increments step_count."""
    for g in grad_w + grad_b:
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError("non-finite gradient in Adam update")
    params.step_count += 1
    t = params.step_count
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for ws, bs, mw, mb, vw, vb, gw, gb in zip(
            params.weights, params.biases, params.m_weights, params.m_biases,
            params.v_weights, params.v_biases, grad_w, grad_b):
        for p, m, v, g in ((ws, mw, vw, gw), (bs, mb, vb, gb)):
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * np.square(g)
            p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params


# ---------------------------------------------------------------------------
# inference on arbitrary image sizes


def infer_values(params: NetworkParams, spec: NetworkSpec,
                 values: np.ndarray) -> np.ndarray:
    """Run the network on a 2-D array, mirror-padding to the next multiple
    of 2**depth and cropping the result back."""
    values = np.asarray(values)
    h, w = values.shape
    div = 2 ** spec.depth
    ph = (-h) % div
    pw = (-w) % div
    rows = mirror_indices(h, ph)[ph:] if ph else np.arange(h)
    cols = mirror_indices(w, pw)[pw:] if pw else np.arange(w)
    x = values[np.ix_(rows, cols)]
    y = forward(params, spec, x.astype(params.dtype), train=False)
    return y[0, :h, :w].astype(np.float64)


def infer_image(params: NetworkParams, spec: NetworkSpec,
                img: ImageGrid) -> ImageGrid:
    return img.with_values(infer_values(params, spec, img.values))


# ---------------------------------------------------------------------------
# checkpoint I/O


def save_checkpoint(path, params: NetworkParams, spec: NetworkSpec) -> None:
    plan = layer_plan(spec)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IIQ", spec.depth, spec.base_channels,
                             params.step_count))
        fh.write(struct.pack("<I", len(plan)))
        for i, layer in enumerate(plan):
            fh.write(struct.pack("<III", layer.out_channels, layer.in_channels,
                                 layer.kernel_size))
            for arr in (params.weights[i], params.biases[i],
                        params.m_weights[i], params.m_biases[i],
                        params.v_weights[i], params.v_biases[i]):
                fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path):
    """Returns (params, spec); payloads are float32, byte-exact round trip."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise InputError(f"{path}: not a network checkpoint")
    depth, base, step = struct.unpack("<IIQ", blob[4:20])
    (n_layers,) = struct.unpack("<I", blob[20:24])
    spec = NetworkSpec(depth=depth, base_channels=base)
    plan = layer_plan(spec)
    if n_layers != len(plan):
        raise InputError(f"{path}: layer count {n_layers} does not match "
                         f"a depth-{depth} network")
    pos = 24
    weights, biases, mw, mb, vw, vb = [], [], [], [], [], []
    for layer in plan:
        o, c, k = struct.unpack("<III", blob[pos:pos + 12])
        pos += 12
        if (o, c, k) != (layer.out_channels, layer.in_channels,
                         layer.kernel_size):
            raise InputError(f"{path}: layer shape mismatch at {layer.name}")
        for store, shape in ((weights, (o, c, k, k)), (biases, (o,)),
                             (mw, (o, c, k, k)), (mb, (o,)),
                             (vw, (o, c, k, k)), (vb, (o,))):
            count = int(np.prod(shape))
            arr = np.frombuffer(blob, dtype="<f4", count=count, offset=pos)
            store.append(arr.reshape(shape).astype(np.float32))
            pos += 4 * count
    if pos != len(blob):
        raise InputError(f"{path}: trailing bytes in checkpoint")
    params = NetworkParams(weights=weights, biases=biases, m_weights=mw,
                           m_biases=mb, v_weights=vw, v_biases=vb,
                           step_count=step)
    return params, spec
