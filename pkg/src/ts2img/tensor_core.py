"""Dense NHWC tensor operations with hand-written backward passes and Adam.

Everything here works on plain numpy arrays. Activations are laid out as
``[N, H, W, C]`` and convolution kernels as ``[K, K, Cin, Cout]``. Layers
cache what they need during ``forward`` and consume it in ``backward``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np


class ShapeError(ValueError):
    pass


class BackwardBeforeForward(RuntimeError):
    pass


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based Philox generator keyed by ``seed`` and a stream path.

    The same ``(seed, *stream)`` always yields the same sequence on every
    platform, so independent consumers (init, shuffling, dropout) never
    share state.
    """
    ss = np.random.SeedSequence([int(seed), *[int(s) for s in stream]])
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class Tensor:
    data: np.ndarray
    grad: Optional[np.ndarray] = None
    name: str = ""

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.grad is not None and self.grad.shape != self.data.shape:
            raise ShapeError(f"grad shape {self.grad.shape} != data shape {self.data.shape}")

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)


def check_finite(x: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite values in {what}")
    return x


# ---------------------------------------------------------------------------
# convolution


def _pad_same(x, k):
    p = k // 2
    return np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))


def _im2col(xp, k, out_h, out_w):
    # column order is (di, dj, c), matching weights.reshape(k*k*cin, cout)
    cols = [xp[:, di:di + out_h, dj:dj + out_w, :] for di in range(k) for dj in range(k)]
    return np.concatenate(cols, axis=-1)


def conv2d_forward(x, weights, bias, padding="same"):
    """Cross-correlation of ``x[N,H,W,Cin]`` with ``weights[K,K,Cin,Cout]`` plus bias.

    Returns ``(out, cache)``.
    """
    if x.ndim != 4 or weights.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and weights, got {x.shape} and {weights.shape}")
    k, k2, cin, cout = weights.shape
    if k != k2:
        raise ShapeError(f"non-square kernel {weights.shape[:2]}")
    if x.shape[3] != cin:
        raise ShapeError(f"input has {x.shape[3]} channels, kernel expects {cin}")
    if bias.shape != (cout,):
        raise ShapeError(f"bias shape {bias.shape} != ({cout},)")
    n, h, w, _ = x.shape
    if padding == "same":
        if k % 2 == 0:
            raise ShapeError("'same' padding needs an odd kernel size")
        xp = _pad_same(x, k)
        out_h, out_w = h, w
    elif padding == "valid":
        xp = x
        out_h, out_w = h - k + 1, w - k + 1
        if out_h < 1 or out_w < 1:
            raise ShapeError(f"kernel {k} larger than input {h}x{w}")
    else:
        raise ValueError(f"unknown padding mode {padding!r}")
    if cin == 1:
        cols = _im2col(xp, k, out_h, out_w)
        out = cols.reshape(-1, k * k) @ weights.reshape(k * k, cout)
        out = out.reshape(n, out_h, out_w, cout)
    else:
        out = _conv_rows(xp, weights)[:, :out_h, :out_w, :]
    out = out + bias
    # columns are rebuilt in backward; caching them costs k*k times the input memory
    return out, (xp, x.shape, weights, padding)


def _row_taps(xp, k):
    # view the padded batch as one long pixel row; output pixel r then reads
    # taps r + di*Wp + dj, so the k horizontal taps are concatenated once and
    # the k vertical taps become contiguous row offsets into that matrix
    flat = xp.reshape(-1, xp.shape[3])
    r = flat.shape[0] - (k - 1)
    return np.concatenate([flat[dj:dj + r] for dj in range(k)], axis=1)


def _conv_rows(xp, weights):
    """Convolution on the padded grid; rows past the valid region hold junk."""
    k, _, cin, cout = weights.shape
    n, hp, wp, _ = xp.shape
    taps = _row_taps(xp, k)
    length = taps.shape[0] - (k - 1) * wp
    out = np.zeros((n * hp * wp, cout), dtype=np.result_type(xp, weights))
    acc = out[:length]
    tmp = np.empty_like(acc)
    for di in range(k):
        np.matmul(taps[di * wp:di * wp + length], weights[di].reshape(k * cin, cout), out=tmp)
        acc += tmp
    return out.reshape(n, hp, wp, cout)


def conv2d_backward(dout, cache, need_input_grad=True):
    """Returns ``(dx, dweights, dbias)``; ``dx`` is None when not requested."""
    xp, in_shape, weights, padding = cache
    k, _, cin, cout = weights.shape
    n, h, w, _ = in_shape
    out_h, out_w = dout.shape[1:3]
    dbias = dout.reshape(-1, cout).sum(axis=0)
    if cin == 1:
        cols = _im2col(xp, k, out_h, out_w)
        d2 = dout.reshape(-1, cout)
        dweights = (cols.reshape(-1, k * k).T @ d2).reshape(weights.shape)
        if not need_input_grad:
            return None, dweights, dbias
        dcols = (d2 @ weights.reshape(k * k, cout).T).reshape(n, out_h, out_w, k * k)
        dxp = np.zeros(xp.shape[:3], dtype=dout.dtype)
        for idx in range(k * k):
            di, dj = divmod(idx, k)
            dxp[:, di:di + out_h, dj:dj + out_w] += dcols[..., idx]
        dxp = dxp[..., None]
    else:
        hp, wp = xp.shape[1:3]
        # dout embedded in the padded grid, zeros on the junk rows
        grid = np.zeros((n, hp, wp, cout), dtype=dout.dtype)
        grid[:, :out_h, :out_w] = dout
        grid = grid.reshape(-1, cout)
        taps = _row_taps(xp, k)
        length = taps.shape[0] - (k - 1) * wp
        g = grid[:length]
        dweights = np.stack([
            (taps[di * wp:di * wp + length].T @ g).reshape(k, cin, cout) for di in range(k)
        ])
        if not need_input_grad:
            return None, dweights, dbias
        dtaps = np.zeros_like(taps)
        for di in range(k):
            dtaps[di * wp:di * wp + length] += g @ weights[di].reshape(k * cin, cout).T
        dflat = np.zeros((n * hp * wp, cin), dtype=dout.dtype)
        r = dtaps.shape[0]
        for dj in range(k):
            dflat[dj:dj + r] += dtaps[:, dj * cin:(dj + 1) * cin]
        dxp = dflat.reshape(n, hp, wp, cin)
    if padding == "same":
        p = k // 2
        dxp = dxp[:, p:p + h, p:p + w, :]
    return dxp, dweights, dbias


# ---------------------------------------------------------------------------
# pooling, activations, dense


_WINDOW = ((0, 0), (0, 1), (1, 0), (1, 1))


@numba.njit(cache=True, nogil=True)
def _pool_fwd(x, out, argmax):
    n, h2, w2, c = out.shape
    for b in range(n):
        for i in range(h2):
            for j in range(w2):
                for ch in range(c):
                    best = x[b, 2 * i, 2 * j, ch]
                    k = 0
                    v = x[b, 2 * i, 2 * j + 1, ch]
                    if v > best:
                        best, k = v, 1
                    v = x[b, 2 * i + 1, 2 * j, ch]
                    if v > best:
                        best, k = v, 2
                    v = x[b, 2 * i + 1, 2 * j + 1, ch]
                    if v > best:
                        best, k = v, 3
                    out[b, i, j, ch] = best
                    argmax[b, i, j, ch] = k


@numba.njit(cache=True, nogil=True)
def _pool_bwd(dout, argmax, dx):
    n, h2, w2, c = dout.shape
    for b in range(n):
        for i in range(h2):
            for j in range(w2):
                for ch in range(c):
                    k = argmax[b, i, j, ch]
                    dx[b, 2 * i + k // 2, 2 * j + k % 2, ch] = dout[b, i, j, ch]


def maxpool2x2_forward(x):
    """2x2 max pooling, stride 2; an odd trailing row/column is dropped.

    Returns ``(out, argmax)`` where ``argmax`` (uint8) indexes the row-major
    2x2 window position of each maximum; ties resolve to the first position.
    """
    n, h, w, c = x.shape
    if h < 2 or w < 2:
        raise ShapeError(f"maxpool needs spatial size >= 2, got {h}x{w}")
    out = np.empty((n, h // 2, w // 2, c), dtype=x.dtype)
    argmax = np.empty(out.shape, dtype=np.uint8)
    _pool_fwd(np.ascontiguousarray(x), out, argmax)
    return out, argmax


def maxpool2x2_backward(dout, argmax, in_shape):
    dx = np.zeros(in_shape, dtype=dout.dtype)
    _pool_bwd(np.ascontiguousarray(dout), argmax, dx)
    return dx


def relu(x):
    return np.maximum(x, 0)


def relu_backward(dout, x):
    # subgradient at 0 is 0
    return dout * (x > 0)


def dense_forward(x, weights, bias):
    if x.ndim != 2 or weights.ndim != 2 or x.shape[1] != weights.shape[0]:
        raise ShapeError(f"dense: input {x.shape} incompatible with weights {weights.shape}")
    if bias.shape != (weights.shape[1],):
        raise ShapeError(f"dense: bias {bias.shape} != ({weights.shape[1]},)")
    return x @ weights + bias


def dense_backward(dout, x, weights):
    return dout @ weights.T, x.T @ dout, dout.sum(axis=0)


def dropout_apply(x, rate, rng, training):
    """Inverted dropout. Returns ``(out, mask)``; mask already carries the 1/(1-rate) scale."""
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0:
        return x, np.ones_like(x)
    keep = rng.random(x.shape) >= rate
    mask = keep.astype(x.dtype) / x.dtype.type(1 - rate)
    return x * mask, mask


def softmax_cross_entropy(logits, labels):
    """Mean negative log-likelihood and its gradient w.r.t. ``logits``."""
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} != ({n},)")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1
    grad /= n
    return float(loss), grad


# ---------------------------------------------------------------------------
# layers


@dataclass
class LayerSpec:
    kind: str
    filters: int = 0
    kernel: int = 3
    padding: str = "same"
    units: int = 0
    rate: float = 0.0

    KINDS = ("conv2d", "maxpool", "relu", "flatten", "dense", "dropout")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == "conv2d" and (self.filters <= 0 or self.kernel <= 0):
            raise ValueError("conv2d needs positive filters and kernel")
        if self.kind == "dense" and self.units <= 0:
            raise ValueError("dense needs positive units")
        if self.kind == "dropout" and not 0 <= self.rate < 1:
            raise ValueError("dropout rate must be in [0, 1)")


class Layer:
    params: dict

    def __init__(self):
        self.params = {}
        self.grads = {}
        self._cache = None

    def output_shape(self, in_shape):
        return in_shape

    def forward(self, x, training=False, rng=None):
        raise NotImplementedError

    def backward(self, dout, need_input_grad=True):
        raise NotImplementedError

    def _take_cache(self):
        if self._cache is None:
            raise BackwardBeforeForward(f"{type(self).__name__}.backward called without a forward pass")
        cache, self._cache = self._cache, None
        return cache


class Conv2D(Layer):
    # samples per im2col block; bounds peak memory on 288x432 inputs
    chunk = 8

    def __init__(self, in_channels, filters, kernel=3, padding="same", dtype=np.float32, rng=None, name="conv"):
        super().__init__()
        self.kernel, self.padding = kernel, padding
        fan_in = kernel * kernel * in_channels
        w = rng.standard_normal((kernel, kernel, in_channels, filters)) * np.sqrt(2.0 / fan_in)
        self.params = {
            f"{name}.w": Tensor(w.astype(dtype), name=f"{name}.w"),
            f"{name}.b": Tensor(np.zeros(filters, dtype=dtype), name=f"{name}.b"),
        }
        self.w, self.b = self.params.values()

    def output_shape(self, in_shape):
        h, w, c = in_shape
        if c != self.w.shape[2]:
            raise ShapeError(f"conv expects {self.w.shape[2]} channels, got {c}")
        if self.padding == "same":
            return (h, w, self.w.shape[3])
        return (h - self.kernel + 1, w - self.kernel + 1, self.w.shape[3])

    def forward(self, x, training=False, rng=None):
        outs, caches = [], []
        for s in range(0, x.shape[0], self.chunk):
            o, c = conv2d_forward(x[s:s + self.chunk], self.w.data, self.b.data, self.padding)
            outs.append(o)
            caches.append(c)
        self._cache = caches
        return np.concatenate(outs) if len(outs) > 1 else outs[0]

    def backward(self, dout, need_input_grad=True):
        caches = self._take_cache()
        dw = np.zeros_like(self.w.data)
        db = np.zeros_like(self.b.data)
        dxs = []
        for i, cache in enumerate(caches):
            s = i * self.chunk
            dx, dwi, dbi = conv2d_backward(dout[s:s + self.chunk], cache, need_input_grad)
            dw += dwi
            db += dbi
            dxs.append(dx)
        self.grads = {self.w.name: dw, self.b.name: db}
        if not need_input_grad:
            return None
        return np.concatenate(dxs) if len(dxs) > 1 else dxs[0]


class MaxPool2x2(Layer):
    def output_shape(self, in_shape):
        h, w, c = in_shape
        if h < 2 or w < 2:
            raise ShapeError(f"maxpool needs spatial size >= 2, got {h}x{w}")
        return (h // 2, w // 2, c)

    def forward(self, x, training=False, rng=None):
        out, argmax = maxpool2x2_forward(x)
        self._cache = (argmax, x.shape)
        return out

    def backward(self, dout, need_input_grad=True):
        argmax, shape = self._take_cache()
        return maxpool2x2_backward(dout, argmax, shape)


class ReLU(Layer):
    def forward(self, x, training=False, rng=None):
        self._cache = x > 0
        return relu(x)

    def backward(self, dout, need_input_grad=True):
        return dout * self._take_cache()


class Flatten(Layer):
    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, training=False, rng=None):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout, need_input_grad=True):
        return dout.reshape(self._take_cache())


class Dense(Layer):
    def __init__(self, in_units, units, dtype=np.float32, rng=None, name="dense"):
        super().__init__()
        w = rng.standard_normal((in_units, units)) * np.sqrt(2.0 / in_units)
        self.params = {
            f"{name}.w": Tensor(w.astype(dtype), name=f"{name}.w"),
            f"{name}.b": Tensor(np.zeros(units, dtype=dtype), name=f"{name}.b"),
        }
        self.w, self.b = self.params.values()

    def output_shape(self, in_shape):
        (d,) = in_shape
        if d != self.w.shape[0]:
            raise ShapeError(f"dense expects {self.w.shape[0]} inputs, got {d}")
        return (self.w.shape[1],)

    def forward(self, x, training=False, rng=None):
        self._cache = x
        return dense_forward(x, self.w.data, self.b.data)

    def backward(self, dout, need_input_grad=True):
        x = self._take_cache()
        dx, dw, db = dense_backward(dout, x, self.w.data)
        self.grads = {self.w.name: dw, self.b.name: db}
        return dx


class Dropout(Layer):
    def __init__(self, rate):
        super().__init__()
        if not 0 <= rate < 1:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    def forward(self, x, training=False, rng=None):
        if training and self.rate > 0 and rng is None:
            raise ValueError("dropout in training mode needs an rng")
        out, mask = dropout_apply(x, self.rate, rng, training)
        self._cache = mask
        return out

    def backward(self, dout, need_input_grad=True):
        return dout * self._take_cache()


def build_layer(spec: LayerSpec, in_shape, dtype, rng, name):
    """Instantiate ``spec`` for an input of shape ``in_shape`` (without batch)."""
    if spec.kind == "conv2d":
        return Conv2D(in_shape[-1], spec.filters, spec.kernel, spec.padding, dtype, rng, name)
    if spec.kind == "dense":
        return Dense(in_shape[0], spec.units, dtype, rng, name)
    if spec.kind == "maxpool":
        return MaxPool2x2()
    if spec.kind == "relu":
        return ReLU()
    if spec.kind == "flatten":
        return Flatten()
    return Dropout(spec.rate)


class Sequential:
    """Layer chain with reverse-mode gradient accumulation."""

    def __init__(self, layers):
        self.layers = list(layers)

    @property
    def params(self):
        out = {}
        for layer in self.layers:
            out.update(layer.params)
        return out

    def grads(self):
        """Gradients from the last backward pass, summed per parameter name."""
        out = {}
        for layer in self.layers:
            for key, g in layer.grads.items():
                out[key] = out[key] + g if key in out else g
        return out

    def output_shape(self, in_shape):
        for layer in self.layers:
            in_shape = layer.output_shape(in_shape)
        return in_shape

    def forward(self, x, training=False, rng=None, upto=None):
        layers = self.layers if upto is None else self.layers[:upto]
        for layer in layers:
            x = layer.forward(x, training, rng)
        return x

    def backward(self, dout, need_input_grad=True):
        n = len(self.layers)
        for i, layer in enumerate(reversed(self.layers)):
            last = i == n - 1
            dout = layer.backward(dout, need_input_grad or not last)
        return dout


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


def adam_step(params: dict, grads: dict, state: AdamState) -> None:
    """Bias-corrected Adam update, applied to ``params`` in place."""
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for key, p in params.items():
        g = grads[key]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {key} has shape {g.shape}, parameter {p.shape}")
        if key not in state.m:
            state.m[key] = np.zeros_like(p)
            state.v[key] = np.zeros_like(p)
        m, v = state.m[key], state.v[key]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        p -= (state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)).astype(p.dtype)
