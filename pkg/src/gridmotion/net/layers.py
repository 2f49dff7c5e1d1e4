"""Layer forward/backward passes on (C, H, W) arrays, batch size fixed at 1.

Convolution is implemented as cross-correlation (the usual deep-learning
convention, no kernel flip); since all filters are learned the distinction
is immaterial. Upsampling layers run transposed convolution producing the
full uncropped output; center-cropping to a reference shape is its own node
so skip fusions and the final output can align with any input size.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _check_edge(m: int, n: int, p: int, s: int, what: str) -> None:
    from .arch import ArchError

    num = m - n + 2 * p
    if num < 0 or num % s != 0 or num // s + 1 <= 0:
        raise ArchError(f"{what}: edge {m} with filter {n}, pad {p}, "
                        f"stride {s} gives a non-integral output")


def im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    """(C, H, W) -> (C*kh*kw, out_h*out_w) patch matrix."""
    c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    out_h, out_w = win.shape[1], win.shape[2]
    cols = win.transpose(0, 3, 4, 1, 2).reshape(c * kh * kw, out_h * out_w)
    return np.ascontiguousarray(cols), out_h, out_w


def col2im(cols: np.ndarray, x_shape, kh: int, kw: int, stride: int, pad: int,
           out_h: int, out_w: int) -> np.ndarray:
    """Adjoint of im2col: scatter-add patches back to (C, H, W)."""
    c, h, w = x_shape
    hp, wp = h + 2 * pad, w + 2 * pad
    out = np.zeros((c, hp, wp), dtype=cols.dtype)
    cols6 = cols.reshape(c, kh, kw, out_h, out_w)
    for i in range(kh):
        for j in range(kw):
            out[:, i:i + stride * out_h:stride, j:j + stride * out_w:stride] \
                += cols6[:, i, j]
    if pad:
        out = out[:, pad:hp - pad, pad:wp - pad]
    return out


class Layer:
    """Base: forward caches what backward needs; params yields learnables."""

    def forward(self, *xs):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def params(self):
        return []


class Conv(Layer):
    def __init__(self, in_ch, out_ch, k, stride=1, pad=0, rng=None,
                 dtype=np.float32, zero_init=False):
        self.k, self.stride, self.pad = k, stride, pad
        fan_in = in_ch * k * k
        fan_out = out_ch * k * k
        if zero_init:
            self.W = np.zeros((out_ch, in_ch, k, k), dtype=dtype)
        else:
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            self.W = rng.uniform(-bound, bound, (out_ch, in_ch, k, k)).astype(dtype)
        self.b = np.zeros(out_ch, dtype=dtype)
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)
        self.trainable = True
        self._cache = None

    def forward(self, x):
        _check_edge(x.shape[1], self.k, self.pad, self.stride, "conv")
        _check_edge(x.shape[2], self.k, self.pad, self.stride, "conv")
        cols, oh, ow = im2col(x, self.k, self.k, self.stride, self.pad)
        w2 = self.W.reshape(self.W.shape[0], -1)
        y = (w2 @ cols + self.b[:, None]).reshape(-1, oh, ow)
        self._cache = (x.shape, cols, oh, ow)
        return y

    def backward(self, dy):
        x_shape, cols, oh, ow = self._cache
        k_out = dy.shape[0]
        dy2 = dy.reshape(k_out, -1)
        self.dW += (dy2 @ cols.T).reshape(self.W.shape)
        self.db += dy2.sum(axis=1)
        dcols = self.W.reshape(k_out, -1).T @ dy2
        return col2im(dcols, x_shape, self.k, self.k, self.stride, self.pad, oh, ow)

    def params(self):
        return [("W", self), ("b", self)]


class MaxPool(Layer):
    def __init__(self, k=2, stride=2, pad=0):
        self.k, self.stride, self.pad = k, stride, pad
        self._cache = None

    def forward(self, x):
        c, h, w = x.shape
        _check_edge(h, self.k, self.pad, self.stride, "maxpool")
        _check_edge(w, self.k, self.pad, self.stride, "maxpool")
        if self.pad:
            x = np.pad(x, ((0, 0), (self.pad, self.pad), (self.pad, self.pad)),
                       constant_values=-np.inf)
        win = sliding_window_view(x, (self.k, self.k), axis=(1, 2))
        win = win[:, ::self.stride, ::self.stride]
        oh, ow = win.shape[1], win.shape[2]
        flat = win.reshape(c, oh, ow, self.k * self.k)
        arg = flat.argmax(axis=3)
        y = np.take_along_axis(flat, arg[..., None], axis=3)[..., 0]
        self._cache = ((c, h, w), arg, oh, ow)
        return y

    def backward(self, dy):
        (c, h, w), arg, oh, ow = self._cache
        hp, wp = h + 2 * self.pad, w + 2 * self.pad
        dx = np.zeros((c, hp, wp), dtype=dy.dtype)
        ci, oi, oj = np.meshgrid(np.arange(c), np.arange(oh), np.arange(ow),
                                 indexing="ij")
        ri = oi * self.stride + arg // self.k
        rj = oj * self.stride + arg % self.k
        np.add.at(dx, (ci.ravel(), ri.ravel(), rj.ravel()), dy.ravel())
        if self.pad:
            dx = dx[:, self.pad:hp - self.pad, self.pad:wp - self.pad]
        return dx


class ReLU(Layer):
    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0)

    def backward(self, dy):
        return np.where(self._mask, dy, 0)


class Tanh(Layer):
    def forward(self, x):
        self._y = np.tanh(x)
        return self._y

    def backward(self, dy):
        return dy * (1.0 - self._y * self._y)


def bilinear_kernel(factor: int, dtype=np.float64) -> np.ndarray:
    """(k, k) weights realizing bilinear interpolation for stride `factor`."""
    k = 2 * factor - factor % 2
    if factor % 2 == 1:
        center = factor - 1.0
    else:
        center = factor - 0.5
    og = np.arange(k, dtype=np.float64)
    f1 = 1.0 - np.abs(og - center) / factor
    return np.asarray(np.outer(f1, f1), dtype=dtype)


class Deconv(Layer):
    """Transposed convolution with stride `factor`, full (uncropped) output."""

    def __init__(self, in_ch, out_ch, factor, dtype=np.float32, bilinear=True,
                 trainable=False, rng=None):
        self.factor = factor
        self.k = 2 * factor - factor % 2
        if bilinear:
            filt = bilinear_kernel(factor, dtype)
            self.W = np.zeros((in_ch, out_ch, self.k, self.k), dtype=dtype)
            for c in range(min(in_ch, out_ch)):
                self.W[c, c] = filt
        else:
            bound = np.sqrt(6.0 / ((in_ch + out_ch) * self.k * self.k))
            self.W = rng.uniform(-bound, bound,
                                 (in_ch, out_ch, self.k, self.k)).astype(dtype)
        self.dW = np.zeros_like(self.W)
        self.trainable = trainable
        self._cache = None

    def forward(self, x):
        ci, h, w = x.shape
        f, k = self.factor, self.k
        co = self.W.shape[1]
        hf, wf = (h - 1) * f + k, (w - 1) * f + k
        out = np.zeros((co, hf, wf), dtype=x.dtype)
        # scatter per input position (few positions, large kernels here)
        for i in range(h):
            for j in range(w):
                out[:, i * f:i * f + k, j * f:j * f + k] += np.tensordot(
                    x[:, i, j], self.W, axes=([0], [0]))
        self._cache = (x, (ci, h, w))
        return out

    def backward(self, dy):
        x, (ci, h, w) = self._cache
        f, k = self.factor, self.k
        dx = np.zeros((ci, h, w), dtype=dy.dtype)
        for i in range(h):
            for j in range(w):
                patch = dy[:, i * f:i * f + k, j * f:j * f + k]
                dx[:, i, j] = np.tensordot(self.W, patch, axes=([1, 2, 3], [0, 1, 2]))
                if self.trainable:
                    self.dW += np.multiply.outer(x[:, i, j], patch)
        return dx

    def params(self):
        return [("W", self)] if self.trainable else []


class CropTo(Layer):
    """Center-crop the first input to the spatial shape of the second."""

    def forward(self, x, ref):
        th, tw = ref.shape[-2:]
        h, w = x.shape[-2:]
        if h < th or w < tw:
            raise ValueError(f"cannot crop {x.shape} to larger {ref.shape}")
        self._off = ((h - th) // 2, (w - tw) // 2)
        self._full = (x.shape[0], h, w)
        oy, ox = self._off
        return x[:, oy:oy + th, ox:ox + tw]

    def backward(self, dy):
        c, h, w = self._full
        oy, ox = self._off
        dx = np.zeros((c, h, w), dtype=dy.dtype)
        dx[:, oy:oy + dy.shape[1], ox:ox + dy.shape[2]] = dy
        return dx, None  # no gradient into the shape reference


class FuseSum(Layer):
    """Elementwise sum of a skip score map and an upsampled map."""

    def forward(self, a, b):
        if a.shape != b.shape:
            raise ValueError(f"fuse shape mismatch: {a.shape} vs {b.shape}")
        return a + b

    def backward(self, dy):
        return dy, dy


# -- heads and losses ------------------------------------------------------------


def softmax(logits: np.ndarray) -> np.ndarray:
    """Channel-axis softmax of a (K, H, W) map."""
    z = logits - logits.max(axis=0, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=0, keepdims=True)


def weighted_softmax_loss(logits: np.ndarray, labels: np.ndarray,
                          class_weights) -> tuple[float, np.ndarray]:
    """Class-weighted per-pixel negative log-likelihood, mean over valid pixels.

    Labels: (H, W) integers; negative values are ignored (zero loss and zero
    gradient). Returns (loss, dloss/dlogits).
    """
    k = logits.shape[0]
    cw = np.asarray(class_weights, dtype=np.float64)
    if cw.shape[0] != k:
        raise ValueError("one class weight per logit channel required")
    valid = labels >= 0
    if labels[valid].size and labels[valid].max() >= k:
        raise ValueError("label out of range")
    n = int(valid.sum())
    grad = np.zeros_like(logits)
    if n == 0:
        return 0.0, grad
    p = softmax(logits.astype(np.float64))
    lab = np.where(valid, labels, 0).astype(np.int64)
    onehot = np.zeros_like(p)
    hh, ww = np.meshgrid(np.arange(labels.shape[0]), np.arange(labels.shape[1]),
                         indexing="ij")
    onehot[lab, hh, ww] = 1.0
    w_pix = np.where(valid, cw[lab], 0.0)
    p_true = np.take_along_axis(p, lab[None], axis=0)[0]
    loss = float(np.sum(w_pix * -np.log(np.maximum(p_true, 1e-300))) / n)
    grad[:] = ((p - onehot) * w_pix[None] / n).astype(logits.dtype)
    return loss, grad


def orientation_loss(sin_map: np.ndarray, cos_map: np.ndarray,
                     heading: np.ndarray, weight: float = 1.0):
    """Squared error against (sin, cos) of the heading over its support.

    The heading mask uses NaN off the dynamic support. Returns
    (loss, dsin, dcos); all zero when the support is empty.
    """
    s = sin_map[0] if sin_map.ndim == 3 else sin_map
    c = cos_map[0] if cos_map.ndim == 3 else cos_map
    support = np.isfinite(heading)
    n = int(support.sum())
    dsin = np.zeros_like(sin_map)
    dcos = np.zeros_like(cos_map)
    if n == 0:
        return 0.0, dsin, dcos
    ts = np.where(support, np.sin(heading), 0.0)
    tc = np.where(support, np.cos(heading), 0.0)
    es = np.where(support, s - ts, 0.0)
    ec = np.where(support, c - tc, 0.0)
    loss = float(weight * np.sum(es * es + ec * ec) / n)
    dsin[...] = ((2.0 * weight / n) * es).reshape(dsin.shape).astype(sin_map.dtype)
    dcos[...] = ((2.0 * weight / n) * ec).reshape(dcos.shape).astype(cos_map.dtype)
    return loss, dsin, dcos


def recombine_angle(sin_val, cos_val):
    """Two-argument arctangent of regressed (sin, cos); NaN at the (0, 0) pole."""
    sin_val = np.asarray(sin_val, dtype=np.float64)
    cos_val = np.asarray(cos_val, dtype=np.float64)
    ang = np.arctan2(sin_val, cos_val)
    degenerate = (sin_val == 0) & (cos_val == 0)
    out = np.where(degenerate, np.nan, ang)
    return float(out) if out.ndim == 0 else out
