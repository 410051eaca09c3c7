"""Small dense-tensor kernel: conv / nearest-upsample / leaky-relu layers with
hand-written backward passes, plus Adam and a cosine learning-rate schedule.

Tensors are plain ``numpy`` arrays in NCHW layout. Layers compute in the dtype
of their parameters (float32 by default); casting a network to float64 is how
the gradient checks get enough precision for central differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, UsageError

__all__ = [
    "Conv2d",
    "LeakyReLU",
    "UpsampleNearest",
    "Sequential",
    "conv2d_forward",
    "OptimizerState",
    "adam_step",
    "cosine_lr",
]


def _out_size(n: int, stride: int) -> int:
    return -(-n // stride)


def _im2col(x: np.ndarray, k: int, stride: int) -> tuple[np.ndarray, int, int]:
    """Return patches of shape (C*k*k, N*Ho*Wo) for a 'same'-padded conv."""
    n, c, h, w = x.shape
    p = (k - 1) // 2
    ho, wo = _out_size(h, stride), _out_size(w, stride)
    xt = x.transpose(1, 0, 2, 3)
    xp = np.pad(xt, ((0, 0), (0, 0), (p, p), (p, p))) if p else np.ascontiguousarray(xt)
    cols = np.empty((c, k, k, n, ho, wo), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
    return cols.reshape(c * k * k, n * ho * wo), ho, wo


def _check_conv_shapes(x: np.ndarray, weight: np.ndarray, stride: int) -> None:
    if x.ndim != 4 or weight.ndim != 4:
        raise ConfigurationError(f"expected 4-d input and weight, got {x.shape} and {weight.shape}")
    o, c, kh, kw = weight.shape
    if kh != kw or kh % 2 == 0:
        raise ConfigurationError(f"kernel must be square and odd, got {kh}x{kw}")
    if x.shape[1] != c:
        raise ConfigurationError(f"input has {x.shape[1]} channels, weight expects {c}")
    if stride not in (1, 2):
        raise ConfigurationError(f"stride must be 1 or 2, got {stride}")


def conv2d_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None, stride: int = 1) -> np.ndarray:
    """Cross-correlation with zero padding (k-1)/2; output is ceil(in/stride)."""
    _check_conv_shapes(x, weight, stride)
    o, _, k, _ = weight.shape
    cols, ho, wo = _im2col(x, k, stride)
    out = weight.reshape(o, -1) @ cols
    if bias is not None:
        out += bias[:, None]
    return np.ascontiguousarray(out.reshape(o, x.shape[0], ho, wo).transpose(1, 0, 2, 3))


class Layer:
    kind = "layer"

    def params(self) -> list[np.ndarray]:
        return []

    def grads(self) -> list[np.ndarray]:
        return []

    def forward(self, x: np.ndarray, record: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _cached(self):
        if self._cache is None:
            raise UsageError(f"{type(self).__name__}.backward called without a recorded forward pass")
        cache, self._cache = self._cache, None
        return cache


class Conv2d(Layer):
    kind = "conv"

    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int = 1, rng=None, dtype=np.float32):
        if kernel % 2 == 0 or kernel < 1:
            raise ConfigurationError(f"kernel must be odd, got {kernel}")
        if stride not in (1, 2):
            raise ConfigurationError(f"stride must be 1 or 2, got {stride}")
        self.in_ch, self.out_ch, self.kernel, self.stride = in_ch, out_ch, kernel, stride
        self.weight = np.zeros((out_ch, in_ch, kernel, kernel), dtype=dtype)
        self.bias = np.zeros(out_ch, dtype=dtype)
        if rng is not None:
            # He-uniform for leaky-relu(0.2)
            fan_in = in_ch * kernel * kernel
            bound = math.sqrt(6.0 / ((1 + 0.2**2) * fan_in))
            self.weight[...] = rng.uniform(-bound, bound, self.weight.shape)
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)
        self._cache = None

    def params(self):
        return [self.weight, self.bias]

    def grads(self):
        return [self.grad_weight, self.grad_bias]

    def forward(self, x, record=False):
        _check_conv_shapes(x, self.weight, self.stride)
        cols, ho, wo = _im2col(x, self.kernel, self.stride)
        out = self.weight.reshape(self.out_ch, -1) @ cols
        out += self.bias[:, None]
        if record:
            self._cache = (cols, x.shape, ho, wo)
        return np.ascontiguousarray(out.reshape(self.out_ch, x.shape[0], ho, wo).transpose(1, 0, 2, 3))

    def backward(self, grad):
        cols, (n, c, h, w), ho, wo = self._cached()
        k, s, p = self.kernel, self.stride, (self.kernel - 1) // 2
        gm = np.ascontiguousarray(grad.transpose(1, 0, 2, 3)).reshape(self.out_ch, -1)
        self.grad_weight[...] = (gm @ cols.T).reshape(self.weight.shape)
        self.grad_bias[...] = gm.sum(axis=1, dtype=np.float64)
        dcols = (self.weight.reshape(self.out_ch, -1).T @ gm).reshape(c, k, k, n, ho, wo)
        dxp = np.zeros((c, n, h + 2 * p, w + 2 * p), dtype=grad.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i : i + s * ho : s, j : j + s * wo : s] += dcols[:, i, j]
        return np.ascontiguousarray(dxp[:, :, p : p + h, p : p + w].transpose(1, 0, 2, 3))

    def __repr__(self):
        return f"Conv2d({self.in_ch}, {self.out_ch}, k={self.kernel}, s={self.stride})"


class LeakyReLU(Layer):
    kind = "leaky-relu"

    def __init__(self, negative_slope: float = 0.2):
        self.negative_slope = negative_slope
        self._cache = None

    def forward(self, x, record=False):
        pos = x > 0
        if record:
            self._cache = pos
        return np.where(pos, x, x * x.dtype.type(self.negative_slope))

    def backward(self, grad):
        pos = self._cached()
        return np.where(pos, grad, grad * grad.dtype.type(self.negative_slope))

    def __repr__(self):
        return f"LeakyReLU({self.negative_slope})"


class UpsampleNearest(Layer):
    """Nearest-neighbour x2 upsampling."""

    kind = "upsample-nearest"

    def __init__(self):
        self._cache = None

    def forward(self, x, record=False):
        if record:
            self._cache = x.shape
        return x.repeat(2, axis=2).repeat(2, axis=3)

    def backward(self, grad):
        n, c, h, w = self._cached()
        return grad.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5))

    def __repr__(self):
        return "UpsampleNearest(2)"


class Sequential(Layer):
    def __init__(self, layers):
        self.layers = list(layers)

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def grads(self):
        return [g for layer in self.layers for g in layer.grads()]

    def forward(self, x, record=False):
        for layer in self.layers:
            x = layer.forward(x, record=record)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def astype(self, dtype) -> "Sequential":
        for layer in self.layers:
            if isinstance(layer, Conv2d):
                for name in ("weight", "bias", "grad_weight", "grad_bias"):
                    setattr(layer, name, getattr(layer, name).astype(dtype))
        return self

    def __repr__(self):
        return "Sequential(" + ", ".join(map(repr, self.layers)) + ")"


@dataclass
class OptimizerState:
    """Adam moments and step counter for a list of parameters."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    base_lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, base_lr: float = 1e-3, **kw) -> "OptimizerState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], base_lr=base_lr, **kw)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: OptimizerState, lr: float) -> None:
    """Bias-corrected Adam update, applied in place to ``params``."""
    if lr < 0:
        raise UsageError(f"learning rate must be >= 0, got {lr}")
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ConfigurationError("params, grads and optimizer state have different lengths")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ConfigurationError(f"shape mismatch {p.shape} vs {g.shape}")
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        if lr == 0:
            continue
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        p -= (lr * update).astype(p.dtype)


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    """base_lr * 0.5 * (1 + cos(pi * step / total_steps))."""
    if total_steps <= 0 or not 0 <= step <= total_steps:
        raise UsageError(f"need 0 <= step <= total_steps and total_steps > 0, got {step}/{total_steps}")
    if step == total_steps:
        return 0.0
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))
