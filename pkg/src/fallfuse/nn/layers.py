"""Layers with hand-written forward and backward passes.

Every layer works on batches: the leading axis is the batch axis and
``in_shape``/``out_shape`` describe one sample. A training-mode forward
stores what the backward pass needs in ``layer.cache``; an eval-mode forward
clears it, so calling :meth:`Layer.backward` after an eval forward raises
:class:`~fallfuse.errors.StateError`.
"""
from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass

import numpy as np

from .. import tensor as T
from ..errors import ConfigError, ShapeError, StateError

KINDS = ("Conv1D", "Conv2D", "MaxPool1D", "MaxPool2D", "BatchNorm", "Dense", "Dropout", "ReLU", "Flatten")


class Mode(str, enum.Enum):
    TRAIN = "train"
    EVAL = "eval"


@dataclass(frozen=True)
class LayerSpec:
    """Declarative description of one layer.

    Only the fields relevant to ``kind`` are read: ``filters``/``kernel``/
    ``stride``/``padding`` for convolutions, ``window``/``stride`` for max
    pooling (stride ``None`` means stride = window), ``units`` for Dense,
    ``rate`` for Dropout and ``momentum``/``eps`` for BatchNorm.
    """

    kind: str
    filters: int | None = None
    kernel: int | None = None
    stride: int | None = None
    padding: int = 0
    window: int | None = None
    units: int | None = None
    rate: float = 0.0
    momentum: float = 0.9
    eps: float = 1e-5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}; expected one of {KINDS}")
        if self.kind in ("Conv1D", "Conv2D"):
            _require_positive(self, "filters", "kernel")
        if self.kind in ("MaxPool1D", "MaxPool2D"):
            _require_positive(self, "window")
        if self.kind == "Dense":
            _require_positive(self, "units")
        if self.stride is not None and self.stride < 1:
            raise ConfigError(f"{self.kind}: stride must be >= 1, got {self.stride}")
        if self.padding < 0:
            raise ConfigError(f"{self.kind}: padding must be >= 0, got {self.padding}")
        if not 0.0 <= self.rate < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {self.rate}")
        if self.eps <= 0:
            raise ConfigError(f"batch-norm eps must be > 0, got {self.eps}")
        if not 0.0 <= self.momentum <= 1.0:
            raise ConfigError(f"batch-norm momentum must be in [0, 1], got {self.momentum}")

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        return cls(**d)


def _require_positive(spec, *names):
    for name in names:
        value = getattr(spec, name)
        if value is None or value < 1:
            raise ConfigError(f"{spec.kind}: {name} must be a positive integer, got {value}")


def conv1d(filters, kernel, stride=1, padding=0):
    return LayerSpec("Conv1D", filters=filters, kernel=kernel, stride=stride, padding=padding)


def conv2d(filters, kernel, stride=1, padding=0):
    return LayerSpec("Conv2D", filters=filters, kernel=kernel, stride=stride, padding=padding)


def maxpool1d(window, stride=None):
    return LayerSpec("MaxPool1D", window=window, stride=stride)


def maxpool2d(window, stride=None):
    return LayerSpec("MaxPool2D", window=window, stride=stride)


def batchnorm(momentum=0.9, eps=1e-5):
    return LayerSpec("BatchNorm", momentum=momentum, eps=eps)


def dense(units):
    return LayerSpec("Dense", units=units)


def dropout(rate):
    return LayerSpec("Dropout", rate=rate)


def relu():
    return LayerSpec("ReLU")


def flatten():
    return LayerSpec("Flatten")


class Layer:
    """Base layer: parameters, buffers, forward cache and per-sample shapes."""

    def __init__(self, spec: LayerSpec, in_shape: tuple[int, ...]):
        self.spec = spec
        self.in_shape = tuple(int(d) for d in in_shape)
        self.out_shape = self.in_shape
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.cache = None
        # a network's first layer may skip computing the gradient w.r.t. its input
        self.needs_input_grad = True

    @property
    def kind(self) -> str:
        return self.spec.kind

    def num_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def _check_input(self, x):
        if x.ndim != len(self.in_shape) + 1 or x.shape[1:] != self.in_shape:
            raise ShapeError(
                f"{self.kind} expects input of shape (N, {', '.join(map(str, self.in_shape))}), got {x.shape}")

    def forward(self, x: np.ndarray, mode: Mode = Mode.TRAIN) -> np.ndarray:
        self._check_input(x)
        out, cache = self._forward(x, Mode(mode))
        self.cache = cache if Mode(mode) is Mode.TRAIN else None
        return out

    def backward(self, grad_output: np.ndarray):
        """Return ``(grad_input, param_grads)``; also stores ``param_grads`` in ``self.grads``."""
        if self.cache is None:
            raise StateError(f"{self.kind}.backward called without a preceding training-mode forward")
        grad_in, grads = self._backward(np.asarray(grad_output, dtype=T.DTYPE), self.cache)
        self.grads = grads
        return grad_in, grads

    def nondifferentiable_mask(self, x: np.ndarray, eps: float) -> np.ndarray | None:
        """Input coordinates where a +/- ``eps`` perturbation crosses a kink."""
        return None

    def _forward(self, x, mode):
        raise NotImplementedError

    def _backward(self, grad, cache):
        raise NotImplementedError


def _kaiming(rng, shape, fan_in):
    return rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)


class Conv1D(Layer):
    def __init__(self, spec, in_shape, rng):
        super().__init__(spec, in_shape)
        if len(self.in_shape) != 2:
            raise ShapeError(f"Conv1D expects per-sample shape (C, L), got {self.in_shape}")
        c, length = self.in_shape
        k, s, p = spec.kernel, spec.stride or 1, spec.padding
        if k > length + 2 * p:
            raise ShapeError(f"Conv1D kernel {k} larger than padded input length {length} (padding={p})")
        self.stride = s
        self.out_shape = (spec.filters, T.conv_output_size(length, k, s, p))
        self.params["weight"] = _kaiming(rng, (spec.filters, c, k), c * k)
        self.params["bias"] = np.zeros(spec.filters)

    def _forward(self, x, mode):
        w = self.params["weight"]
        x4 = x[:, :, None, :]
        out, cols = T._conv_nchw(x4, w[:, :, None, :], 1, self.stride, 0, self.spec.padding)
        out = out[:, :, 0, :] + self.params["bias"][None, :, None]
        return out, (x4.shape, cols)

    def _backward(self, grad, cache):
        x_shape, cols = cache
        w = self.params["weight"]
        gx, gw = T._conv_nchw_backward(grad[:, :, None, :], x_shape, w[:, :, None, :], cols,
                                       1, self.stride, 0, self.spec.padding, self.needs_input_grad)
        gx = None if gx is None else gx[:, :, 0, :]
        return gx, {"weight": gw[:, :, 0, :], "bias": grad.sum(axis=(0, 2))}


class Conv2D(Layer):
    def __init__(self, spec, in_shape, rng):
        super().__init__(spec, in_shape)
        if len(self.in_shape) != 3:
            raise ShapeError(f"Conv2D expects per-sample shape (C, H, W), got {self.in_shape}")
        c, h, w = self.in_shape
        k, s, p = spec.kernel, spec.stride or 1, spec.padding
        if k > h + 2 * p or k > w + 2 * p:
            raise ShapeError(f"Conv2D kernel {k}x{k} larger than padded input {h}x{w} (padding={p})")
        self.stride = s
        self.out_shape = (spec.filters, T.conv_output_size(h, k, s, p), T.conv_output_size(w, k, s, p))
        self.params["weight"] = _kaiming(rng, (spec.filters, c, k, k), c * k * k)
        self.params["bias"] = np.zeros(spec.filters)

    def _forward(self, x, mode):
        s, p = self.stride, self.spec.padding
        out, cols = T._conv_nchw(x, self.params["weight"], s, s, p, p)
        out += self.params["bias"][None, :, None, None]
        return out, (x.shape, cols)

    def _backward(self, grad, cache):
        x_shape, cols = cache
        s, p = self.stride, self.spec.padding
        gx, gw = T._conv_nchw_backward(grad, x_shape, self.params["weight"], cols, s, s, p, p,
                                       self.needs_input_grad)
        return gx, {"weight": gw, "bias": grad.sum(axis=(0, 2, 3))}


class _MaxPool(Layer):
    dims = 2

    def __init__(self, spec, in_shape, rng=None):
        super().__init__(spec, in_shape)
        if len(self.in_shape) != self.dims + 1:
            raise ShapeError(f"{spec.kind} expects per-sample shape of rank {self.dims + 1}, got {self.in_shape}")
        self.window = spec.window
        self.stride = spec.stride or spec.window
        spatial = self.in_shape[1:]
        if any(self.window > s for s in spatial):
            raise ShapeError(f"{spec.kind} window {self.window} exceeds input extent {spatial}")
        self.out_shape = (self.in_shape[0],) + tuple(
            T.pool_output_size(s, self.window, self.stride) for s in spatial)

    def _geometry(self):
        if self.dims == 2:
            return self.window, self.window, self.stride, self.stride
        return 1, self.window, 1, self.stride

    def _forward(self, x, mode):
        planes = x if self.dims == 2 else x[:, :, None, :]
        out, local = T.pool_planes(planes, *self._geometry())
        if self.dims == 1:
            out = out[:, :, 0, :]
        return out, (planes.shape, local)

    def _backward(self, grad, cache):
        plane_shape, local = cache
        g = grad if self.dims == 2 else grad[:, :, None, :]
        gx = T.pool_planes_backward(g, local, plane_shape, *self._geometry())
        return (gx if self.dims == 2 else gx[:, :, 0, :]), {}

    def nondifferentiable_mask(self, x, eps):
        # flag every input cell of a window whose top two values are within 2*eps
        planes = x if self.dims == 2 else x[:, :, None, :]
        n, c, h, w = planes.shape
        kh, kw, sh, sw = self._geometry()
        out_h = (h - kh) // sh + 1
        out_w = (w - kw) // sw + 1
        win = np.lib.stride_tricks.sliding_window_view(planes, (kh, kw), axis=(2, 3))
        win = win[:, :, ::sh, ::sw][:, :, :out_h, :out_w].reshape(n, c, out_h, out_w, -1)
        if win.shape[-1] < 2:
            return np.zeros(x.shape, dtype=bool)
        top2 = np.sort(win, axis=-1)[..., -2:]
        tied = (top2[..., 1] - top2[..., 0]) <= 2 * eps
        mask = np.zeros(planes.shape, dtype=bool)
        for oh, ow in zip(*np.nonzero(tied.any(axis=(0, 1)))):
            sel = tied[:, :, oh, ow]
            r0, c0 = oh * sh, ow * sw
            region = mask[:, :, r0:r0 + kh, c0:c0 + kw]
            region |= sel[:, :, None, None]
        return mask.reshape(x.shape)


class MaxPool1D(_MaxPool):
    dims = 1


class MaxPool2D(_MaxPool):
    dims = 2


class BatchNorm(Layer):
    """Per-channel batch normalization (per-feature for rank-1 samples).

    Training mode normalizes with the biased batch statistics and updates
    ``running = momentum * running + (1 - momentum) * batch``. Eval mode
    normalizes with the running statistics, which start at mean 0 and
    variance 1, so eval before any training step is well defined.
    """

    def __init__(self, spec, in_shape, rng=None):
        super().__init__(spec, in_shape)
        c = self.in_shape[0]
        self.params["gamma"] = np.ones(c)
        self.params["beta"] = np.zeros(c)
        self.buffers["running_mean"] = np.zeros(c)
        self.buffers["running_var"] = np.ones(c)
        self._axes = (0,) + tuple(range(2, len(self.in_shape) + 1))
        self._bshape = (1, c) + (1,) * (len(self.in_shape) - 1)

    def _forward(self, x, mode):
        eps = self.spec.eps
        gamma = self.params["gamma"].reshape(self._bshape)
        beta = self.params["beta"].reshape(self._bshape)
        if mode is Mode.EVAL:
            mean = self.buffers["running_mean"].reshape(self._bshape)
            var = self.buffers["running_var"].reshape(self._bshape)
            return gamma * ((x - mean) / np.sqrt(var + eps)) + beta, None
        mean = x.mean(axis=self._axes, keepdims=True)
        centered = x - mean
        var = (centered * centered).mean(axis=self._axes, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = centered * inv_std
        m = self.spec.momentum
        self.buffers["running_mean"] = m * self.buffers["running_mean"] + (1 - m) * mean.ravel()
        self.buffers["running_var"] = m * self.buffers["running_var"] + (1 - m) * var.ravel()
        return gamma * xhat + beta, (xhat, inv_std)

    def _backward(self, grad, cache):
        xhat, inv_std = cache
        count = grad.size // grad.shape[1]
        gamma = self.params["gamma"].reshape(self._bshape)
        dbeta = grad.sum(axis=self._axes)
        dgamma = (grad * xhat).sum(axis=self._axes)
        dx = (gamma * inv_std / count) * (
            count * grad - dbeta.reshape(self._bshape) - xhat * dgamma.reshape(self._bshape))
        return dx, {"gamma": dgamma, "beta": dbeta}


class Dense(Layer):
    def __init__(self, spec, in_shape, rng):
        super().__init__(spec, in_shape)
        if len(self.in_shape) != 1:
            raise ShapeError(f"Dense expects flat per-sample input, got {self.in_shape}; add a Flatten layer")
        fan_in = self.in_shape[0]
        self.out_shape = (spec.units,)
        self.params["weight"] = _kaiming(rng, (fan_in, spec.units), fan_in)
        self.params["bias"] = np.zeros(spec.units)

    def _forward(self, x, mode):
        return x @ self.params["weight"] + self.params["bias"], x

    def _backward(self, grad, x):
        gx = grad @ self.params["weight"].T if self.needs_input_grad else None
        return gx, {"weight": x.T @ grad, "bias": grad.sum(axis=0)}


class ReLU(Layer):
    def __init__(self, spec, in_shape, rng=None):
        super().__init__(spec, in_shape)

    def _forward(self, x, mode):
        # np.maximum keeps NaN visible downstream
        return np.maximum(x, 0.0), x > 0

    def _backward(self, grad, positive):
        return np.where(positive, grad, 0.0), {}

    def nondifferentiable_mask(self, x, eps):
        return np.abs(x) <= 2 * eps


class Flatten(Layer):
    def __init__(self, spec, in_shape, rng=None):
        super().__init__(spec, in_shape)
        self.out_shape = (int(np.prod(self.in_shape)),)

    def _forward(self, x, mode):
        return x.reshape(x.shape[0], -1), x.shape

    def _backward(self, grad, shape):
        return grad.reshape(shape), {}


class Dropout(Layer):
    """Inverted dropout: train mode zeroes units with probability ``rate`` and
    scales survivors by ``1 / (1 - rate)``; eval mode is the identity.

    Masks are drawn from the generator passed at construction. Setting
    ``freeze_mask`` reuses the previous mask (used by the gradient checker).
    """

    def __init__(self, spec, in_shape, rng):
        super().__init__(spec, in_shape)
        self.rng = rng
        self.freeze_mask = False
        self.mask = None

    def _forward(self, x, mode):
        rate = self.spec.rate
        if mode is Mode.EVAL or rate == 0.0:
            return x.copy(), np.ones_like(x) if mode is Mode.TRAIN else None
        if not (self.freeze_mask and self.mask is not None and self.mask.shape == x.shape):
            self.mask = (self.rng.random(x.shape) >= rate) / (1.0 - rate)
        return x * self.mask, self.mask

    def _backward(self, grad, mask):
        return grad * mask, {}


_LAYER_TYPES = {
    "Conv1D": Conv1D,
    "Conv2D": Conv2D,
    "MaxPool1D": MaxPool1D,
    "MaxPool2D": MaxPool2D,
    "BatchNorm": BatchNorm,
    "Dense": Dense,
    "Dropout": Dropout,
    "ReLU": ReLU,
    "Flatten": Flatten,
}


def build_layer(spec: LayerSpec, in_shape, rng: np.random.Generator) -> Layer:
    """Instantiate the layer for ``spec`` on per-sample input ``in_shape``."""
    return _LAYER_TYPES[spec.kind](spec, tuple(in_shape), rng)


class Sequential:
    """An ordered stack of layers built from specs."""

    def __init__(self, specs, in_shape, rng, input_grad=True):
        self.specs = list(specs)
        self.layers: list[Layer] = []
        shape = tuple(in_shape)
        for i, spec in enumerate(self.specs):
            try:
                layer = build_layer(spec, shape, rng)
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({spec.kind}) on input {shape}: {exc}") from exc
            self.layers.append(layer)
            shape = layer.out_shape
        if self.layers:
            self.layers[0].needs_input_grad = input_grad
        self.in_shape = tuple(in_shape)
        self.out_shape = shape

    def forward(self, x, mode=Mode.TRAIN):
        for layer in self.layers:
            x = layer.forward(x, mode)
        return x

    def backward(self, grad):
        """Backpropagate ``grad``; returns the input gradient (``None`` if not requested)."""
        for layer in reversed(self.layers):
            grad, _ = layer.backward(grad)
        return grad

    def named_layers(self, prefix=""):
        for i, layer in enumerate(self.layers):
            yield f"{prefix}{i}.{layer.kind}", layer

    def num_params(self):
        return sum(layer.num_params() for layer in self.layers)
