"""Dense float64 tensor kernels: matmul, 1D/2D convolution and max pooling.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 in C (row-major)
order with rank 1 to 4. Convolutions use the cross-correlation convention
(the kernel is not flipped), as every deep-learning framework does.

Batched variants take a leading batch axis: ``conv2d`` accepts ``C x H x W``
or ``N x C x H x W``; ``conv1d`` accepts ``C x L`` or ``N x C x L``.
The ``*_backward`` functions are the hand-written adjoints used by
:mod:`fallfuse.nn.layers`.
"""
from __future__ import annotations

import numpy as np

from .errors import InputError, ShapeError

DTYPE = np.float64
MAX_RANK = 4


def as_tensor(x, *, copy: bool = False) -> np.ndarray:
    """Return ``x`` as a C-contiguous float64 array with 1 <= rank <= 4."""
    arr = np.array(x, dtype=DTYPE, copy=copy, order="C") if copy else np.asarray(x, dtype=DTYPE)
    if not 1 <= arr.ndim <= MAX_RANK:
        raise ShapeError(f"tensor rank must be in [1, {MAX_RANK}], got shape {arr.shape}")
    if arr.size == 0:
        raise ShapeError(f"tensor must have at least one element, got shape {arr.shape}")
    return np.ascontiguousarray(arr)


def check_finite(x: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise InputError(f"{what} contains NaN or Inf")
    return x


def matmul(a, b) -> np.ndarray:
    """Matrix product of an ``m x k`` and a ``k x n`` tensor."""
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return check_finite(a @ b, "matmul output")


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def pool_output_size(size: int, window: int, stride: int) -> int:
    return (size - window) // stride + 1


# --- 2D convolution -------------------------------------------------------

def _im2col(x, kh, kw, sh, sw, ph, pw):
    """Unfold ``N x C x H x W`` into a ``(C*kh*kw) x (N*out_h*out_w)`` patch matrix.

    Row ``(c, i, j)`` holds input channel ``c`` shifted by kernel offset
    ``(i, j)`` for every output position. Returns ``(cols, out_h, out_w)``.
    """
    n, c, h, w = x.shape
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    out_h = (h + 2 * ph - kh) // sh + 1
    out_w = (w + 2 * pw - kw) // sw + 1
    cols = np.empty((c, kh, kw, n, out_h, out_w), dtype=DTYPE)
    xt = x.transpose(1, 0, 2, 3)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xt[:, :, i:i + sh * out_h:sh, j:j + sw * out_w:sw]
    return cols.reshape(c * kh * kw, n * out_h * out_w), out_h, out_w


def _col2im(dcols, x_shape, kh, kw, sh, sw, ph, pw, out_h, out_w):
    n, c, h, w = x_shape
    d = dcols.reshape(c, kh, kw, n, out_h, out_w)
    dx = np.zeros((c, n, h + 2 * ph, w + 2 * pw), dtype=DTYPE)
    for i in range(kh):
        for j in range(kw):
            dx[:, :, i:i + sh * out_h:sh, j:j + sw * out_w:sw] += d[:, i, j]
    return np.ascontiguousarray(dx[:, :, ph:ph + h, pw:pw + w].transpose(1, 0, 2, 3))


def _conv_nchw(x, kernels, sh, sw, ph, pw):
    f, c, kh, kw = kernels.shape
    n = x.shape[0]
    cols, out_h, out_w = _im2col(x, kh, kw, sh, sw, ph, pw)
    out = kernels.reshape(f, c * kh * kw) @ cols
    out = out.reshape(f, n, out_h, out_w).transpose(1, 0, 2, 3)
    return np.ascontiguousarray(out), cols


def _conv_nchw_backward(grad_out, x_shape, kernels, cols, sh, sw, ph, pw, input_grad=True):
    f, c, kh, kw = kernels.shape
    _, _, out_h, out_w = grad_out.shape
    g = np.ascontiguousarray(grad_out.transpose(1, 0, 2, 3)).reshape(f, -1)
    grad_k = (g @ cols.T).reshape(kernels.shape)
    if not input_grad:
        return None, grad_k
    dcols = kernels.reshape(f, c * kh * kw).T @ g
    grad_x = _col2im(dcols, x_shape, kh, kw, sh, sw, ph, pw, out_h, out_w)
    return grad_x, grad_k


def _check_conv_args(spatial, kernel_spatial, stride, padding, x_shape, k_shape):
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    if padding < 0:
        raise ShapeError(f"padding must be >= 0, got {padding}")
    for size, k in zip(spatial, kernel_spatial):
        if k > size + 2 * padding:
            raise ShapeError(
                f"kernel {tuple(k_shape)} larger than padded input {tuple(x_shape)} (padding={padding})")


def _batched(x, unbatched_rank):
    if x.ndim == unbatched_rank:
        return x[None], True
    if x.ndim == unbatched_rank + 1:
        return x, False
    raise ShapeError(f"expected rank {unbatched_rank} or {unbatched_rank + 1} input, got shape {x.shape}")


def conv2d(x, kernels, stride: int = 1, padding: int = 0) -> np.ndarray:
    """2D cross-correlation of ``C x H x W`` (or batched) input with ``F x C x kh x kw`` kernels.

    Output extent per axis is ``(H + 2*padding - kh) // stride + 1``.
    Zero padding is applied symmetrically.
    """
    x = as_tensor(x)
    kernels = as_tensor(kernels)
    xb, squeeze = _batched(x, 3)
    if kernels.ndim != 4 or kernels.shape[1] != xb.shape[1]:
        raise ShapeError(f"conv2d kernel shape {kernels.shape} incompatible with input {x.shape}")
    _check_conv_args(xb.shape[2:], kernels.shape[2:], stride, padding, x.shape, kernels.shape)
    out, _ = _conv_nchw(xb, kernels, stride, stride, padding, padding)
    check_finite(out, "conv2d output")
    return out[0] if squeeze else out


def conv2d_backward(grad_out, x, kernels, stride: int = 1, padding: int = 0):
    """Gradients of ``sum(grad_out * conv2d(x, kernels))`` w.r.t. ``x`` and ``kernels``."""
    xb, squeeze = _batched(as_tensor(x), 3)
    gb, _ = _batched(as_tensor(grad_out), 3)
    cols, _, _ = _im2col(xb, kernels.shape[2], kernels.shape[3], stride, stride, padding, padding)
    gx, gk = _conv_nchw_backward(gb, xb.shape, kernels, cols, stride, stride, padding, padding)
    return (gx[0] if squeeze else gx), gk


# --- 1D convolution -------------------------------------------------------

def conv1d(x, kernels, stride: int = 1, padding: int = 0) -> np.ndarray:
    """1D cross-correlation of ``C x L`` (or batched) input with ``F x C x k`` kernels."""
    x = as_tensor(x)
    kernels = as_tensor(kernels)
    xb, squeeze = _batched(x, 2)
    if kernels.ndim != 3 or kernels.shape[1] != xb.shape[1]:
        raise ShapeError(f"conv1d kernel shape {kernels.shape} incompatible with input {x.shape}")
    _check_conv_args(xb.shape[2:], kernels.shape[2:], stride, padding, x.shape, kernels.shape)
    out, _ = _conv_nchw(xb[:, :, None, :], kernels[:, :, None, :], 1, stride, 0, padding)
    out = out[:, :, 0, :]
    check_finite(out, "conv1d output")
    return out[0] if squeeze else out


def conv1d_backward(grad_out, x, kernels, stride: int = 1, padding: int = 0):
    xb, squeeze = _batched(as_tensor(x), 2)
    gb, _ = _batched(as_tensor(grad_out), 2)
    x4 = xb[:, :, None, :]
    k4 = kernels[:, :, None, :]
    cols, _, _ = _im2col(x4, 1, kernels.shape[2], 1, stride, 0, padding)
    gx, gk = _conv_nchw_backward(gb[:, :, None, :], x4.shape, k4, cols, 1, stride, 0, padding)
    gx = gx[:, :, 0, :]
    return (gx[0] if squeeze else gx), gk[:, :, 0, :]


# --- max pooling ----------------------------------------------------------

def _as_planes(x, dimensionality):
    """View input as ``N x C x H x W`` planes; returns the view and original shape."""
    if dimensionality not in (1, 2):
        raise ShapeError(f"dimensionality must be 1 or 2, got {dimensionality}")
    extra = x.ndim - dimensionality
    if extra not in (0, 1, 2):
        raise ShapeError(f"maxpool{dimensionality}d cannot take input of shape {x.shape}")
    lead = x.shape[:extra]
    spatial = x.shape[extra:]
    if dimensionality == 1:
        spatial = (1,) + spatial
    n = int(np.prod(lead)) if lead else 1
    return x.reshape((n, 1) + spatial), lead


def _pool_geometry(h, w, window, stride, dimensionality):
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    kh = window if dimensionality == 2 else 1
    sh = stride if dimensionality == 2 else 1
    if window > w or kh > h:
        raise ShapeError(f"pool window {window} exceeds input extent {(h, w) if dimensionality == 2 else (w,)}")
    return kh, window, sh, stride


def maxpool(x, window: int, stride: int, dimensionality: int = 2):
    """Max pooling over the trailing 1 or 2 spatial axes (no padding).

    Returns ``(out, argmax)``. ``argmax`` has ``out``'s shape and holds, per
    output cell, the row-major flat index of the winning element within its
    input plane (``h * W + w`` in 2D, ``l`` in 1D). Ties go to the lowest
    flat index.
    """
    x = as_tensor(x)
    planes, lead = _as_planes(x, dimensionality)
    _, _, h, w = planes.shape
    kh, kw, sh, sw = _pool_geometry(h, w, window, stride, dimensionality)
    out, local = pool_planes(planes, kh, kw, sh, sw)
    out_h, out_w = out.shape[2:]
    local = local.astype(np.int64)
    rows = np.arange(out_h)[:, None] * sh + local // kw
    cols = np.arange(out_w)[None, :] * sw + local % kw
    idx = (rows * w + cols).astype(np.int64)
    out_spatial = out.shape[2:] if dimensionality == 2 else out.shape[3:]
    return out.reshape(lead + out_spatial), idx.reshape(lead + out_spatial)


def pool_planes(planes, kh, kw, sh, sw):
    """Max over windows of ``N x C x H x W`` planes.

    Returns ``(out, local)`` where ``local`` is the winner's row-major offset
    ``i * kw + j`` inside its window. Offsets are scanned in increasing order
    and only a strictly larger value replaces the current best, so ties keep
    the lowest offset, which is also the lowest flat input index.
    """
    _, _, h, w = planes.shape
    out_h = (h - kh) // sh + 1
    out_w = (w - kw) // sw + 1
    best = planes[:, :, 0:sh * out_h:sh, 0:sw * out_w:sw].copy()
    itype = np.int8 if kh * kw < 128 else np.int64
    local = np.zeros(best.shape, dtype=itype)
    for k in range(1, kh * kw):
        i, j = divmod(k, kw)
        cand = planes[:, :, i:i + sh * out_h:sh, j:j + sw * out_w:sw]
        better = np.greater(cand, best)
        np.maximum(best, cand, out=best)
        local += better * (itype(k) - local)
    return best, local


def pool_planes_backward(grad_out, local, plane_shape, kh, kw, sh, sw):
    """Adjoint of :func:`pool_planes`: each window's gradient goes to its winner."""
    grad_in = np.zeros(plane_shape, dtype=DTYPE)
    out_h, out_w = grad_out.shape[2:]
    for k in range(kh * kw):
        i, j = divmod(k, kw)
        grad_in[:, :, i:i + sh * out_h:sh, j:j + sw * out_w:sw] += grad_out * (local == k)
    return grad_in


def maxpool_backward(grad_out, argmax, input_shape, dimensionality: int = 2) -> np.ndarray:
    """Route ``grad_out`` to the argmax winners; overlapping windows accumulate."""
    grad_out = np.asarray(grad_out, dtype=DTYPE)
    spatial = input_shape[-dimensionality:]
    plane = int(np.prod(spatial))
    n_planes = int(np.prod(input_shape[:-dimensionality])) if len(input_shape) > dimensionality else 1
    g = grad_out.reshape(n_planes, -1)
    idx = argmax.reshape(n_planes, -1) + (np.arange(n_planes) * plane)[:, None]
    grad_in = np.bincount(idx.ravel(), weights=g.ravel(), minlength=n_planes * plane)
    return grad_in.reshape(input_shape)
