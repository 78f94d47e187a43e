"""Central finite-difference check of a layer's hand-written backward pass."""
from __future__ import annotations

import numpy as np

from ..errors import InputError
from .layers import Dropout, Layer, Mode
from .losses import cross_entropy, softmax


_PROJ_STREAM = 0x6772616463686B


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``||a - n|| / (||a|| + ||n||)``, 0 when both vanish."""
    denom = np.linalg.norm(analytic) + np.linalg.norm(numeric)
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / denom)


def _numeric_grad(f, arr, eps, skip=None):
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    g = grad.reshape(-1)
    skip_flat = None if skip is None else skip.reshape(-1)
    for i in range(flat.size):
        if skip_flat is not None and skip_flat[i]:
            continue
        orig = flat[i]
        flat[i] = orig + eps
        plus = f()
        flat[i] = orig - eps
        minus = f()
        flat[i] = orig
        g[i] = (plus - minus) / (2 * eps)
    return grad


def grad_check(layer: Layer, x, eps: float = 1e-5, seed: int = 0) -> float:
    """Worst relative error between ``layer.backward`` and central differences.

    The scalar probed is ``sum(out * proj)`` for a fixed random ``proj``; a
    plain sum would make BatchNorm's input gradient vanish identically.
    Every parameter and input coordinate is perturbed by +/- ``eps``, except
    input coordinates the layer reports as sitting on a kink (ReLU at 0,
    max-pool windows with a near tie), which are skipped in both gradients.
    Dropout masks are frozen for the duration of the check and BatchNorm
    running buffers are restored afterwards.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise InputError(f"eps must be in [1e-7, 1e-3], got {eps}")
    x = np.array(x, dtype=np.float64)
    # separate stream so proj never coincides with data drawn from default_rng(seed)
    rng = np.random.default_rng([seed, _PROJ_STREAM])
    saved_buffers = {k: v.copy() for k, v in layer.buffers.items()}
    wanted_input_grad = layer.needs_input_grad
    layer.needs_input_grad = True
    frozen = isinstance(layer, Dropout)
    if frozen:
        layer.freeze_mask = False

    out = layer.forward(x, Mode.TRAIN)
    proj = rng.standard_normal(out.shape)
    grad_x, grads = layer.backward(proj)
    if frozen:
        layer.freeze_mask = True

    def loss():
        return float(np.sum(layer.forward(x, Mode.TRAIN) * proj))

    try:
        worst = 0.0
        for name, p in layer.params.items():
            numeric = _numeric_grad(loss, p, eps)
            worst = max(worst, relative_error(grads[name], numeric))
        skip = layer.nondifferentiable_mask(x, eps)
        numeric_x = _numeric_grad(loss, x, eps, skip)
        analytic_x = grad_x if skip is None else np.where(skip, 0.0, grad_x)
        worst = max(worst, relative_error(analytic_x, numeric_x))
    finally:
        if frozen:
            layer.freeze_mask = False
        layer.buffers.update(saved_buffers)
        layer.needs_input_grad = wanted_input_grad
    return worst


def grad_check_softmax_ce(logits, labels, eps: float = 1e-5) -> float:
    """Check the fused ``(probs - onehot) / N`` gradient of softmax followed by cross-entropy."""
    logits = np.array(logits, dtype=np.float64)
    _, analytic = cross_entropy(softmax(logits), labels)
    numeric = _numeric_grad(lambda: cross_entropy(softmax(logits), labels)[0], logits, eps)
    return relative_error(analytic, numeric)
