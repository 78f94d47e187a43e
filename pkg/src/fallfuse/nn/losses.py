"""Softmax and the fused softmax + cross-entropy loss."""
from __future__ import annotations

import numpy as np

from ..errors import InputError

PROB_FLOOR = 1e-12


def softmax(logits) -> np.ndarray:
    """Row-wise softmax, computed after subtracting each row's max."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def one_hot(labels, classes: int = 2) -> np.ndarray:
    labels = np.asarray(labels)
    out = np.zeros((labels.shape[0], classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def cross_entropy(probs, labels):
    """Mean negative log-likelihood of ``labels`` under ``probs``.

    Returns ``(loss, grad_logits)`` where ``grad_logits = (probs - onehot) / N``
    is the gradient with respect to the logits that produced ``probs``
    through :func:`softmax`. Probabilities are floored at 1e-12 before the log.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != probs.shape[0]:
        raise InputError(f"labels shape {labels.shape} does not match probs shape {probs.shape}")
    if not np.isin(labels, (0, 1)).all():
        raise InputError("labels must be 0 or 1")
    labels = labels.astype(np.int64)
    n = probs.shape[0]
    picked = probs[np.arange(n), labels]
    loss = float(-np.mean(np.log(np.maximum(picked, PROB_FLOOR))))
    grad = (probs - one_hot(labels, probs.shape[1])) / n
    return loss, grad
