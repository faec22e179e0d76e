"""Softmax cross-entropy with fused gradient."""

import numpy as np

from ..errors import InvalidInputError


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, targets: np.ndarray):
    """Mean negative log-likelihood of integer targets under row softmax.

    Returns (loss, grad_logits) with grad = (softmax - onehot) / batch,
    computed via log-sum-exp for stability.
    """
    logits = np.asarray(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise InvalidInputError(f"bad shapes: logits {logits.shape}, targets {targets.shape}")
    b, c = logits.shape
    if targets.size and (targets.min() < 0 or targets.max() >= c):
        raise InvalidInputError(f"target out of range [0, {c})")

    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    loss = -float(log_probs[np.arange(b), targets].mean())

    grad = np.exp(log_probs)
    grad[np.arange(b), targets] -= 1.0
    grad /= b
    return loss, grad.astype(logits.dtype)
