"""Central finite-difference verification of analytic gradients.

Relative error uses a floored denominator, max(|a|, |n|, 1e-5). When both
the analytic and numeric values are below 1e-6 the coordinate counts as
agreeing on a zero gradient: some directions are exactly flat (e.g. a conv
bias feeding a batchnorm, whose mean subtraction cancels it) and central
differences there return pure roundoff. Dropout masks are frozen for the
duration of a check (noted in the report); batchnorm runs in train mode,
whose output depends only on the batch.
"""

import numpy as np

from .layers import Dropout
from .losses import softmax_cross_entropy

REL_FLOOR = 1e-5
ZERO_ATOL = 1e-6


def _rel_error(a: float, n: float) -> float:
    if abs(a) < ZERO_ATOL and abs(n) < ZERO_ATOL:
        return 0.0
    return abs(a - n) / max(abs(a), abs(n), REL_FLOOR)


def _loss(net, x, targets, task, rng):
    if task is None:
        logits = net.forward(x, train=True, rng=rng)
    else:
        logits = net.forward(x, task, train=True, rng=rng)
    loss, grad = softmax_cross_entropy(logits, targets)
    return loss, grad


def _freeze_dropout(net, x, task, rng):
    """One training pass to materialize masks, then pin them."""
    layers = []
    seqs = [net] if not hasattr(net, "branches") else (
        [net.shared] + list(net.branches.values()))
    for seq in seqs:
        layers.extend(seq.layers)
    dropouts = [l for l in layers if isinstance(l, Dropout)]
    _loss(net, x, targets=np.zeros(x.shape[0], dtype=np.int64), task=task, rng=rng)
    frozen = []
    for layer in dropouts:
        if layer.p > 0.0:
            layer.frozen_mask = layer._cache
            frozen.append(layer.name)
    return dropouts, frozen


def check_input_gradient(net, x, targets, task=None, tol=1e-4, h=1e-5,
                         max_coords=None, rng=None):
    """Compare the analytic input gradient against central differences.

    Covers parameter-free layers (pooling, ELU, dropout, pooling heads,
    softmax) that the parameter check cannot see. Returns the max relative
    error over the probed input coordinates.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    x = np.ascontiguousarray(x, dtype=net.dtype)
    dropouts, _ = _freeze_dropout(net, x, task, rng)
    try:
        loss, dlogits = _loss(net, x, targets, task, rng)
        if task is None:
            dx = net.backward(dlogits)
        else:
            dx = net.backward(dlogits, task)
        flat = x.reshape(-1)
        n_coords = flat.size
        if max_coords is not None and n_coords > max_coords:
            stride = n_coords // max_coords
            coords = np.arange(0, n_coords, stride)[:max_coords]
        else:
            coords = np.arange(n_coords)
        worst = 0.0
        for c in coords:
            orig = flat[c]
            step = h * max(1.0, abs(float(orig)))
            flat[c] = orig + step
            lp, _ = _loss(net, x, targets, task, rng)
            flat[c] = orig - step
            lm, _ = _loss(net, x, targets, task, rng)
            flat[c] = orig
            numeric = (lp - lm) / (2.0 * step)
            worst = max(worst, _rel_error(float(dx.reshape(-1)[c]), numeric))
    finally:
        for layer in dropouts:
            layer.frozen_mask = None
    return worst


def check_gradients(net, x, targets, task=None, tol=1e-4, h=1e-5,
                    max_coords_per_param=None, rng=None):
    """Compare analytic parameter gradients against central differences.

    Returns a report dict:
        per_layer: layer name -> max relative error over its parameters
        max_rel_error, passed, frozen_dropout: the checked subset notes
    `max_coords_per_param` bounds the coordinates probed per tensor
    (deterministically strided); None checks every coordinate.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    x = np.asarray(x, dtype=net.dtype)
    dropouts, frozen = _freeze_dropout(net, x, task, rng)
    try:
        loss, dlogits = _loss(net, x, targets, task, rng)
        if task is None:
            net.backward(dlogits)
            params = net.named_params()
            grads = net.named_grads()
        else:
            net.backward(dlogits, task)
            params = net.named_params(task)
            grads = net.named_grads(task)

        per_layer = {}
        for name in sorted(grads):
            p = params[name]
            analytic = grads[name]
            flat = p.reshape(-1)
            n_coords = flat.size
            if max_coords_per_param is not None and n_coords > max_coords_per_param:
                stride = n_coords // max_coords_per_param
                coords = np.arange(0, n_coords, stride)[:max_coords_per_param]
            else:
                coords = np.arange(n_coords)
            worst = 0.0
            for c in coords:
                orig = flat[c]
                step = h * max(1.0, abs(float(orig)))
                flat[c] = orig + step
                lp, _ = _loss(net, x, targets, task, rng)
                flat[c] = orig - step
                lm, _ = _loss(net, x, targets, task, rng)
                flat[c] = orig
                numeric = (lp - lm) / (2.0 * step)
                worst = max(worst, _rel_error(float(analytic.reshape(-1)[c]), numeric))
            layer_name = name.rsplit(".", 1)[0]
            per_layer[layer_name] = max(per_layer.get(layer_name, 0.0), worst)
    finally:
        for layer in dropouts:
            layer.frozen_mask = None

    max_err = max(per_layer.values()) if per_layer else 0.0
    return {
        "per_layer": per_layer,
        "max_rel_error": max_err,
        "passed": max_err < tol,
        "tolerance": tol,
        "frozen_dropout": frozen,
    }
