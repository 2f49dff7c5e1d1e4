"""Central finite-difference verification of the analytic gradients."""

from __future__ import annotations

import numpy as np

from .arch import Network
from .layers import orientation_loss, weighted_softmax_loss


def _total_loss(net: Network, x, labels, heading, class_weights, lam):
    out = net.forward(x)
    loss, _ = weighted_softmax_loss(out["seg"], labels, class_weights)
    if net.has_heads and heading is not None:
        oloss, _, _ = orientation_loss(out["sin"], out["cos"], heading, lam)
        loss += oloss
    return loss


def gradient_check(net: Network, x, labels, heading=None,
                   class_weights=(1.0, 3.0), lam=1.0,
                   n_samples: int = 60, eps: float = 1e-5,
                   rng_seed: int = 0) -> float:
    """Max relative error between analytic and numeric parameter gradients.

    Checks a random subset of entries of every learnable tensor. Nets should
    be built with dtype float64; float32 cannot resolve central differences
    at the 1e-4 level.
    """
    rng = np.random.default_rng(rng_seed)
    out = net.forward(x)
    loss, dseg = weighted_softmax_loss(out["seg"], labels, class_weights)
    grads = {"seg": dseg}
    if net.has_heads and heading is not None:
        _, dsin, dcos = orientation_loss(out["sin"], out["cos"], heading, lam)
        grads["sin"] = dsin
        grads["cos"] = dcos
    net.zero_grads()
    net.backward(grads)

    worst = 0.0
    for _, arr, grad in net.param_arrays():
        flat_a = arr.ravel()
        flat_g = grad.ravel()
        n = min(n_samples, flat_a.size)
        idx = rng.choice(flat_a.size, size=n, replace=False)
        for i in idx:
            orig = flat_a[i]
            step = eps * max(1.0, abs(orig))
            flat_a[i] = orig + step
            lp = _total_loss(net, x, labels, heading, class_weights, lam)
            flat_a[i] = orig - step
            lm = _total_loss(net, x, labels, heading, class_weights, lam)
            flat_a[i] = orig
            numeric = (lp - lm) / (2 * step)
            denom = max(abs(numeric), abs(flat_g[i]), 1e-8)
            worst = max(worst, abs(numeric - flat_g[i]) / denom)
    return worst
