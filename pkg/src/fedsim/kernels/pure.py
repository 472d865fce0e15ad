"""Pure numpy training kernels.

Reference implementation of the hot path: batched forward/backward for the
two-hidden-layer MLP and the per-client local training loop.  The compiled
backend (fedsim.kernels._speedups) implements the same functions with the
same argument conventions; fedsim.kernels picks one at import time.

Parameter layout (flat float64 vector, layer_sizes = (d, h1, h2, 1)):

    W1 (h1, d) | b1 (h1,) | W2 (h2, h1) | b2 (h2,) | W3 (1, h2) | b3 (1,)

ReLU on both hidden layers, sigmoid output.  Probabilities returned by
predict_proba are clipped to [1e-12, 1 - 1e-12] so downstream log-loss is
always finite; gradients are computed from the unclipped sigmoid.
"""

from __future__ import annotations

import numpy as np

name = "pure"

PROB_CLIP = 1e-12


def param_count(layer_sizes) -> int:
    d, h1, h2, out = layer_sizes
    if out != 1:
        raise ValueError(f"output width must be 1, got {out}")
    return h1 * d + h1 + h2 * h1 + h2 + h2 * out + out


def param_views(theta: np.ndarray, layer_sizes):
    """Views (W1, b1, W2, b2, W3, b3) into a flat parameter vector."""
    d, h1, h2, _ = layer_sizes
    o = 0
    w1 = theta[o:o + h1 * d].reshape(h1, d)
    o += h1 * d
    b1 = theta[o:o + h1]
    o += h1
    w2 = theta[o:o + h2 * h1].reshape(h2, h1)
    o += h2 * h1
    b2 = theta[o:o + h2]
    o += h2
    w3 = theta[o:o + h2].reshape(1, h2)
    o += h2
    b3 = theta[o:o + 1]
    return w1, b1, w2, b2, w3, b3


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # Branch on sign to avoid overflow in exp.
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _forward(theta, layer_sizes, X):
    """Activations (a1, a2, p_raw) for a batch; p_raw is the raw sigmoid."""
    w1, b1, w2, b2, w3, b3 = param_views(theta, layer_sizes)
    a1 = np.maximum(X @ w1.T + b1, 0.0)
    a2 = np.maximum(a1 @ w2.T + b2, 0.0)
    z3 = a2 @ w3.T + b3
    return a1, a2, _sigmoid(z3[:, 0])


def predict_proba(theta, layer_sizes, X) -> np.ndarray:
    _, _, p = _forward(theta, layer_sizes, X)
    return np.clip(p, PROB_CLIP, 1.0 - PROB_CLIP)


def batch_gradient(theta, layer_sizes, X, y) -> np.ndarray:
    """Mean gradient of clamped BCE over the batch, flat, same layout as theta."""
    w1, b1, w2, b2, w3, b3 = param_views(theta, layer_sizes)
    a1, a2, p = _forward(theta, layer_sizes, X)
    m = X.shape[0]

    # Fused sigmoid+BCE residual.
    r3 = p - y
    d2 = np.outer(r3, w3[0])
    d2[a2 <= 0.0] = 0.0
    d1 = d2 @ w2
    d1[a1 <= 0.0] = 0.0

    grad = np.empty_like(theta)
    gw1, gb1, gw2, gb2, gw3, gb3 = param_views(grad, layer_sizes)
    gw3[0] = r3 @ a2 / m
    gb3[0] = r3.sum() / m
    gw2[:] = d2.T @ a1 / m
    gb2[:] = d2.sum(axis=0) / m
    gw1[:] = d1.T @ X / m
    gb1[:] = d1.sum(axis=0) / m
    return grad


def check_perms(perms, n_rows) -> np.ndarray:
    """Validate per-epoch visit orders: shape (E, n_rows), indices in range."""
    perms = np.ascontiguousarray(perms, dtype=np.int64)
    if perms.ndim != 2 or perms.shape[1] != n_rows:
        raise ValueError(
            f"perms must have shape (epochs, {n_rows}), got {perms.shape}")
    if perms.size and (perms.min() < 0 or perms.max() >= n_rows):
        raise ValueError("perm indices out of range")
    return perms


def train_epochs(theta, layer_sizes, X, y, perms, batch_size,
                 optimizer, eta, beta1=0.9, beta2=0.999, eps=1e-8) -> np.ndarray:
    """Run len(perms) epochs of mini-batch training on a fresh copy of theta.

    perms[e] is the (seeded) visit order for epoch e; batches are consecutive
    slices of it, the last one possibly short.  Optimizer state starts fresh.
    Returns the trained parameter vector; the input is left untouched.
    """
    if optimizer not in ("adam", "sgd"):
        raise ValueError(f"unknown optimizer {optimizer!r}")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    theta = np.array(theta, dtype=np.float64)
    m = X.shape[0]
    perms = check_perms(perms, m)
    use_adam = optimizer == "adam"
    if use_adam:
        mom = np.zeros_like(theta)
        vel = np.zeros_like(theta)
        b1t = 1.0
        b2t = 1.0
    for e in range(perms.shape[0]):
        order = perms[e]
        for start in range(0, m, batch_size):
            idx = order[start:start + batch_size]
            g = batch_gradient(theta, layer_sizes, X[idx], y[idx])
            if use_adam:
                mom = beta1 * mom + (1.0 - beta1) * g
                vel = beta2 * vel + (1.0 - beta2) * g * g
                b1t *= beta1
                b2t *= beta2
                mhat = mom / (1.0 - b1t)
                vhat = vel / (1.0 - b2t)
                theta -= eta * mhat / (np.sqrt(vhat) + eps)
            else:
                theta -= eta * g
    return theta
