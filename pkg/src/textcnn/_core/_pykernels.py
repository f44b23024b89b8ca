"""Numpy implementation of the convolution kernels."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv_pool(X, W, b):
    """Valid stride-1 convolution of one bank over ``X`` plus ReLU and global max pool.

    X: (N, D), W: (K, H, D), b: (K,).
    Returns pre-activations (P, K), pooled values (K,) and argmax positions (K,)
    with P = N - H + 1. Pooling takes the max of the rectified outputs; ties go
    to the smallest position.
    """
    K, H, D = W.shape
    N = X.shape[0]
    if H > N:
        raise ValueError(f"kernel height {H} exceeds sequence length {N}")
    P = N - H + 1
    windows = sliding_window_view(X, (H, D))[:, 0].reshape(P, H * D)
    pre = windows @ W.reshape(K, H * D).T + b
    post = np.maximum(pre, 0.0)
    argmax = post.argmax(axis=0)
    pooled = post[argmax, np.arange(K)]
    return pre, pooled, argmax


def conv_backward(X, W, argmax, grad_pre, dW, db, dX):
    """Accumulate gradients of one bank given d(loss)/d(pre-activation at argmax).

    ``grad_pre`` (K,) must already be gated by the ReLU. ``dW``, ``db`` and
    ``dX`` are updated in place.
    """
    K, H, D = W.shape
    rows = argmax[:, None] + np.arange(H)
    dW += grad_pre[:, None, None] * X[rows]
    db += grad_pre
    np.add.at(dX, rows.ravel(), (grad_pre[:, None, None] * W).reshape(K * H, D))
