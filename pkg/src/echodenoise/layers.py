"""Small numpy layers with explicit backward passes, operating on H x W x C grids.

Convolutions wrap around in the column (azimuth) direction and zero-pad in
the row direction.
"""

import numpy as np

LEAKY_SLOPE = 0.1


def _pad(x):
    xp = np.pad(x, ((1, 1), (0, 0), (0, 0)))
    return np.concatenate([xp[:, -1:], xp, xp[:, :1]], axis=1)


def conv3x3(x, w, b):
    """x: (H, W, Cin), w: (9*Cin, Cout), b: (Cout,)."""
    H, W, C = x.shape
    xp = _pad(x)
    cols = np.empty((H, W, 9, C))
    for t in range(9):
        dy, dx = divmod(t, 3)
        cols[:, :, t] = xp[dy : dy + H, dx : dx + W]
    cols = cols.reshape(H * W, 9 * C)
    out = cols @ w + b
    return out.reshape(H, W, -1), (cols, x.shape)


def conv3x3_backward(dout, w, cache):
    cols, (H, W, C) = cache
    d2 = dout.reshape(H * W, -1)
    dw = cols.T @ d2
    db = d2.sum(axis=0)
    dcols = (d2 @ w.T).reshape(H, W, 9, C)
    dxp = np.zeros((H + 2, W + 2, C))
    for t in range(9):
        dy, dx = divmod(t, 3)
        dxp[dy : dy + H, dx : dx + W] += dcols[:, :, t]
    dx = dxp[1:-1, 1:-1].copy()
    dx[:, -1] += dxp[1:-1, 0]
    dx[:, 0] += dxp[1:-1, -1]
    return dx, dw, db


def dense(x, w, b=None):
    H, W, C = x.shape
    out = x.reshape(H * W, C) @ w
    if b is not None:
        out = out + b
    return out.reshape(H, W, -1), x


def dense_backward(dout, w, x):
    H, W, C = x.shape
    d2 = dout.reshape(H * W, -1)
    dw = x.reshape(H * W, C).T @ d2
    dx = (d2 @ w.T).reshape(H, W, C)
    return dx, dw, d2.sum(axis=0)


def activate(z, kind):
    if kind == "leaky_relu":
        return np.where(z > 0, z, LEAKY_SLOPE * z)
    if kind == "tanh":
        return np.tanh(z)
    if kind == "softplus":
        return softplus(z)
    raise ValueError(f"unknown activation {kind!r}")


def activate_backward(dout, z, kind):
    if kind == "leaky_relu":
        return np.where(z > 0, dout, LEAKY_SLOPE * dout)
    if kind == "tanh":
        return dout * (1.0 - np.tanh(z) ** 2)
    if kind == "softplus":
        return dout * sigmoid(z)
    raise ValueError(f"unknown activation {kind!r}")


def softplus(z):
    return np.logaddexp(0.0, z)


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))
