"""Network layers: forward passes plus hand-derived gradients.

Every `<op>` returns `(y, cache)` and has a matching `<op>_grad(cache, dy)`
returning the gradients of the scalar sum(y * dy) with respect to the
inputs of that same forward call. Caches are plain tuples of whatever the
backward pass needs (saved inputs, argmax indices, dropout masks, ...).

Convolution is evaluated as one im2col GEMM per call; the column matrix
is kept in the cache because the weight gradient reuses it. All functions
preserve the dtype of their inputs, so the float64 gradient checks run
through the exact same code as float32 training.
"""

import numpy as np
from dataclasses import dataclass
from scipy.special import expit

__all__ = [
    "BatchNormState",
    "conv2d",
    "conv2d_grad",
    "batchnorm",
    "batchnorm_grad",
    "relu",
    "relu_grad",
    "sigmoid",
    "sigmoid_grad",
    "maxpool2",
    "maxpool2_grad",
    "upsample2",
    "upsample2_grad",
    "dropout",
    "dropout_grad",
    "gate_merge",
    "gate_merge_grad",
    "fully_connected",
    "fully_connected_grad",
]


# ---------------------------------------------------------------------------
# convolution (3x3 same-padding, or 1x1 for the output head)

def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Same-size convolution of [Cin,H,W] with [Cout,Cin,k,k], k in {1,3}."""
    cout, cin, k, k2 = w.shape
    if k != k2 or k not in (1, 3):
        raise ValueError(f"kernel must be 1x1 or 3x3, got {k}x{k2}")
    if x.ndim != 3 or x.shape[0] != cin:
        raise ValueError(f"input channels {x.shape} do not match kernel {w.shape}")
    if b.shape != (cout,):
        raise ValueError(f"bias shape {b.shape} does not match {cout} filters")
    h, wd = x.shape[1], x.shape[2]
    if k == 1:
        cols = x.reshape(cin, h * wd).T
    else:
        xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
        win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
        cols = np.ascontiguousarray(win.transpose(1, 2, 0, 3, 4)).reshape(h * wd, cin * k * k)
    y = cols @ w.reshape(cout, -1).T
    y += b
    y = y.T.reshape(cout, h, wd)
    cache = (cols, w, x.shape, x.dtype)
    return y, cache


def conv2d_grad(cache, dy: np.ndarray):
    cols, w, x_shape, dtype = cache
    cout, cin, k, _ = w.shape
    h, wd = x_shape[1], x_shape[2]
    if dy.shape != (cout, h, wd):
        raise ValueError(f"dy shape {dy.shape} does not match output ({cout},{h},{wd})")
    dy2 = dy.reshape(cout, h * wd)
    db = dy2.sum(axis=1)
    dw = (dy2 @ cols).reshape(w.shape)
    dcols = dy2.T @ w.reshape(cout, -1)
    if k == 1:
        dx = dcols.T.reshape(x_shape).copy()
    else:
        dxp = np.zeros((cin, h + 2, wd + 2), dtype=dtype)
        dc = dcols.reshape(h, wd, cin, k, k)
        for di in range(k):
            for dj in range(k):
                dxp[:, di:di + h, dj:dj + wd] += dc[:, :, :, di, dj].transpose(2, 0, 1)
        dx = dxp[:, 1:1 + h, 1:1 + wd].copy()
    return dx, dw, db


# ---------------------------------------------------------------------------
# batch normalization

@dataclass
class BatchNormState:
    """Per-channel affine parameters plus running statistics.

    The arrays are aliased into the model's weight store, so in-place
    updates of the running statistics during train-mode forwards persist.
    """
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5


def batchnorm(x: np.ndarray, state: BatchNormState, mode: str):
    """Normalize [N,C,H,W] per channel; train mode updates running stats."""
    if x.ndim != 4 or x.shape[1] != state.gamma.shape[0]:
        raise ValueError(f"batchnorm input {x.shape} does not match {state.gamma.shape[0]} channels")
    if mode == "train":
        mu = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        m = state.momentum
        state.running_mean[...] = (1.0 - m) * state.running_mean + m * mu
        state.running_var[...] = (1.0 - m) * state.running_var + m * var
    elif mode == "infer":
        mu = state.running_mean.astype(x.dtype)
        var = state.running_var.astype(x.dtype)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    inv = 1.0 / np.sqrt(var + state.eps)
    xhat = (x - mu[None, :, None, None]) * inv[None, :, None, None]
    y = state.gamma[None, :, None, None] * xhat + state.beta[None, :, None, None]
    cache = (xhat, inv.astype(x.dtype), state.gamma, mode)
    return y, cache


def batchnorm_grad(cache, dy: np.ndarray):
    """Gradients (dx, dgamma, dbeta) for the matching batchnorm forward."""
    xhat, inv, gamma, mode = cache
    if dy.shape != xhat.shape:
        raise ValueError(f"dy shape {dy.shape} does not match {xhat.shape}")
    dgamma = (dy * xhat).sum(axis=(0, 2, 3))
    dbeta = dy.sum(axis=(0, 2, 3))
    dxhat = dy * gamma[None, :, None, None]
    if mode == "infer":
        dx = dxhat * inv[None, :, None, None]
        return dx, dgamma, dbeta
    n = xhat.shape[0] * xhat.shape[2] * xhat.shape[3]
    s1 = dxhat.sum(axis=(0, 2, 3))
    s2 = (dxhat * xhat).sum(axis=(0, 2, 3))
    dx = (inv / n)[None, :, None, None] * (
        n * dxhat - s1[None, :, None, None] - xhat * s2[None, :, None, None]
    )
    return dx, dgamma, dbeta


# ---------------------------------------------------------------------------
# activations

def relu(x: np.ndarray):
    return np.maximum(x, 0), (x > 0)


def relu_grad(cache, dy: np.ndarray):
    return dy * cache


def sigmoid(x: np.ndarray):
    y = expit(x)
    return y, y


def sigmoid_grad(cache, dy: np.ndarray):
    y = cache
    return dy * y * (1.0 - y)


# ---------------------------------------------------------------------------
# resolution changes

def maxpool2(x: np.ndarray):
    """2x2 max pooling; ties go to the first position in row-major order."""
    if x.ndim != 3:
        raise ValueError("maxpool2 needs a rank-3 [C,H,W] tensor")
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"spatial dims must be even, got {h}x{w}")
    win = x.reshape(c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1)
    y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return y, (idx, x.shape)


def maxpool2_grad(cache, dy: np.ndarray):
    idx, x_shape = cache
    c, h, w = x_shape
    if dy.shape != (c, h // 2, w // 2):
        raise ValueError(f"dy shape {dy.shape} does not match pooled ({c},{h//2},{w//2})")
    dwin = np.zeros((c, h // 2, w // 2, 4), dtype=dy.dtype)
    np.put_along_axis(dwin, idx[..., None], dy[..., None], axis=-1)
    return dwin.reshape(c, h // 2, w // 2, 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h, w).copy()


def upsample2(x: np.ndarray) -> np.ndarray:
    """Nearest-neighbor 2x upsampling: each pixel becomes a 2x2 block."""
    c, h, w = x.shape
    return np.broadcast_to(x[:, :, None, :, None], (c, h, 2, w, 2)).reshape(c, 2 * h, 2 * w)


def upsample2_grad(dy: np.ndarray) -> np.ndarray:
    c, h2, w2 = dy.shape
    return dy.reshape(c, h2 // 2, 2, w2 // 2, 2).sum(axis=(2, 4))


# ---------------------------------------------------------------------------
# regularization and fusion

def dropout(x: np.ndarray, rate: float, mode: str, rng: np.random.Generator):
    """Inverted dropout: survivors are scaled by 1/(1-rate) at train time."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0,1), got {rate}")
    if mode == "infer":
        return x, (None, rate)
    mask = rng.random(x.shape) >= rate
    y = x * mask
    if rate > 0.0:
        y /= (1.0 - rate)
    return y, (mask, rate)


def dropout_grad(cache, dy: np.ndarray):
    mask, rate = cache
    if mask is None:
        return dy
    dx = dy * mask
    if rate > 0.0:
        dx /= (1.0 - rate)
    return dx


def gate_merge(fmaps: np.ndarray, gate: np.ndarray):
    """Scale each feature map by its gate value (one scalar per channel)."""
    if gate.ndim != 1 or fmaps.ndim != 3 or gate.shape[0] != fmaps.shape[0]:
        raise ValueError(f"gate length {gate.shape} does not match maps {fmaps.shape}")
    y = fmaps * gate[:, None, None]
    return y, (fmaps, gate)


def gate_merge_grad(cache, dy: np.ndarray):
    fmaps, gate = cache
    d_fmaps = dy * gate[:, None, None]
    d_gate = (fmaps * dy).sum(axis=(1, 2))
    return d_fmaps, d_gate


def fully_connected(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """y = w @ x + b for a rank-1 input."""
    if x.ndim != 1 or w.ndim != 2 or w.shape[1] != x.shape[0]:
        raise ValueError(f"fc shapes disagree: x {x.shape}, w {w.shape}")
    if b.shape != (w.shape[0],):
        raise ValueError(f"fc bias {b.shape} does not match {w.shape[0]} outputs")
    return w @ x + b, (x, w)


def fully_connected_grad(cache, dy: np.ndarray):
    x, w = cache
    if dy.shape != (w.shape[0],):
        raise ValueError(f"dy shape {dy.shape} does not match {w.shape[0]} outputs")
    return w.T @ dy, np.outer(dy, x), dy.copy()
