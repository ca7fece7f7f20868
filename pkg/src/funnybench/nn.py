"""Minimal CNN layers with manual backprop.

Stored weights are float32.  The working dtype follows the input: inference
and explanation paths feed float64 activations (gradients then survive tight
finite-difference checks), while the training loop feeds float32 batches for
speed.  Loss reductions always accumulate in float64.  Layout is NHWC.
"""

from __future__ import annotations

import numpy as np

F32 = np.float32
F64 = np.float64


def _mm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matmul in the promoted dtype of the operands."""
    return a @ b


def im2col3(x: np.ndarray) -> np.ndarray:
    """Extract 3x3 patches (pad 1, stride 1): (B,H,W,C) -> (B,H,W,9*C).

    Column blocks are ordered (ky, kx, channel), channel fastest.
    """
    b, h, w, c = x.shape
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = np.empty((b, h, w, 9 * c), dtype=x.dtype)
    k = 0
    for ky in range(3):
        for kx in range(3):
            cols[..., k * c:(k + 1) * c] = padded[:, ky:ky + h, kx:kx + w, :]
            k += 1
    return cols


def col2im3(cols: np.ndarray, c: int) -> np.ndarray:
    """Adjoint of im2col3: scatter-add (B,H,W,9*C) patches back to (B,H,W,C)."""
    b, h, w, _ = cols.shape
    out = np.zeros((b, h + 2, w + 2, c), dtype=cols.dtype)
    k = 0
    for ky in range(3):
        for kx in range(3):
            out[:, ky:ky + h, kx:kx + w, :] += cols[..., k * c:(k + 1) * c]
            k += 1
    return out[:, 1:h + 1, 1:w + 1, :]


def conv3_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """3x3 same conv. w: (9*Cin, Cout), b: (Cout,)."""
    bsz, h, wd, _ = x.shape
    cols = im2col3(x)
    out = _mm(cols.reshape(-1, cols.shape[-1]), w) + b
    return out.reshape(bsz, h, wd, -1), cols


def conv3_backward(dout: np.ndarray, cols: np.ndarray, w: np.ndarray, c_in: int,
                   need_dx: bool = True):
    bsz, h, wd, c_out = dout.shape
    dflat = dout.reshape(-1, c_out)
    cflat = cols.reshape(-1, cols.shape[-1])
    dw = _mm(cflat.T, dflat)
    db = np.sum(dflat, axis=0, dtype=F64)
    dx = None
    if need_dx:
        dcols = _mm(dflat, w.T).reshape(bsz, h, wd, -1)
        dx = col2im3(dcols, c_in)
    return dx, dw, db


def relu_forward(x: np.ndarray):
    return np.maximum(x, 0), x > 0


def relu_backward(dout: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return dout * mask


def _pool_views(x: np.ndarray):
    # the four window positions in row-major order (ties go to the first)
    return (x[:, 0::2, 0::2, :], x[:, 0::2, 1::2, :],
            x[:, 1::2, 0::2, :], x[:, 1::2, 1::2, :])


def maxpool2_forward(x: np.ndarray):
    """2x2 max pooling, stride 2. Ties resolve to the first window position."""
    views = _pool_views(x)
    out = np.maximum(np.maximum(views[0], views[1]), np.maximum(views[2], views[3]))
    return out, (x, out)


def maxpool2_backward(dout: np.ndarray, cache) -> np.ndarray:
    x, out = cache
    dx = np.zeros_like(x)
    dviews = _pool_views(dx)
    taken = np.zeros(out.shape, dtype=bool)
    for view, dview in zip(_pool_views(x), dviews):
        hit = (view == out) & ~taken
        dview += np.where(hit, dout, 0)
        taken |= hit
    return dx


def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    return _mm(x, w) + b, x


def dense_backward(dout: np.ndarray, x: np.ndarray, w: np.ndarray):
    dw = _mm(x.T, dout)
    db = np.sum(dout, axis=0, dtype=F64)
    dx = _mm(dout, w.T)
    return dx, dw, db


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax in float64."""
    z = logits.astype(np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def multilabel_ce(logits: np.ndarray, target_matrix: np.ndarray):
    """Mean cross-entropy against a row-stochastic target matrix.

    For a sample with valid target set T, the row holds 1/|T| on each member,
    so the loss is the mean over T of the standard cross-entropy and the
    gradient is softmax - mean-one-hot.
    """
    probs = softmax(logits)
    logp = np.log(np.clip(probs, 1e-300, None))
    n = logits.shape[0]
    loss = float(-(target_matrix * logp).sum() / n)
    dlogits = (probs - target_matrix) / n
    return loss, dlogits
