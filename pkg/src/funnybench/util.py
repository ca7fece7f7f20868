"""Small shared helpers: stable seed derivation, canonical JSON, bilinear resize."""

from __future__ import annotations

import hashlib
import json

import numpy as np


def derive_seed(*parts) -> int:
    """Derive a 64-bit seed from arbitrary labels via SHA-256.

    Stable across platforms and interpreter versions, so per-sample seeds
    computed as derive_seed(global_seed, split, index) never drift.
    """
    text = ":".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def canonical_json(obj) -> str:
    """Serialize to a canonical JSON string (sorted keys, no whitespace).

    Floats go through Python's repr, which round-trips exactly.
    """
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def canonical_json_bytes(obj) -> bytes:
    return (canonical_json(obj) + "\n").encode("utf-8")


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def bilinear_resize(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear upsampling of a 2D array with half-pixel-center alignment.

    Output pixel (i, j) samples the input at ((i + 0.5) * h/out_h - 0.5,
    (j + 0.5) * w/out_w - 0.5), clamped at the borders.
    """
    arr = np.asarray(arr, dtype=np.float64)
    h, w = arr.shape
    if (h, w) == (out_h, out_w):
        return arr.copy()
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = arr[np.ix_(y0, x0)] * (1 - wx) + arr[np.ix_(y0, x1)] * wx
    bot = arr[np.ix_(y1, x0)] * (1 - wx) + arr[np.ix_(y1, x1)] * wx
    return top * (1 - wy) + bot * wy
