"""Frame codec for the wire protocol (server side).

Tensors travel as base64 of row-major little-endian float32 bytes; the
encoding round-trips bit-exactly.
"""

from __future__ import annotations

import base64
import json

import numpy as np

PROTOCOL_VERSION = 1


def hello_frame(capabilities: tuple[str, ...]) -> str:
    return json.dumps(
        {"op": "hello", "version": PROTOCOL_VERSION, "capabilities": list(capabilities)}
    )


def error_frame(request_id: int, kind: str, msg: str) -> str:
    return json.dumps({"id": int(request_id), "error": {"kind": kind, "msg": msg}})


def logits_frame(request_id: int, logits) -> str:
    return json.dumps({"id": int(request_id), "logits": [float(v) for v in logits]})


def grad_frame(request_id: int, grad: np.ndarray) -> str:
    return json.dumps({"id": int(request_id), "grad": encode_f32(grad)})


def encode_f32(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f4").tobytes()).decode("ascii")


def decode_image(frame: dict) -> np.ndarray:
    h, w = int(frame["h"]), int(frame["w"])
    raw = base64.b64decode(frame["image"].encode("ascii"))
    arr = np.frombuffer(raw, dtype="<f4")
    if arr.size != h * w * 3:
        raise ValueError(f"image payload has {arr.size} floats, expected {h * w * 3}")
    return arr.reshape(h, w, 3).copy()
