"""Synchronous single-request responder over stdio or TCP.

One request is processed at a time; every parseable request id is answered
exactly once and in order.  Bad frames yield kind "bad_request", model
exceptions yield kind "model_error".
"""

from __future__ import annotations

import json
import socket
import sys
from dataclasses import dataclass

import numpy as np

from .protocol import decode_image, error_frame, grad_frame, hello_frame, logits_frame


@dataclass(frozen=True)
class BridgeConfig:
    """How to listen and what to serve.

    `capabilities` may restrict what the model offers but never extends it:
    gradient is advertised only when the wrapped model actually implements
    input gradients.
    """

    mode: str  # "stdio" | "tcp"
    host: str = "127.0.0.1"
    port: int = 0
    resolution: int | None = None  # validate request sizes when set
    capabilities: tuple[str, ...] | None = None  # None -> auto-detect


def detect_capabilities(model, requested: tuple[str, ...] | None) -> tuple[str, ...]:
    supported = ["predict"]
    if getattr(model, "input_gradient", None) is not None:
        supported.append("gradient")
    if requested is None:
        return tuple(supported)
    bogus = set(requested) - set(supported)
    if bogus:
        raise ValueError(
            f"cannot advertise {sorted(bogus)}: the wrapped model does not support them"
        )
    if "predict" not in requested:
        raise ValueError("the predict capability is mandatory")
    return tuple(requested)


def _handle_line(line: str, model, capabilities: tuple[str, ...], config: BridgeConfig) -> str:
    try:
        frame = json.loads(line)
        if not isinstance(frame, dict):
            raise ValueError("frame is not an object")
    except (json.JSONDecodeError, ValueError) as exc:
        return error_frame(0, "bad_request", f"malformed frame: {exc}")
    request_id = frame.get("id", 0)
    if not isinstance(request_id, int):
        return error_frame(0, "bad_request", "id must be an integer")
    op = frame.get("op")
    if op not in ("predict", "gradient"):
        return error_frame(request_id, "bad_request", f"unknown op {op!r}")
    if op == "gradient" and "gradient" not in capabilities:
        return error_frame(request_id, "bad_request", "gradient capability not offered")
    try:
        image = decode_image(frame)
    except (KeyError, ValueError, TypeError) as exc:
        return error_frame(request_id, "bad_request", f"bad image payload: {exc}")
    if config.resolution is not None and image.shape[:2] != (config.resolution, config.resolution):
        return error_frame(
            request_id, "bad_request",
            f"image is {image.shape[0]}x{image.shape[1]}, bridge serves "
            f"{config.resolution}x{config.resolution}",
        )
    try:
        if op == "predict":
            logits = np.asarray(model.predict(image), dtype=np.float64)
            return logits_frame(request_id, logits)
        target = frame.get("target")
        if not isinstance(target, int):
            return error_frame(request_id, "bad_request", "gradient request needs an integer target")
        grad = np.asarray(model.input_gradient(image, target))
        if grad.shape != image.shape:
            return error_frame(
                request_id, "model_error",
                f"model returned gradient of shape {grad.shape}, expected {image.shape}",
            )
        return grad_frame(request_id, grad)
    except Exception as exc:  # the model is arbitrary user code
        return error_frame(request_id, "model_error", f"{type(exc).__name__}: {exc}")


def _serve_stream(reader, writer, model, capabilities, config: BridgeConfig) -> None:
    writer.write(hello_frame(capabilities) + "\n")
    writer.flush()
    for line in reader:
        if not line.strip():
            continue
        writer.write(_handle_line(line, model, capabilities, config) + "\n")
        writer.flush()


def serve(model, config: BridgeConfig) -> None:
    """Serve `model` until the peer disconnects (stdio) or forever (TCP)."""
    capabilities = detect_capabilities(model, config.capabilities)
    if config.mode == "stdio":
        _serve_stream(sys.stdin, sys.stdout, model, capabilities, config)
        return
    if config.mode != "tcp":
        raise ValueError(f"unknown mode {config.mode!r}")
    sock = socket.socket()
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    sock.bind((config.host, config.port))
    sock.listen(1)
    actual = sock.getsockname()
    print(f"listening on {actual[0]}:{actual[1]}", file=sys.stderr, flush=True)
    try:
        while True:
            conn, _ = sock.accept()
            fh = conn.makefile("rw", encoding="utf-8", newline="\n")
            try:
                _serve_stream(fh, fh, model, capabilities, config)
            except (BrokenPipeError, ConnectionResetError):
                pass
            finally:
                fh.close()
                conn.close()
    finally:
        sock.close()
