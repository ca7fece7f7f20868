"""Wire protocol client for external models.

Newline-delimited JSON frames over stdio or TCP.  The server sends a hello
frame on connect announcing its protocol version and capabilities:

    {"op": "hello", "version": 1, "capabilities": ["predict", "gradient"]}

Requests carry a u64 id echoed in the response:

    {"id": 1, "op": "predict", "image": <b64 f32 HxWx3>, "h": H, "w": W}
        -> {"id": 1, "logits": [...]}
    {"id": 2, "op": "gradient", "image": ..., "h": H, "w": W, "target": 3}
        -> {"id": 2, "grad": <b64 f32 HxWx3>}

Errors come back as {"id": n, "error": {"kind": str, "msg": str}}.  One
request is in flight per connection at a time.
"""

from __future__ import annotations

import base64
import json
import shlex
import socket
import subprocess

import numpy as np

from .model import ModelBase, UnsupportedCapabilityError

PROTOCOL_VERSION = 1


class WireError(RuntimeError):
    """Base class for wire protocol failures."""


class HandshakeError(WireError):
    """Missing hello frame or protocol version mismatch."""


class WireTimeoutError(WireError):
    """The peer did not answer in time."""


class MalformedFrameError(WireError):
    """A frame was not valid JSON or lacked required fields."""


class RemoteModelError(WireError):
    """The peer answered with an error frame."""

    def __init__(self, kind: str, msg: str):
        super().__init__(f"{kind}: {msg}")
        self.kind = kind


def encode_f32(arr: np.ndarray) -> str:
    """Base64 of row-major little-endian float32 bytes (bit-exact round trip)."""
    data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return base64.b64encode(data).decode("ascii")


def decode_f32(text: str, shape) -> np.ndarray:
    data = base64.b64decode(text.encode("ascii"))
    arr = np.frombuffer(data, dtype="<f4")
    expected = int(np.prod(shape))
    if arr.size != expected:
        raise MalformedFrameError(f"tensor payload has {arr.size} floats, expected {expected}")
    return arr.reshape(shape).copy()


class _Transport:
    def send_line(self, line: str) -> None:
        raise NotImplementedError

    def recv_line(self) -> str:
        raise NotImplementedError

    def close(self) -> None:
        pass


class _TcpTransport(_Transport):
    def __init__(self, host: str, port: int, timeout: float):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.sock.settimeout(timeout)
        self._file = self.sock.makefile("rwb")

    def send_line(self, line: str) -> None:
        self._file.write(line.encode("utf-8") + b"\n")
        self._file.flush()

    def recv_line(self) -> str:
        try:
            line = self._file.readline()
        except socket.timeout as exc:
            raise WireTimeoutError("timed out waiting for a frame") from exc
        if not line:
            raise WireError("connection closed by peer")
        return line.decode("utf-8")

    def close(self) -> None:
        try:
            self._file.close()
        finally:
            self.sock.close()


class _StdioTransport(_Transport):
    def __init__(self, command: str, timeout: float):
        self.timeout = timeout
        self.proc = subprocess.Popen(
            shlex.split(command),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
        )

    def send_line(self, line: str) -> None:
        assert self.proc.stdin is not None
        self.proc.stdin.write(line.encode("utf-8") + b"\n")
        self.proc.stdin.flush()

    def recv_line(self) -> str:
        assert self.proc.stdout is not None
        line = self.proc.stdout.readline()
        if not line:
            raise WireError("bridge process closed its stdout")
        return line.decode("utf-8")

    def close(self) -> None:
        if self.proc.stdin:
            self.proc.stdin.close()
        self.proc.terminate()
        try:
            self.proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self.proc.kill()


class ExternalModel(ModelBase):
    """Model proxied over the wire protocol (predict and optionally gradient)."""

    activations = False

    def __init__(self, transport: _Transport):
        self._transport = transport
        self._next_id = 1
        hello = self._read_frame()
        if hello.get("op") != "hello":
            raise HandshakeError(f"expected hello frame, got {hello!r}")
        if hello.get("version") != PROTOCOL_VERSION:
            raise HandshakeError(
                f"protocol version mismatch: peer speaks {hello.get('version')}, "
                f"client speaks {PROTOCOL_VERSION}"
            )
        self.capabilities = tuple(hello.get("capabilities", ()))
        if "predict" not in self.capabilities:
            raise HandshakeError("peer does not offer the predict capability")
        self.gradients = "gradient" in self.capabilities

    def _read_frame(self) -> dict:
        line = self._transport.recv_line()
        try:
            frame = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedFrameError(f"invalid JSON frame: {line[:200]!r}") from exc
        if not isinstance(frame, dict):
            raise MalformedFrameError(f"frame is not an object: {line[:200]!r}")
        return frame

    def _roundtrip(self, request: dict) -> dict:
        request_id = self._next_id
        self._next_id += 1
        request["id"] = request_id
        self._transport.send_line(json.dumps(request))
        response = self._read_frame()
        if response.get("id") != request_id:
            raise MalformedFrameError(
                f"response id {response.get('id')} does not match request id {request_id}"
            )
        if "error" in response:
            err = response["error"]
            raise RemoteModelError(str(err.get("kind", "unknown")), str(err.get("msg", "")))
        return response

    def predict_logits(self, image: np.ndarray) -> np.ndarray:
        image = np.asarray(image, dtype=np.float32)
        h, w, _ = image.shape
        response = self._roundtrip(
            {"op": "predict", "image": encode_f32(image), "h": h, "w": w}
        )
        if "logits" not in response:
            raise MalformedFrameError("predict response lacks logits")
        return np.asarray(response["logits"], dtype=np.float64)

    def input_gradient(self, image: np.ndarray, target: int) -> np.ndarray:
        if not self.gradients:
            raise UnsupportedCapabilityError("external model does not offer gradients")
        image = np.asarray(image, dtype=np.float32)
        h, w, _ = image.shape
        response = self._roundtrip(
            {"op": "gradient", "image": encode_f32(image), "h": h, "w": w, "target": int(target)}
        )
        if "grad" not in response:
            raise MalformedFrameError("gradient response lacks grad")
        return decode_f32(response["grad"], (h, w, 3)).astype(np.float64)

    def close(self) -> None:
        self._transport.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def connect_external(endpoint: str, timeout: float = 60.0) -> ExternalModel:
    """Connect to an external model.

    Endpoints: "tcp://host:port" or "stdio:<command line>" (spawns the
    command and speaks the protocol over its stdin/stdout).
    """
    if endpoint.startswith("tcp://"):
        rest = endpoint[len("tcp://"):]
        host, _, port = rest.rpartition(":")
        if not host or not port.isdigit():
            raise ValueError(f"malformed tcp endpoint {endpoint!r}")
        try:
            transport = _TcpTransport(host, int(port), timeout)
        except OSError as exc:
            raise WireError(f"cannot connect to {endpoint}: {exc}") from exc
        return ExternalModel(transport)
    if endpoint.startswith("stdio:"):
        command = endpoint[len("stdio:"):]
        if not command.strip():
            raise ValueError("empty stdio command")
        return ExternalModel(_StdioTransport(command, timeout))
    raise ValueError(f"unknown endpoint scheme in {endpoint!r} (use tcp:// or stdio:)")
