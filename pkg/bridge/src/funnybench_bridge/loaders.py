"""Model loaders: built-in shortcuts plus arbitrary dotted-path hooks.

A served model is any object with

    predict(image: float32 HxWx3 ndarray) -> sequence of logits

and optionally

    input_gradient(image, target: int) -> float32 HxWx3 ndarray

Shortcuts:

    constant:logits.json      fixed logit vector from a JSON list
    linear:weights.npz        logits = tensordot(W, x) + b  (keys: weights, bias)
    reference:weights.fbw     the funnybench builtin CNN, served in-process
    torch-reference:w.fbw     the same weights rebuilt as a torch module

Anything else is treated as "module.path:callable"; the callable receives the
`--model-arg` strings and returns a model object.
"""

from __future__ import annotations

import importlib
import json
from pathlib import Path

import numpy as np


class ConstantLogits:
    def __init__(self, logits):
        self._logits = np.asarray(logits, dtype=np.float64)

    def predict(self, image):
        return self._logits


class LinearLogits:
    def __init__(self, weights, bias=None):
        self.weights = np.asarray(weights, dtype=np.float32)
        self.bias = np.zeros(self.weights.shape[0], dtype=np.float32) if bias is None else np.asarray(bias, dtype=np.float32)

    def predict(self, image):
        return np.tensordot(
            self.weights.astype(np.float64), np.asarray(image, dtype=np.float64),
            axes=([1, 2, 3], [0, 1, 2]),
        ) + self.bias

    def input_gradient(self, image, target):
        return self.weights[int(target)]


def load_constant(path: str) -> ConstantLogits:
    return ConstantLogits(json.loads(Path(path).read_text()))


def load_linear(path: str) -> LinearLogits:
    data = np.load(path)
    return LinearLogits(data["weights"], data["bias"] if "bias" in data else None)


class _ReferenceAdapter:
    """Serves the funnybench builtin CNN through the bridge contract."""

    def __init__(self, weights_path: str):
        from funnybench.model import ReferenceCNN

        self._model = ReferenceCNN.load(weights_path)

    def predict(self, image):
        return self._model.predict_logits(image)

    def input_gradient(self, image, target):
        return self._model.input_gradient(image, target).astype(np.float32)


def load_reference(path: str) -> _ReferenceAdapter:
    return _ReferenceAdapter(path)


class TorchModelAdapter:
    """Wraps a torch module computing logits from a normalized NCHW batch.

    Gradients come from autograd with respect to the raw pixel input, so the
    normalization (applied inside `forward`) is part of the chain.
    """

    def __init__(self, module):
        import torch

        self._torch = torch
        self._module = module.eval()

    def predict(self, image):
        torch = self._torch
        with torch.no_grad():
            x = torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32))
            logits = self._module(x.permute(2, 0, 1).unsqueeze(0))
        return logits[0].detach().numpy().astype(np.float64)

    def input_gradient(self, image, target):
        torch = self._torch
        x = torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32))
        x = x.permute(2, 0, 1).unsqueeze(0).requires_grad_(True)
        logits = self._module(x)
        logits[0, int(target)].backward()
        return x.grad[0].permute(1, 2, 0).numpy().astype(np.float32)


def _build_torch_reference(weights_path: str):
    """Rebuild the builtin CNN as a torch module from its weight container."""
    import torch
    import torch.nn as nn

    from funnybench.weights_io import load_tensors

    tensors, meta = load_tensors(weights_path)
    res = meta["resolution"]
    n_classes = meta["n_classes"]

    def conv_from(matrix, c_in, c_out):
        layer = nn.Conv2d(c_in, c_out, 3, padding=1)
        # container layout: rows indexed by (ky, kx, c_in), c_in fastest
        w = torch.from_numpy(matrix.T.copy()).view(c_out, 3, 3, c_in).permute(0, 3, 1, 2)
        layer.weight.data = w.contiguous()
        return layer

    conv1 = conv_from(tensors["conv1_w"], 3, 16)
    conv1.bias.data = torch.from_numpy(tensors["conv1_b"].copy())
    conv2 = conv_from(tensors["conv2_w"], 16, 32)
    conv2.bias.data = torch.from_numpy(tensors["conv2_b"].copy())
    dense = nn.Linear(32 * (res // 4) ** 2, n_classes)
    dense.weight.data = torch.from_numpy(tensors["dense_w"].T.copy())
    dense.bias.data = torch.from_numpy(tensors["dense_b"].copy())
    mean = torch.from_numpy(tensors["input_mean"].copy()).view(1, 3, 1, 1)
    std = torch.from_numpy(tensors["input_std"].copy()).view(1, 3, 1, 1)

    class Net(nn.Module):
        def __init__(self):
            super().__init__()
            self.conv1, self.conv2, self.dense = conv1, conv2, dense
            self.pool = nn.MaxPool2d(2)

        def forward(self, x):
            x = (x - mean) / std
            x = self.pool(torch.relu(self.conv1(x)))
            x = self.pool(torch.relu(self.conv2(x)))
            # flatten in (row, col, channel) order to match the container
            x = x.permute(0, 2, 3, 1).reshape(x.shape[0], -1)
            return self.dense(x)

    return Net()


def load_torch_reference(path: str) -> TorchModelAdapter:
    return TorchModelAdapter(_build_torch_reference(path))


_SHORTCUTS = {
    "constant": load_constant,
    "linear": load_linear,
    "reference": load_reference,
    "torch-reference": load_torch_reference,
}


def load_model(spec: str, args: list[str] | None = None):
    """Resolve a model spec: a shortcut name or a dotted import path."""
    args = args or []
    if ":" in spec:
        head, rest = spec.split(":", 1)
        if head in _SHORTCUTS:
            return _SHORTCUTS[head](rest)
        module = importlib.import_module(head)
        factory = getattr(module, rest)
        return factory(*args)
    raise ValueError(
        f"model spec {spec!r} is not 'shortcut:path' or 'module:callable' "
        f"(shortcuts: {sorted(_SHORTCUTS)})"
    )
