"""Post-hoc explanation methods producing attribution or binary importance maps.

Every method is a configured object with

    explain(model, image, target, context=None) -> Explanation

where `context` carries per-sample extras (scene, label map) that the standard
methods ignore; it exists so white-box reference explainers can plug into the
same evaluation loop.  Channel reduction is always summation, applied in raw
pixel space.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .util import bilinear_resize, derive_seed
from .validation import check_fraction

ATTRIBUTION = "attribution"
BINARY = "binary"


@dataclass
class Explanation:
    kind: str  # "attribution" | "binary"
    data: np.ndarray  # HxW signed floats, or HxW booleans
    method_id: str
    target_class: int

    def __post_init__(self):
        if self.kind not in (ATTRIBUTION, BINARY):
            raise ValueError(f"unknown explanation kind {self.kind!r}")
        if self.kind == ATTRIBUTION:
            self.data = np.asarray(self.data, dtype=np.float64)
            if not np.isfinite(self.data).all():
                raise ValueError("attribution map contains non-finite values")
        else:
            self.data = np.asarray(self.data, dtype=bool)
        if self.data.ndim != 2:
            raise ValueError(f"explanation map must be HxW, got shape {self.data.shape}")


class InputXGradient:
    """Per-pixel gradient times input, summed over channels."""

    method_id = "ixg"

    def explain(self, model, image, target, context=None) -> Explanation:
        grad = model.input_gradient(image, target)
        data = (grad * np.asarray(image, dtype=np.float64)).sum(axis=2)
        return Explanation(ATTRIBUTION, data, self.method_id, int(target))


class IntegratedGradients:
    """Riemann-midpoint path integral of gradients from a black baseline.

    The baseline is the all-zeros raw pixel image.  `absolute=True` takes the
    absolute value after channel summation.
    """

    def __init__(self, steps: int = 64, absolute: bool = False):
        if steps < 1:
            raise ValueError("steps must be positive")
        self.steps = steps
        self.absolute = absolute

    @property
    def method_id(self) -> str:
        return "igabs" if self.absolute else "ig"

    def explain(self, model, image, target, context=None) -> Explanation:
        image = np.asarray(image, dtype=np.float64)
        baseline = np.zeros_like(image)
        diff = image - baseline
        alphas = (np.arange(self.steps) + 0.5) / self.steps
        points = baseline[None] + alphas[:, None, None, None] * diff[None]
        grads = model.input_gradient_batch(
            points.astype(np.float32), [int(target)] * self.steps
        )
        avg = np.asarray(grads, dtype=np.float64).mean(axis=0)
        data = (avg * diff).sum(axis=2)
        if self.absolute:
            data = np.abs(data)
        return Explanation(ATTRIBUTION, data, self.method_id, int(target))


class GradCAM:
    """Class activation map from the last conv features, bilinearly upsampled."""

    method_id = "gradcam"

    def explain(self, model, image, target, context=None) -> Explanation:
        acts, grads = model.last_conv_activations_and_grads(image, target)
        weights = np.asarray(grads, dtype=np.float64).mean(axis=(1, 2))
        cam = np.maximum((weights[:, None, None] * np.asarray(acts, dtype=np.float64)).sum(axis=0), 0.0)
        h, w = np.asarray(image).shape[:2]
        data = bilinear_resize(cam, h, w)
        return Explanation(ATTRIBUTION, data, self.method_id, int(target))


class RISE:
    """Black-box saliency from randomly masked forward passes.

    Binary cell-grid masks with keep probability p are bilinearly upsampled
    and applied multiplicatively; the saliency is the mask-weighted sum of
    target logits normalized by n_masks * p.
    """

    method_id = "rise"

    def __init__(self, n_masks: int = 2000, cell_grid: int = 8, keep_prob: float = 0.5,
                 seed: int = 0, batch_size: int = 256):
        if n_masks < 1 or cell_grid < 1:
            raise ValueError("n_masks and cell_grid must be positive")
        check_fraction(keep_prob, "keep_prob", open_interval=True)
        self.n_masks = n_masks
        self.cell_grid = cell_grid
        self.keep_prob = keep_prob
        self.seed = seed
        self.batch_size = batch_size

    def masks_for(self, h: int, w: int) -> np.ndarray:
        rng = np.random.default_rng(derive_seed(self.seed, "rise-masks"))
        cells = rng.random((self.n_masks, self.cell_grid, self.cell_grid)) < self.keep_prob
        out = np.empty((self.n_masks, h, w), dtype=np.float64)
        for i in range(self.n_masks):
            out[i] = bilinear_resize(cells[i].astype(np.float64), h, w)
        return out

    def explain(self, model, image, target, context=None) -> Explanation:
        image = np.asarray(image, dtype=np.float64)
        h, w, _ = image.shape
        masks = self.masks_for(h, w)
        acc = np.zeros((h, w), dtype=np.float64)
        for start in range(0, self.n_masks, self.batch_size):
            chunk = masks[start:start + self.batch_size]
            masked = (image[None] * chunk[..., None]).astype(np.float32)
            logits = model.predict_logits_batch(masked)
            acc += np.tensordot(np.asarray(logits, dtype=np.float64)[:, int(target)], chunk, axes=(0, 0))
        data = acc / (self.n_masks * self.keep_prob)
        return Explanation(ATTRIBUTION, data, self.method_id, int(target))


class LimeGrid:
    """Binary importance map from a ridge surrogate over grid segments.

    The image is divided into a fixed segment grid; random on/off perturbations
    (off = gray fill) are scored by the model, a ridge regression with
    exponential-kernel sample weights is solved in closed form, and the mask is
    the union of the top_k segments by coefficient.
    """

    method_id = "lime"

    def __init__(self, segment_grid: int = 8, n_perturb: int = 1000, ridge_lambda: float = 1.0,
                 top_k: int = 8, kernel_width: float = 0.25, fill_value: float = 0.5,
                 seed: int = 0, batch_size: int = 256):
        if segment_grid < 1 or n_perturb < 1 or top_k < 1:
            raise ValueError("segment_grid, n_perturb and top_k must be positive")
        if ridge_lambda <= 0:
            raise ValueError("ridge_lambda must be > 0")
        self.segment_grid = segment_grid
        self.n_perturb = n_perturb
        self.ridge_lambda = ridge_lambda
        self.top_k = top_k
        self.kernel_width = kernel_width
        self.fill_value = fill_value
        self.seed = seed
        self.batch_size = batch_size

    def _segment_map(self, h: int, w: int) -> np.ndarray:
        rows = np.minimum(np.arange(h) * self.segment_grid // h, self.segment_grid - 1)
        cols = np.minimum(np.arange(w) * self.segment_grid // w, self.segment_grid - 1)
        return rows[:, None] * self.segment_grid + cols[None, :]

    def explain(self, model, image, target, context=None) -> Explanation:
        image = np.asarray(image, dtype=np.float64)
        h, w, _ = image.shape
        segments = self._segment_map(h, w)
        n_seg = self.segment_grid ** 2
        rng = np.random.default_rng(derive_seed(self.seed, "lime-perturb"))
        z = rng.random((self.n_perturb, n_seg)) < 0.5

        y = np.empty(self.n_perturb, dtype=np.float64)
        for start in range(0, self.n_perturb, self.batch_size):
            chunk = z[start:start + self.batch_size]
            pixel_on = chunk[:, segments]  # (B, H, W)
            batch = np.where(pixel_on[..., None], image[None], self.fill_value)
            logits = model.predict_logits_batch(batch.astype(np.float32))
            y[start:start + self.batch_size] = np.asarray(logits, dtype=np.float64)[:, int(target)]

        # exponential kernel on the fraction of disabled segments
        distance = 1.0 - z.mean(axis=1)
        weights = np.exp(-((distance / self.kernel_width) ** 2))
        design = np.concatenate([np.ones((self.n_perturb, 1)), z.astype(np.float64)], axis=1)
        wd = design * weights[:, None]
        normal = design.T @ wd + self.ridge_lambda * np.eye(n_seg + 1)
        beta = np.linalg.solve(normal, design.T @ (weights * y))
        coefs = beta[1:]

        k = min(self.top_k, n_seg)
        order = np.lexsort((np.arange(n_seg), -coefs))  # ties break toward lower index
        chosen = order[:k]
        mask = np.isin(segments, chosen)
        return Explanation(BINARY, mask, self.method_id, int(target))


class RandomAttribution:
    """Uniform-random attribution map; the no-information baseline.

    The per-call map is derived from the image bytes and target, so results
    are deterministic and independent of evaluation order.
    """

    method_id = "random"

    def __init__(self, seed: int = 0):
        self.seed = seed

    def explain(self, model, image, target, context=None) -> Explanation:
        image = np.asarray(image)
        import hashlib

        digest = hashlib.sha256(image.astype(np.float32).tobytes()).hexdigest()[:16]
        rng = np.random.default_rng(derive_seed(self.seed, digest, int(target)))
        data = rng.random(image.shape[:2])
        return Explanation(ATTRIBUTION, data, self.method_id, int(target))


class SufficientSetAttribution:
    """White-box reference explainer: unit mass on one interior pixel of each
    part in the target class's first minimal sufficient set.

    Requires the evaluation context (label map).  The pixel is chosen outside
    the dilation reach of every other entity whenever possible, so the mass is
    counted for exactly the intended part.  Paired with the part-detector
    model this realizes the perfect-knowledge closure case.
    """

    method_id = "oracle"

    def __init__(self, space, dilation: int = 5):
        self.space = space
        self.dilation = dilation

    def explain(self, model, image, target, context=None) -> Explanation:
        from .render import dilate_mask

        if context is None:
            raise ValueError("SufficientSetAttribution needs the sample context")
        labels = np.asarray(context.labels)
        data = np.zeros(labels.shape, dtype=np.float64)
        entity = ((labels >= 1) & (labels <= 5)) | (labels >= 100)
        key_set = self.space[int(target)].sufficient_sets[0]
        for slot in key_set:
            part = labels == int(slot)
            ys, xs = np.nonzero(part)
            if len(ys) == 0:
                continue
            clear = part & ~dilate_mask(entity & ~part, self.dilation)
            if clear.any():
                ys, xs = np.nonzero(clear)
            cy, cx = ys.mean(), xs.mean()
            nearest = int(np.argmin((ys - cy) ** 2 + (xs - cx) ** 2))
            data[ys[nearest], xs[nearest]] = 1.0
        return Explanation(ATTRIBUTION, data, self.method_id, int(target))


METHODS = {
    "ixg": InputXGradient,
    "ig": IntegratedGradients,
    "igabs": lambda **kw: IntegratedGradients(absolute=True, **kw),
    "gradcam": GradCAM,
    "rise": RISE,
    "lime": LimeGrid,
}


def make_explainer(method_id: str, **config):
    """Instantiate an explanation method by registry id."""
    if method_id not in METHODS:
        raise ValueError(f"unknown method {method_id!r}; known: {sorted(METHODS)}")
    return METHODS[method_id](**config)


# --- Raw explanation container -------------------------------------------------

_XMAP_MAGIC = b"XMAP01"


def write_explanation(path: str | Path, expl: Explanation) -> None:
    """Persist an explanation: small header + raw payload (f32 or packed bits)."""
    h, w = expl.data.shape
    kind_code = 0 if expl.kind == ATTRIBUTION else 1
    header = _XMAP_MAGIC + struct.pack("<BBIIi", kind_code, 0, h, w, expl.target_class)
    method = expl.method_id.encode("utf-8")
    header += struct.pack("<H", len(method)) + method
    if kind_code == 0:
        payload = expl.data.astype("<f4").tobytes()
    else:
        payload = np.packbits(expl.data, axis=1).tobytes()
    Path(path).write_bytes(header + payload)


def read_explanation(path: str | Path) -> Explanation:
    data = Path(path).read_bytes()
    if data[:6] != _XMAP_MAGIC:
        raise ValueError(f"{path}: not an explanation container")
    kind_code, _, h, w, target = struct.unpack_from("<BBIIi", data, 6)
    off = 6 + struct.calcsize("<BBIIi")
    (mlen,) = struct.unpack_from("<H", data, off)
    off += 2
    method = data[off:off + mlen].decode("utf-8")
    off += mlen
    if kind_code == 0:
        arr = np.frombuffer(data[off:off + 4 * h * w], dtype="<f4").reshape(h, w).astype(np.float64)
        return Explanation(ATTRIBUTION, arr, method, target)
    row_bytes = (w + 7) // 8
    packed = np.frombuffer(data[off:off + row_bytes * h], dtype=np.uint8).reshape(h, row_bytes)
    mask = np.unpackbits(packed, axis=1)[:, :w].astype(bool)
    return Explanation(BINARY, mask, method, target)
