"""Models under test: a trainable reference CNN plus verification stubs.

Every model exposes the same minimal contract used by the evaluation
protocols:

    predict_logits(image) -> (n_classes,) float64 logits
    predict_logits_batch(images) -> (N, n_classes)
    gradients / activations capability flags
    input_gradient(image, target) when gradients is True
    last_conv_activations_and_grads(image, target) when activations is True

The reference CNN is additionally a scikit-learn style estimator
(fit/predict/decision_function/get_params), so it composes with the wider
ecosystem; explanations always operate in raw pixel space (the input
normalization is folded into the model and its gradients).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from . import nn
from .catalog import PartSlot, chromaticity, variant_chromaticities
from .scene import ClassSpace
from .util import derive_seed
from .validation import check_image
from .weights_io import load_tensors, save_tensors


class UnsupportedCapabilityError(RuntimeError):
    """A gradient/activation operation was requested from a model lacking it."""


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss."""


class ModelBase:
    """Default plumbing for the model-under-test contract."""

    gradients: bool = False
    activations: bool = False

    def predict_logits(self, image: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def predict_logits_batch(self, images: np.ndarray) -> np.ndarray:
        return np.stack([self.predict_logits(img) for img in images])

    def input_gradient(self, image: np.ndarray, target: int) -> np.ndarray:
        raise UnsupportedCapabilityError(f"{type(self).__name__} has no gradient capability")

    def input_gradient_batch(self, images: np.ndarray, targets) -> np.ndarray:
        return np.stack([self.input_gradient(img, t) for img, t in zip(images, targets)])

    def last_conv_activations_and_grads(self, image: np.ndarray, target: int):
        raise UnsupportedCapabilityError(f"{type(self).__name__} has no activations capability")


class ReferenceCNN(ModelBase, ClassifierMixin, BaseEstimator):
    """Small fixed-topology CNN trained from scratch.

    conv 3x3x16 / ReLU / maxpool 2 / conv 3x3x32 / ReLU / maxpool 2 /
    flatten / dense -> n_classes.  SGD with momentum, weight decay and a
    single step decay at half the epochs.  Deterministic for a fixed seed.
    """

    gradients = True
    activations = True

    def __init__(
        self,
        resolution: int = 64,
        n_classes: int = 50,
        epochs: int = 20,
        lr: float = 0.01,
        momentum: float = 0.9,
        weight_decay: float = 1e-4,
        batch_size: int = 64,
        lr_decay_factor: float = 0.1,
        seed: int = 0,
    ):
        self.resolution = resolution
        self.n_classes = n_classes
        self.epochs = epochs
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.lr_decay_factor = lr_decay_factor
        self.seed = seed

    # -- parameter handling ---------------------------------------------------

    def _init_params(self) -> dict[str, np.ndarray]:
        if self.resolution % 4 != 0:
            raise ValueError("resolution must be divisible by 4")
        for name in ("epochs", "lr", "momentum", "batch_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        rng = np.random.default_rng(derive_seed(self.seed, "cnn-init"))
        side = self.resolution // 4
        flat = 32 * side * side

        def he(shape, fan_in):
            return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(nn.F32)

        return {
            "conv1_w": he((27, 16), 27),
            "conv1_b": np.zeros(16, dtype=nn.F32),
            "conv2_w": he((144, 32), 144),
            "conv2_b": np.zeros(32, dtype=nn.F32),
            "dense_w": he((flat, self.n_classes), flat),
            "dense_b": np.zeros(self.n_classes, dtype=nn.F32),
        }

    def _require_fitted(self):
        if not hasattr(self, "params_"):
            raise RuntimeError("model is not fitted; call fit() or load()")

    # -- forward / backward ---------------------------------------------------

    def _normalize(self, x: np.ndarray) -> np.ndarray:
        return (x.astype(nn.F64) - self.input_mean_) / self.input_std_

    def _forward(self, x_raw: np.ndarray, want_cache: bool = False):
        return self._forward_core(self._normalize(x_raw), want_cache)

    def _forward_core(self, x: np.ndarray, want_cache: bool = False):
        p = self.params_
        z1, cols1 = nn.conv3_forward(x, p["conv1_w"], p["conv1_b"])
        a1, m1 = nn.relu_forward(z1)
        p1, pc1 = nn.maxpool2_forward(a1)
        z2, cols2 = nn.conv3_forward(p1, p["conv2_w"], p["conv2_b"])
        a2, m2 = nn.relu_forward(z2)
        p2, pc2 = nn.maxpool2_forward(a2)
        flat = p2.reshape(p2.shape[0], -1)
        logits, _ = nn.dense_forward(flat, p["dense_w"], p["dense_b"])
        if not want_cache:
            return logits, None
        cache = dict(cols1=cols1, m1=m1, pc1=pc1, cols2=cols2, m2=m2, pc2=pc2,
                     flat=flat, p2_shape=p2.shape)
        return logits, cache

    def _backward(self, dlogits: np.ndarray, cache: dict, want_input_grad: bool = False):
        p = self.params_
        dflat, dw3, db3 = nn.dense_backward(dlogits, cache["flat"], p["dense_w"])
        dp2 = dflat.reshape(cache["p2_shape"])
        da2 = nn.maxpool2_backward(dp2, cache["pc2"])
        dz2 = nn.relu_backward(da2, cache["m2"])
        dp1, dw2, db2 = nn.conv3_backward(dz2, cache["cols2"], p["conv2_w"], c_in=16)
        da1 = nn.maxpool2_backward(dp1, cache["pc1"])
        dz1 = nn.relu_backward(da1, cache["m1"])
        dx, dw1, db1 = nn.conv3_backward(dz1, cache["cols1"], p["conv1_w"], c_in=3,
                                         need_dx=want_input_grad)
        grads = {"conv1_w": dw1, "conv1_b": db1, "conv2_w": dw2, "conv2_b": db2,
                 "dense_w": dw3, "dense_b": db3}
        if want_input_grad:
            # chain through the per-channel normalization back to raw pixels
            return grads, dx / self.input_std_
        return grads, None

    # -- scikit-learn estimator surface ---------------------------------------

    def fit(self, X, y, eval_set=None, verbose: bool = False):
        """Train from scratch on images X and targets y.

        y may be integer labels or an iterable of valid-target collections
        (multi-label samples contribute the mean cross-entropy over their
        targets).  `eval_set=(X_test, y_test)` adds per-epoch test accuracy to
        the history.
        """
        X = np.asarray(X, dtype=nn.F32)
        if X.ndim != 4 or X.shape[1] != self.resolution or X.shape[3] != 3:
            raise ValueError(f"X must be (N,{self.resolution},{self.resolution},3), got {X.shape}")
        target_matrix = self._target_matrix(y, len(X))

        mean = X.mean(axis=(0, 1, 2), dtype=np.float64)
        std = np.sqrt(np.maximum((X.astype(np.float64) ** 2).mean(axis=(0, 1, 2)) - mean ** 2, 0.0))
        self.input_mean_ = mean.astype(nn.F32)
        self.input_std_ = np.maximum(std, 1e-6).astype(nn.F32)

        self.params_ = self._init_params()
        velocity = {k: np.zeros_like(v) for k, v in self.params_.items()}
        rng = np.random.default_rng(derive_seed(self.seed, "cnn-shuffle"))
        self.history_ = []

        # single float32 pass for training; inference paths stay float64
        Xn = (X - self.input_mean_) / self.input_std_
        eval_norm = None
        if eval_set is not None:
            xt = np.asarray(eval_set[0], dtype=nn.F32)
            eval_norm = ((xt - self.input_mean_) / self.input_std_, np.asarray(eval_set[1]))
        n = len(X)
        decay_epoch = self.epochs // 2
        for epoch in range(self.epochs):
            lr = self.lr * (self.lr_decay_factor if epoch >= decay_epoch else 1.0)
            order = rng.permutation(n)
            epoch_loss = 0.0
            for start in range(0, n, self.batch_size):
                idx = order[start:start + self.batch_size]
                logits, cache = self._forward_core(Xn[idx], want_cache=True)
                loss, dlogits = nn.multilabel_ce(logits, target_matrix[idx])
                if not np.isfinite(loss):
                    raise TrainingDivergedError(
                        f"non-finite loss at epoch {epoch}, batch start {start}"
                    )
                grads, _ = self._backward(dlogits.astype(nn.F32), cache)
                for k in self.params_:
                    g = (grads[k] + self.weight_decay * self.params_[k]).astype(nn.F32)
                    velocity[k] = (self.momentum * velocity[k] - lr * g).astype(nn.F32)
                    self.params_[k] += velocity[k]
                epoch_loss += loss * len(idx)
            entry = {"epoch": epoch, "lr": lr, "train_loss": epoch_loss / n}
            if eval_norm is not None:
                xt, yt = eval_norm
                preds = []
                for s in range(0, len(xt), self.batch_size):
                    logits, _ = self._forward_core(xt[s:s + self.batch_size])
                    preds.append(logits.argmax(axis=1))
                entry["test_accuracy"] = float(np.mean(np.concatenate(preds) == yt))
            self.history_.append(entry)
            if verbose:
                print("  ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}"
                                for k, v in entry.items()), flush=True)
        self.classes_ = np.arange(self.n_classes)
        return self

    def _target_matrix(self, y, n: int) -> np.ndarray:
        mat = np.zeros((n, self.n_classes), dtype=np.float64)
        for i, targets in enumerate(y):
            if np.isscalar(targets) or isinstance(targets, (int, np.integer)):
                targets = [int(targets)]
            targets = sorted(int(t) for t in targets)
            if not targets:
                raise ValueError(f"sample {i} has an empty target set")
            mat[i, targets] = 1.0 / len(targets)
        return mat

    def decision_function(self, X) -> np.ndarray:
        self._require_fitted()
        X = np.asarray(X, dtype=nn.F32)
        out = []
        for start in range(0, len(X), self.batch_size):
            logits, _ = self._forward(X[start:start + self.batch_size])
            out.append(logits)
        return np.concatenate(out).astype(np.float64)

    def predict(self, X) -> np.ndarray:
        return self.decision_function(X).argmax(axis=1)

    # -- model-under-test contract --------------------------------------------

    def predict_logits(self, image: np.ndarray) -> np.ndarray:
        self._require_fitted()
        image = check_image(image, self.resolution)
        logits, _ = self._forward(image[None])
        return logits[0].astype(np.float64)

    def predict_logits_batch(self, images: np.ndarray) -> np.ndarray:
        self._require_fitted()
        return self.decision_function(images)

    def input_gradient(self, image: np.ndarray, target: int) -> np.ndarray:
        return self.input_gradient_batch(image[None], [target])[0]

    def input_gradient_batch(self, images: np.ndarray, targets) -> np.ndarray:
        self._require_fitted()
        images = np.asarray(images, dtype=nn.F32)
        logits, cache = self._forward(images, want_cache=True)
        dlogits = np.zeros_like(logits)
        for i, t in enumerate(targets):
            dlogits[i, int(t)] = 1.0
        _, dx = self._backward(dlogits, cache, want_input_grad=True)
        return dx.astype(np.float64)

    def last_conv_activations_and_grads(self, image: np.ndarray, target: int):
        """Pooled last-conv feature maps and d(target logit)/d(features), (C,h,w) each."""
        self._require_fitted()
        image = check_image(image, self.resolution)
        logits, cache = self._forward(image[None], want_cache=True)
        p = self.params_
        dlogits = np.zeros_like(logits)
        dlogits[0, int(target)] = 1.0
        dflat, _, _ = nn.dense_backward(dlogits, cache["flat"], p["dense_w"])
        dp2 = dflat.reshape(cache["p2_shape"])
        acts = cache["flat"].reshape(cache["p2_shape"])[0]
        return (
            acts.transpose(2, 0, 1).astype(np.float64),
            dp2[0].transpose(2, 0, 1).astype(np.float64),
        )

    # -- persistence -----------------------------------------------------------

    def save(self, path) -> None:
        self._require_fitted()
        tensors = dict(self.params_)
        tensors["input_mean"] = self.input_mean_
        tensors["input_std"] = self.input_std_
        meta = {
            "arch": "conv16-conv32-dense",
            "resolution": self.resolution,
            "n_classes": self.n_classes,
        }
        save_tensors(path, tensors, meta)

    @classmethod
    def load(cls, path) -> "ReferenceCNN":
        tensors, meta = load_tensors(path)
        if meta.get("arch") != "conv16-conv32-dense":
            raise ValueError(f"unsupported architecture {meta.get('arch')!r}")
        model = cls(resolution=meta["resolution"], n_classes=meta["n_classes"])
        model.input_mean_ = tensors.pop("input_mean")
        model.input_std_ = tensors.pop("input_std")
        model.params_ = {k: v for k, v in tensors.items()}
        model.classes_ = np.arange(model.n_classes)
        return model


# --- Verification stubs -------------------------------------------------------


class ConstantModel(ModelBase):
    """Pixel-ignoring model: fixed logits for every input."""

    def __init__(self, logits):
        self._logits = np.asarray(logits, dtype=np.float64)

    def predict_logits(self, image: np.ndarray) -> np.ndarray:
        return self._logits.copy()


class LinearModel(ModelBase):
    """logits[c] = sum(weights[c] * image) + bias[c], with exact gradients."""

    gradients = True

    def __init__(self, weights, bias=None):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.bias = (
            np.zeros(self.weights.shape[0]) if bias is None else np.asarray(bias, dtype=np.float64)
        )

    def predict_logits(self, image: np.ndarray) -> np.ndarray:
        image = np.asarray(image, dtype=np.float64)
        return np.tensordot(self.weights, image, axes=([1, 2, 3], [0, 1, 2])) + self.bias

    def input_gradient(self, image: np.ndarray, target: int) -> np.ndarray:
        return self.weights[int(target)].copy()


class PartDetectorModel(ModelBase):
    """White-box model that reads part variants straight from pixel colors.

    Variant colors are identified by chromaticity (invariant to the scalar
    illumination and shading factors), so detection works on any rendered
    scene.  Each class c scores base * |detected on S_c| / |S_c| for a fixed
    slot set S_c (its first minimal sufficient set unless overridden), plus a
    small term over all five slots and a tiny class-rank bias that keeps
    argmax deterministic when nothing is detected.
    """

    def __init__(
        self,
        space: ClassSpace,
        key_sets: dict[int, frozenset[PartSlot]] | None = None,
        tol: float = 0.03,
        min_pixels: int = 4,
        base: float = 10.0,
    ):
        self.space = space
        self.tol = tol
        self.min_pixels = min_pixels
        self.base = base
        if key_sets is None:
            key_sets = {c.class_id: c.sufficient_sets[0] for c in space.classes}
        self.key_sets = key_sets
        self._targets = variant_chromaticities()

    def detect_variants(self, image: np.ndarray) -> dict[int, int]:
        """Map slot -> detected variant index, for slots with enough matching pixels."""
        image = np.asarray(image, dtype=np.float64)
        sums = image.sum(axis=-1)
        valid = sums > 0.08
        chroma = chromaticity(image)
        detected: dict[int, tuple[int, int]] = {}
        for (slot, variant), target in self._targets.items():
            dist = np.linalg.norm(chroma - target, axis=-1)
            count = int((valid & (dist < self.tol)).sum())
            if count >= self.min_pixels:
                prev = detected.get(slot)
                if prev is None or count > prev[1]:
                    detected[slot] = (variant, count)
        return {slot: var for slot, (var, _) in detected.items()}

    def predict_logits(self, image: np.ndarray) -> np.ndarray:
        detected = self.detect_variants(image)
        n = len(self.space)
        logits = np.zeros(n, dtype=np.float64)
        for c in self.space.classes:
            key = self.key_sets[c.class_id]
            hit_key = sum(
                1 for s in key if detected.get(int(s)) == c.assignment[s]
            )
            hit_all = sum(
                1 for s in c.assignment if detected.get(int(s)) == c.assignment[s]
            )
            logits[c.class_id] = (
                self.base * hit_key / max(len(key), 1)
                + 1e-4 * self.base * hit_all / 5.0
                + 1e-9 * (n - 1 - c.class_id)
            )
        return logits


__all__ = [
    "ModelBase",
    "ReferenceCNN",
    "ConstantModel",
    "LinearModel",
    "PartDetectorModel",
    "UnsupportedCapabilityError",
    "TrainingDivergedError",
]
