import numpy as np
import pytest

from funnybench import nn
from funnybench.catalog import PartSlot
from funnybench.model import (
    ConstantModel,
    LinearModel,
    PartDetectorModel,
    ReferenceCNN,
    TrainingDivergedError,
    UnsupportedCapabilityError,
)
from funnybench.render import render_scene
from funnybench.scene import (
    RemoveParts,
    apply_intervention,
    canonical_scene,
    sample_class_space,
    sample_scene,
)
from funnybench.weights_io import WeightsFormatError, load_tensors, save_tensors


def make_cnn(resolution=16, n_classes=5, seed=3):
    """Initialized but untrained CNN with identity input stats."""
    model = ReferenceCNN(resolution=resolution, n_classes=n_classes, seed=seed)
    model.params_ = model._init_params()
    model.input_mean_ = np.zeros(3, dtype=np.float32)
    model.input_std_ = np.ones(3, dtype=np.float32)
    model.classes_ = np.arange(n_classes)
    return model


class TestPredict:
    def test_linear_model_hand_computed(self):
        # 2-class linear head on a 2x2 input, checked against dot products by hand
        w = np.zeros((2, 2, 2, 3))
        w[0, 0, 0, 0] = 1.0
        w[0, 1, 1, 2] = -2.0
        w[1, 0, 1, 1] = 0.5
        model = LinearModel(w, bias=[0.25, -1.0])
        x = np.arange(12, dtype=np.float64).reshape(2, 2, 3) / 12.0
        logits = model.predict_logits(x)
        # class 0: 1*x[0,0,0] - 2*x[1,1,2] + 0.25 ; class 1: 0.5*x[0,1,1] - 1
        assert logits[0] == pytest.approx(x[0, 0, 0] - 2 * x[1, 1, 2] + 0.25)
        assert logits[1] == pytest.approx(0.5 * x[0, 1, 1] - 1.0)

    def test_zero_weight_cnn_gives_bias(self):
        model = make_cnn()
        for k in model.params_:
            model.params_[k][:] = 0
        model.params_["dense_b"] = np.linspace(-1, 1, 5).astype(np.float32)
        x = np.random.default_rng(0).random((16, 16, 3)).astype(np.float32)
        logits = model.predict_logits(x)
        assert np.allclose(logits, np.linspace(-1, 1, 5), atol=1e-7)

    def test_deterministic(self):
        model = make_cnn()
        x = np.random.default_rng(1).random((16, 16, 3)).astype(np.float32)
        assert np.array_equal(model.predict_logits(x), model.predict_logits(x))

    def test_dimension_mismatch(self):
        model = make_cnn(resolution=16)
        with pytest.raises(ValueError):
            model.predict_logits(np.zeros((8, 8, 3), dtype=np.float32))

    def test_batch_matches_single(self):
        model = make_cnn()
        xs = np.random.default_rng(2).random((4, 16, 16, 3)).astype(np.float32)
        batch = model.predict_logits_batch(xs)
        for i in range(4):
            assert np.allclose(batch[i], model.predict_logits(xs[i]), atol=1e-6)


class TestInputGradient:
    def test_linear_model_exact(self):
        rng = np.random.default_rng(0)
        w = rng.standard_normal((3, 4, 4, 3))
        model = LinearModel(w)
        grad = model.input_gradient(np.zeros((4, 4, 3)), 1)
        assert np.array_equal(grad, w[1])

    def test_zero_weights_zero_gradient(self):
        model = make_cnn()
        for k in model.params_:
            model.params_[k][:] = 0
        x = np.random.default_rng(3).random((16, 16, 3)).astype(np.float32)
        assert np.all(model.input_gradient(x, 0) == 0)

    def test_matches_central_differences(self):
        model = make_cnn(seed=7)
        rng = np.random.default_rng(11)
        x = rng.random((16, 16, 3)).astype(np.float32)
        target = 2
        grad = model.input_gradient(x, target)
        h = 1e-3
        probes = rng.integers(0, 16 * 16 * 3, size=50)
        for flat in probes:
            i, j, c = np.unravel_index(flat, (16, 16, 3))
            xp = x.astype(np.float64).copy()
            xm = x.astype(np.float64).copy()
            xp[i, j, c] += h
            xm[i, j, c] -= h
            fd = (
                model.predict_logits(xp.astype(np.float32))[target]
                - model.predict_logits(xm.astype(np.float32))[target]
            ) / (2 * h)
            denom = max(abs(fd), abs(grad[i, j, c]), 1e-4)
            assert abs(fd - grad[i, j, c]) / denom < 1e-3, (i, j, c, fd, grad[i, j, c])

    def test_capability_error(self):
        with pytest.raises(UnsupportedCapabilityError):
            ConstantModel([0.0, 1.0]).input_gradient(np.zeros((4, 4, 3)), 0)


class TestActivations:
    def test_shapes_at_64(self):
        model = make_cnn(resolution=64, n_classes=50)
        x = np.random.default_rng(4).random((64, 64, 3)).astype(np.float32)
        acts, grads = model.last_conv_activations_and_grads(x, 7)
        assert acts.shape == (32, 16, 16)
        assert grads.shape == (32, 16, 16)

    def test_gradient_matches_dense_head_differences(self):
        model = make_cnn(seed=9)
        x = np.random.default_rng(5).random((16, 16, 3)).astype(np.float32)
        target = 1
        acts, grads = model.last_conv_activations_and_grads(x, target)
        w = model.params_["dense_w"].astype(np.float64)
        b = model.params_["dense_b"].astype(np.float64)
        flat = acts.transpose(1, 2, 0).reshape(-1)
        h = 1e-3
        rng = np.random.default_rng(6)
        for unit in rng.integers(0, flat.size, size=20):
            fp = flat.copy()
            fm = flat.copy()
            fp[unit] += h
            fm[unit] -= h
            fd = ((fp @ w + b)[target] - ((fm @ w + b))[target]) / (2 * h)
            i, j, c = np.unravel_index(unit, (4, 4, 32))
            denom = max(abs(fd), abs(grads[c, i, j]), 1e-6)
            assert abs(fd - grads[c, i, j]) / denom < 1e-3

    def test_zero_dense_head_zero_grads(self):
        model = make_cnn()
        model.params_["dense_w"][:] = 0
        x = np.random.default_rng(7).random((16, 16, 3)).astype(np.float32)
        _, grads = model.last_conv_activations_and_grads(x, 0)
        assert np.all(grads == 0)

    def test_capability_error(self):
        with pytest.raises(UnsupportedCapabilityError):
            LinearModel(np.zeros((2, 4, 4, 3))).last_conv_activations_and_grads(
                np.zeros((4, 4, 3)), 0
            )


class TestLossHead:
    def test_singleton_reduces_to_cross_entropy(self):
        rng = np.random.default_rng(0)
        logits = rng.standard_normal((6, 5))
        targets = rng.integers(0, 5, size=6)
        mat = np.zeros((6, 5))
        mat[np.arange(6), targets] = 1.0
        loss, _ = nn.multilabel_ce(logits, mat)
        probs = nn.softmax(logits)
        expect = -np.log(probs[np.arange(6), targets]).mean()
        assert loss == pytest.approx(expect, rel=1e-12)

    def test_two_targets_average_gradient(self):
        rng = np.random.default_rng(1)
        logits = rng.standard_normal((1, 4))
        m01 = np.zeros((1, 4))
        m01[0, 0] = m01[0, 1] = 0.5
        _, g = nn.multilabel_ce(logits, m01)
        singles = []
        for t in (0, 1):
            m = np.zeros((1, 4))
            m[0, t] = 1.0
            singles.append(nn.multilabel_ce(logits, m)[1])
        assert np.allclose(g, (singles[0] + singles[1]) / 2, atol=1e-12)

    def test_gradient_identity_softmax_minus_mean_onehot(self):
        rng = np.random.default_rng(2)
        logits = rng.standard_normal((8, 7)) * 3
        mat = np.zeros((8, 7))
        for i in range(8):
            targets = rng.choice(7, size=rng.integers(1, 4), replace=False)
            mat[i, targets] = 1.0 / len(targets)
        _, g = nn.multilabel_ce(logits, mat)
        expect = (nn.softmax(logits) - mat) / 8
        assert np.max(np.abs(g - expect)) < 1e-10

    def test_gradient_matches_finite_differences(self):
        # independent oracle: central differences of the scalar loss
        rng = np.random.default_rng(3)
        logits = rng.standard_normal((2, 4))
        mat = np.array([[0.5, 0.5, 0, 0], [0, 0, 1, 0]], dtype=float)
        _, g = nn.multilabel_ce(logits, mat)
        h = 1e-6
        for i in range(2):
            for j in range(4):
                lp = logits.copy()
                lm = logits.copy()
                lp[i, j] += h
                lm[i, j] -= h
                fd = (nn.multilabel_ce(lp, mat)[0] - nn.multilabel_ce(lm, mat)[0]) / (2 * h)
                assert abs(fd - g[i, j]) < 1e-8


class TestTraining:
    def _tiny_data(self, n=48, resolution=16, n_classes=3, seed=0):
        rng = np.random.default_rng(seed)
        X = rng.random((n, resolution, resolution, 3)).astype(np.float32)
        y = rng.integers(0, n_classes, size=n)
        # give the classes a learnable signal
        for i in range(n):
            X[i, :, :, y[i] % 3] += 0.5
        X = np.clip(X, 0, 1.5) / 1.5
        return X, y

    def test_deterministic_weights(self):
        X, y = self._tiny_data()
        a = ReferenceCNN(resolution=16, n_classes=3, epochs=2, seed=5).fit(X, y)
        b = ReferenceCNN(resolution=16, n_classes=3, epochs=2, seed=5).fit(X, y)
        for k in a.params_:
            assert np.array_equal(a.params_[k], b.params_[k]), k

    def test_history_and_eval_set(self):
        X, y = self._tiny_data()
        model = ReferenceCNN(resolution=16, n_classes=3, epochs=3, seed=5)
        model.fit(X, y, eval_set=(X[:16], y[:16]))
        assert len(model.history_) == 3
        assert all("test_accuracy" in h for h in model.history_)
        assert model.history_[-1]["lr"] == pytest.approx(0.001)

    def test_multilabel_targets_accepted(self):
        X, y = self._tiny_data()
        targets = [{int(t)} if i % 2 else {int(t), (int(t) + 1) % 3} for i, t in enumerate(y)]
        model = ReferenceCNN(resolution=16, n_classes=3, epochs=1, seed=5).fit(X, targets)
        assert hasattr(model, "params_")

    def test_divergence_aborts(self):
        X, y = self._tiny_data()
        with pytest.raises(TrainingDivergedError):
            ReferenceCNN(resolution=16, n_classes=3, epochs=5, lr=1e12, seed=5).fit(X, y)

    def test_sklearn_get_params(self):
        params = ReferenceCNN(epochs=7).get_params()
        assert params["epochs"] == 7
        clone = ReferenceCNN(**params)
        assert clone.get_params() == params


class TestWeightsContainer:
    def test_round_trip(self, tmp_path):
        X, y = TestTraining()._tiny_data()
        model = ReferenceCNN(resolution=16, n_classes=3, epochs=1, seed=5).fit(X, y)
        path = tmp_path / "model.fbw"
        model.save(path)
        loaded = ReferenceCNN.load(path)
        x = X[0]
        assert np.array_equal(loaded.predict_logits(x), model.predict_logits(x))
        assert loaded.resolution == 16 and loaded.n_classes == 3

    def test_named_tensors(self, tmp_path):
        path = tmp_path / "t.bin"
        tensors = {
            "a": np.arange(6, dtype=np.float32).reshape(2, 3),
            "b": np.arange(4, dtype=np.int64),
        }
        save_tensors(path, tensors, {"hello": 1})
        loaded, meta = load_tensors(path)
        assert meta == {"hello": 1}
        for k in tensors:
            assert np.array_equal(loaded[k], tensors[k])
            assert loaded[k].dtype == tensors[k].dtype

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"NOTMAGIC" + b"\0" * 32)
        with pytest.raises(WeightsFormatError):
            load_tensors(path)


@pytest.fixture(scope="module")
def space():
    return sample_class_space(7)


class TestPartDetectorModel:
    def test_classifies_rendered_scenes(self, space):
        model = PartDetectorModel(space)
        for cid in (0, 3, 17, 42):
            for seed in (1, 2):
                scene = sample_scene(space, cid, seed)
                image, _ = render_scene(scene, space)
                assert int(np.argmax(model.predict_logits(image))) == cid

    def test_detects_canonical_variants(self, space):
        model = PartDetectorModel(space)
        image, _ = render_scene(canonical_scene(5), space)
        detected = model.detect_variants(image)
        expect = {int(s): v for s, v in space[5].assignment.items()}
        assert detected == expect

    def test_beak_keyed_drops(self, space):
        # model keyed only on the beak: removing the beak drops the logit a
        # lot, removing anything else leaves it within the 5% band
        keyed = PartDetectorModel(space, key_sets={c.class_id: frozenset({PartSlot.BEAK}) for c in space.classes})
        scene = sample_scene(space, 4, 3)
        image, _ = render_scene(scene, space)
        base = keyed.predict_logits(image)[4]
        removed_beak = apply_intervention(scene, RemoveParts({PartSlot.BEAK}))
        img_nb, _ = render_scene(removed_beak, space)
        drop_beak = base - keyed.predict_logits(img_nb)[4]
        assert drop_beak > abs(0.05 * base)
        for slot in (PartSlot.WING, PartSlot.FOOT, PartSlot.EYE, PartSlot.TAIL):
            other = apply_intervention(scene, RemoveParts({slot}))
            img_o, _ = render_scene(other, space)
            drop = base - keyed.predict_logits(img_o)[4]
            assert abs(drop) < abs(0.05 * base), slot
