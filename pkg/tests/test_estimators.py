import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from irisauth import IrisClassifier, IrisDetector, IrisNormalizer, datagen
from irisauth.detect.geometry import Box, Detection
from irisauth.errors import ContractViolation


def separable_crops(n_per_class=10, classes=(3, 7), size=16, seed=0):
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for i, label in enumerate(classes):
        base = 0.2 + 0.6 * i / max(len(classes) - 1, 1)
        for _ in range(n_per_class):
            xs.append(np.clip(
                np.full((3, size, size), base, np.float32)
                + rng.normal(0, 0.05, size=(3, size, size)).astype(np.float32),
                0, 1))
            ys.append(label)
    return np.stack(xs), np.asarray(ys)


class TestSklearnProtocol:
    @pytest.mark.parametrize("estimator", [
        IrisDetector(), IrisNormalizer(), IrisClassifier()])
    def test_get_set_params_roundtrip(self, estimator):
        params = estimator.get_params()
        estimator.set_params(**params)
        assert estimator.get_params() == params

    def test_clone(self):
        model = IrisClassifier(widths=(8,), epochs=2, seed=5)
        cloned = clone(model)
        assert cloned.get_params() == model.get_params()

    def test_not_fitted_errors(self):
        with pytest.raises(NotFittedError):
            IrisClassifier().predict(np.zeros((1, 3, 8, 8), np.float32))
        with pytest.raises(NotFittedError):
            IrisDetector().predict(np.zeros((1, 3, 32, 32), np.float32))


class TestIrisNormalizer:
    def test_transform_shapes_and_purity(self):
        rng = np.random.default_rng(1)
        norm = IrisNormalizer(square_size=32)
        pairs = []
        for _ in range(4):
            img = rng.uniform(0, 255, size=(1, 48, 48)).astype(np.float32)
            pairs.append((img, Box(4, 4, 40, 28)))
        out = norm.fit(pairs).transform(pairs)
        assert out.shape == (4, 3, 32, 32)
        content_h = int(np.rint(24 * 32 / 36))
        assert np.all(out[:, :, content_h:, :] == 0.0)

    def test_accepts_detections_and_arrays(self):
        rng = np.random.default_rng(2)
        img = rng.uniform(0, 255, size=(3, 40, 40)).astype(np.float32)
        norm = IrisNormalizer(square_size=24)
        out = norm.transform([
            (img, Detection(Box(2, 2, 30, 30), 0.9)),
            (img, [2.0, 2.0, 30.0, 30.0]),
        ])
        assert out.shape == (2, 3, 24, 24)
        assert np.array_equal(out[0], out[1])

    def test_bad_items_rejected(self):
        with pytest.raises(ContractViolation):
            IrisNormalizer().transform([np.zeros((3, 8, 8))])
        with pytest.raises(ContractViolation):
            IrisNormalizer().transform([])


class TestIrisClassifier:
    def test_learns_separable_classes(self):
        X, y = separable_crops()
        model = IrisClassifier(widths=(6,), epochs=25, batch_size=4,
                               lr=1e-3, seed=0)
        model.fit(X, y)
        assert np.array_equal(np.sort(model.classes_), [3, 7])
        acc = float((model.predict(X) == y).mean())
        assert acc >= 0.95

    def test_predict_proba_normalized(self):
        X, y = separable_crops()
        model = IrisClassifier(widths=(4,), epochs=2, lr=1e-3, seed=1).fit(X, y)
        proba = model.predict_proba(X)
        assert proba.shape == (len(y), 2)
        assert np.allclose(proba.sum(axis=1), 1.0, atol=1e-5)

    def test_score_is_accuracy(self):
        X, y = separable_crops()
        model = IrisClassifier(widths=(6,), epochs=25, batch_size=4,
                               lr=1e-3, seed=0).fit(X, y)
        assert model.score(X, y) == float((model.predict(X) == y).mean())

    def test_fit_deterministic(self):
        X, y = separable_crops()
        a = IrisClassifier(widths=(4,), epochs=3, lr=1e-3, seed=7).fit(X, y)
        b = IrisClassifier(widths=(4,), epochs=3, lr=1e-3, seed=7).fit(X, y)
        for name in a.params_.names():
            assert np.array_equal(a.params_[name].data, b.params_[name].data)

    def test_early_stopping_with_validation_split(self):
        X, y = separable_crops(n_per_class=12)
        model = IrisClassifier(widths=(4,), epochs=40, batch_size=4, lr=1e-3,
                               patience=2, val_fraction=0.25, seed=0).fit(X, y)
        assert model.score(X, y) >= 0.9

    def test_label_shape_mismatch(self):
        X, _ = separable_crops()
        with pytest.raises(ContractViolation):
            IrisClassifier().fit(X, np.zeros(3))


@pytest.fixture(scope="module")
def fitted():
    spec = datagen.SynthSpec(num_identities=2, images_per_identity=6,
                             image_size=32, spectrum="VW", seed=1)
    images, boxes, masks = [], [], []
    for ident in range(spec.num_identities):
        for idx in range(spec.images_per_identity):
            img, box, mask = datagen.render_eye(ident, idx, spec)
            images.append(img * 255.0)
            boxes.append(box)
            masks.append(mask)
    det = IrisDetector(backbone_widths=(8, 12),
                       scales=(2.5, 3.5, 4.5), ratios=(0.5, 1.0, 2.0),
                       base_size=4, epochs=12, batch_size=4, lr=2e-3,
                       smooth_l1_beta=1 / 9, seed=0)
    det.fit(np.stack(images), np.asarray(boxes), masks=masks)
    return det, np.stack(images), np.asarray(boxes)


class TestIrisDetector:
    def test_predict_returns_detections(self, fitted):
        det, images, _ = fitted
        preds = det.predict(images[:4])
        assert len(preds) == 4
        for p in preds:
            assert p is None or isinstance(p, Detection)

    def test_score_mean_iou(self, fitted):
        det, images, boxes = fitted
        score = det.score(images, boxes)
        assert 0.0 <= score <= 1.0
        assert score > 0.2  # roughly localizes after a few epochs

    def test_loss_trace_recorded(self, fitted):
        det, _, _ = fitted
        assert len(det.trace_) == 12
        assert det.trace_[-1].total < det.trace_[0].total
