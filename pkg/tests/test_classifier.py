import numpy as np
import pytest

from forambench.classifier import (ClassifierFeatureExtractor, TinyClassifier,
                                   classifier_accuracy, images_to_batch,
                                   train_classifier)
from forambench.errors import ContractError, DimensionError
from forambench.image import ImageBuffer
from forambench.synth import SynthForamSpec, render_foram


@pytest.fixture(scope="module")
def corpus16():
    spec = SynthForamSpec(resolution=16, class_count=3, seed=5)
    images, labels = [], []
    for cls in range(3):
        for i in range(12):
            img, _ = render_foram(spec, cls, i)
            images.append(img)
            labels.append(cls)
    return images, np.array(labels)


def test_rejects_side_not_divisible_by_eight(rng):
    with pytest.raises(ContractError):
        TinyClassifier(3, 12, rng)


def test_rejects_wrong_input_geometry(rng):
    model = TinyClassifier(3, 16, rng)
    with pytest.raises(DimensionError):
        model.predict(np.zeros((2, 1, 8, 8)))
    with pytest.raises(DimensionError):
        model.predict(np.zeros((2, 3, 16, 16)))


def test_images_to_batch_range_and_grayscale_guard():
    img = ImageBuffer.from_planes(np.full((1, 4, 4), 255.0))
    batch = images_to_batch([img])
    assert batch.shape == (1, 1, 4, 4)
    assert batch.max() == 1.0
    rgb = ImageBuffer.from_planes(np.zeros((3, 4, 4)))
    with pytest.raises(DimensionError):
        images_to_batch([rgb])


def test_train_rejects_mismatched_labels(corpus16):
    images, labels = corpus16
    with pytest.raises(ContractError):
        train_classifier(images, labels[:-1], num_classes=3, steps=1)


def test_training_separates_classes(corpus16):
    images, labels = corpus16
    model = train_classifier(images, labels, num_classes=3, steps=200, seed=0)
    assert classifier_accuracy(model, images, labels) > 0.85


def test_training_is_deterministic(corpus16):
    images, labels = corpus16
    a = train_classifier(images, labels, num_classes=3, steps=40, seed=3)
    b = train_classifier(images, labels, num_classes=3, steps=40, seed=3)
    for (_, pa), (_, pb) in zip(a.named_params(), b.named_params()):
        np.testing.assert_array_equal(pa.data, pb.data)


def test_checkpoint_roundtrip(tmp_path, corpus16):
    images, labels = corpus16
    model = train_classifier(images, labels, num_classes=3, steps=40, seed=1)
    path = tmp_path / "clf.npz"
    model.save(path)
    clone = TinyClassifier.load(path)
    assert clone.num_classes == 3 and clone.side == 16
    batch = images_to_batch(images)
    np.testing.assert_array_equal(model.predict(batch), clone.predict(batch))


def test_feature_extractor_shape_and_determinism(corpus16, rng):
    images, _ = corpus16
    ext = ClassifierFeatureExtractor(TinyClassifier(3, 16, rng))
    f1 = ext.features(images[0])
    f2 = ext.features(images[0])
    assert f1.shape == (ext.dim,)
    np.testing.assert_array_equal(f1, f2)
