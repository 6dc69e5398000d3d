"""Small convolutional classifier over grayscale images.

Besides predicting class labels it exposes its 64-dim penultimate activation
as a feature vector, so a trained checkpoint can serve as the feature
extractor for distribution-distance evaluation.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Tape, Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ContractError, DimensionError
from .image import ImageBuffer
from .metrics import FeatureExtractor
from .nn import Conv2d, Linear, Module
from .optim import Adam

FEATURE_DIM = 64


class TinyClassifier(Module):
    """Three stride-2 convs, a 64-unit feature layer, and a logit head."""

    def __init__(self, num_classes: int, side: int, rng: np.random.Generator):
        if side % 8 != 0:
            raise ContractError(f"input side must be divisible by 8, got {side}")
        self.num_classes = num_classes
        self.side = side
        # 4x4 kernels: stride-2 halving with pad 1 keeps conv extents integral
        self.conv1 = Conv2d(1, 8, 4, rng, stride=2, pad=1)
        self.conv2 = Conv2d(8, 16, 4, rng, stride=2, pad=1)
        self.conv3 = Conv2d(16, 32, 4, rng, stride=2, pad=1)
        self.fc_feat = Linear(32 * (side // 8) ** 2, FEATURE_DIM, rng)
        self.fc_out = Linear(FEATURE_DIM, num_classes, rng)

    def _check_input(self, x: Tensor) -> None:
        if x.ndim != 4 or x.shape[1] != 1 or x.shape[2:] != (self.side, self.side):
            raise DimensionError(
                f"expected (n, 1, {self.side}, {self.side}) input, got {x.shape}")

    def features(self, x: Tensor) -> Tensor:
        """Penultimate activation, shape (n, 64)."""
        self._check_input(x)
        h = ag.leaky_relu(self.conv1(x))
        h = ag.leaky_relu(self.conv2(h))
        h = ag.leaky_relu(self.conv3(h))
        h = ag.reshape(h, (h.shape[0], -1))
        return ag.leaky_relu(self.fc_feat(h))

    def logits(self, x: Tensor) -> Tensor:
        return self.fc_out(self.features(x))

    def predict(self, images: np.ndarray) -> np.ndarray:
        out = self.logits(Tensor(images))
        return np.argmax(out.data, axis=1)

    def save(self, path: str | Path) -> None:
        state = {name: t.data for name, t in self.named_params()}
        state["config.num_classes"] = np.array(float(self.num_classes))
        state["config.side"] = np.array(float(self.side))
        save_checkpoint(path, state)

    @classmethod
    def load(cls, path: str | Path) -> "TinyClassifier":
        state = load_checkpoint(path)
        model = cls(int(state.pop("config.num_classes").item()),
                    int(state.pop("config.side").item()),
                    np.random.default_rng(0))
        model.load_state_dict(state)
        return model


def images_to_batch(images: list[ImageBuffer]) -> np.ndarray:
    """Stack grayscale images into an (n, 1, h, w) float array in [-1, 1]."""
    planes = []
    for img in images:
        if img.channels != 1:
            raise DimensionError("classifier expects grayscale images")
        planes.append(img.to_planes())
    return np.stack(planes) / 127.5 - 1.0


def train_classifier(images: list[ImageBuffer], labels: np.ndarray, num_classes: int,
                     steps: int = 600, batch_size: int = 32, lr: float = 1e-3,
                     seed: int = 0) -> TinyClassifier:
    if len(images) != len(labels):
        raise ContractError(f"{len(images)} images but {len(labels)} labels")
    if len(images) < batch_size:
        batch_size = len(images)
    rng = np.random.default_rng(seed)
    model = TinyClassifier(num_classes, images[0].height, rng)
    data = images_to_batch(images)
    labels = np.asarray(labels, dtype=np.int64)
    opt = Adam(model.params(), lr=lr)
    for _ in range(steps):
        idx = rng.choice(len(images), size=batch_size, replace=False)
        opt.zero_grad()
        with Tape() as tape:
            loss = ag.cross_entropy(model.logits(Tensor(data[idx])), labels[idx])
            tape.backward(loss)
        opt.step()
    return model


def classifier_accuracy(model: TinyClassifier, images: list[ImageBuffer],
                        labels: np.ndarray) -> float:
    pred = model.predict(images_to_batch(images))
    return float(np.mean(pred == np.asarray(labels)))


class ClassifierFeatureExtractor(FeatureExtractor):
    """Adapter exposing a trained classifier's penultimate layer per image."""

    def __init__(self, model: TinyClassifier):
        self.model = model
        self.dim = FEATURE_DIM

    def features(self, img: ImageBuffer) -> np.ndarray:
        batch = images_to_batch([img])
        return self.model.features(Tensor(batch)).data[0].copy()
