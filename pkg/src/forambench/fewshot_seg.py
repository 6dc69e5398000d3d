"""Few-shot segmentation on top of generator features.

A trained generator's style-block activations, bilinearly upsampled to the
output resolution and stacked along channels, give every output pixel a
feature vector (a hypercolumn). A tiny per-pixel head (feature_dim -> 64 -> 3)
trained on a handful of labeled samples then segments generated images into
background / shell / aperture.

Masks on disk are 8-bit PGM with pixel values {0, 128, 255} standing for
classes {0, 1, 2}.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Tape, Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, ContractError, DimensionError
from .image import ImageBuffer
from .nn import Linear, Conv2d, Module
from .optim import Adam
from .style_gan import Generator

NUM_CLASSES = 3   # background, shell, aperture
MASK_VALUES = (0, 128, 255)


@dataclass(frozen=True)
class HypercolumnSample:
    """Feature field and image produced by one generator forward pass."""

    features: np.ndarray   # (feature_dim, h, w)
    image: ImageBuffer
    pass_id: int           # synthesis pass counter value for consistency checks


def hypercolumn_dim(gen: Generator) -> int:
    return 2 * sum(gen.cfg.schedule().values())


def extract_hypercolumns(gen: Generator, w, resolution: int | None = None,
                         noises: list[np.ndarray] | None = None) -> HypercolumnSample:
    """One fixed-noise forward pass returning aligned features and image."""
    if resolution is not None and resolution != gen.cfg.resolution:
        raise ConfigError(
            f"generator renders {gen.cfg.resolution}x{gen.cfg.resolution}, "
            f"caller expected {resolution}")
    w = w if isinstance(w, Tensor) else Tensor(w)
    if w.ndim != 2 or w.shape != (1, gen.cfg.dw):
        raise DimensionError(f"expected a (1, {gen.cfg.dw}) w-vector, got {w.shape}")
    img, acts = gen.synthesis(w, noises, capture=True)
    out = gen.cfg.resolution
    planes = []
    for a in acts:
        r = a.shape[2]
        planes.append(a.data if r == out
                      else ag.upsample_bilinear2d(a, out // r).data)
    features = np.concatenate([p[0] for p in planes], axis=0)
    return HypercolumnSample(features=features,
                             image=ImageBuffer.from_planes((img.data[0] + 1.0) * 127.5),
                             pass_id=gen.synthesis.passes)


class SegmentationHead(Module):
    """Per-pixel MLP over hypercolumns; optional 3x3-conv variant."""

    def __init__(self, feature_dim: int, rng: np.random.Generator,
                 hidden: int = 64, num_classes: int = NUM_CLASSES,
                 conv_head: bool = False):
        self.feature_dim = feature_dim
        self.hidden = hidden
        self.num_classes = num_classes
        self.conv_head = conv_head
        if conv_head:
            self.conv1 = Conv2d(feature_dim, hidden, 3, rng, pad=1)
            self.conv2 = Conv2d(hidden, num_classes, 1, rng)
        else:
            self.fc1 = Linear(feature_dim, hidden, rng, std=None)
            self.fc2 = Linear(hidden, num_classes, rng, std=None)

    def pixel_logits(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.feature_dim:
            raise DimensionError(
                f"features have dim {x.shape[1]}, head expects {self.feature_dim}")
        if self.conv_head:
            raise ContractError("conv head scores whole fields, not loose pixels")
        return self.fc2(ag.relu(self.fc1(x)))

    def field_logits(self, field: np.ndarray | Tensor) -> Tensor:
        field = field if isinstance(field, Tensor) else Tensor(field)
        if field.ndim != 3 or field.shape[0] != self.feature_dim:
            raise DimensionError(
                f"expected ({self.feature_dim}, h, w) field, got {field.shape}")
        d, h, w = field.shape
        if self.conv_head:
            out = self.conv2(ag.relu(self.conv1(ag.reshape(field, (1, d, h, w)))))
            return ag.reshape(out, (self.num_classes, h, w))
        pixels = ag.transpose(ag.reshape(field, (d, h * w)), (1, 0))
        logits = self.pixel_logits(pixels)
        return ag.transpose(ag.reshape(logits, (h, w, self.num_classes)), (2, 0, 1))


def segment(field: np.ndarray, head: SegmentationHead) -> tuple[np.ndarray, np.ndarray]:
    """Arg-max mask plus per-pixel class probabilities (classes, h, w)."""
    logits = head.field_logits(field)
    probs = ag.softmax(ag.transpose(logits, (1, 2, 0))).data   # (h, w, classes)
    probs = np.ascontiguousarray(probs.transpose(2, 0, 1))
    mask = probs.argmax(axis=0).astype(np.int64)
    return mask, probs


def _flatten_samples(samples) -> tuple[np.ndarray, np.ndarray, int]:
    if not samples:
        raise ContractError("need at least one labeled sample")
    dim = samples[0][0].shape[0]
    feats, labels = [], []
    for field, mask in samples:
        field = np.asarray(field, dtype=np.float64)
        mask = np.asarray(mask)
        if field.ndim != 3 or field.shape[0] != dim:
            raise DimensionError(f"inconsistent feature field shape {field.shape}")
        if mask.shape != field.shape[1:]:
            raise DimensionError(
                f"mask extent {mask.shape} != field extent {field.shape[1:]}")
        if mask.min() < 0 or mask.max() >= NUM_CLASSES:
            raise ContractError(f"mask values must lie in [0, {NUM_CLASSES})")
        feats.append(field.reshape(dim, -1).T)
        labels.append(mask.reshape(-1))
    return np.concatenate(feats), np.concatenate(labels), dim


def train_fewshot_head(samples, steps: int = 2000, lr: float = 1e-3,
                       pixels_per_class: int = 128, seed: int = 0,
                       hidden: int = 64, conv_head: bool = False) -> SegmentationHead:
    """Fit the head on pooled pixels with class-balanced minibatches."""
    feats, labels, dim = _flatten_samples(samples)
    rng = np.random.default_rng(seed)
    head = SegmentationHead(dim, rng, hidden=hidden, conv_head=conv_head)
    opt = Adam(head.params(), lr=lr)
    pools = [np.flatnonzero(labels == c) for c in range(NUM_CLASSES)]
    pools = [p for p in pools if p.size]
    if conv_head:
        return _train_conv_head(head, opt, samples, steps, rng)
    for _ in range(steps):
        idx = np.concatenate([rng.choice(p, size=pixels_per_class) for p in pools])
        x = Tensor(feats[idx])
        y = labels[idx]
        opt.zero_grad()
        with Tape() as tape:
            tape.backward(ag.cross_entropy(head.pixel_logits(x), y))
        opt.step()
    return head


def _train_conv_head(head, opt, samples, steps, rng) -> SegmentationHead:
    # non-default variant: whole-field loss, one random sample per step
    for _ in range(steps):
        field, mask = samples[rng.integers(len(samples))]
        opt.zero_grad()
        with Tape() as tape:
            logits = head.field_logits(np.asarray(field, dtype=np.float64))
            flat = ag.transpose(ag.reshape(logits, (head.num_classes, -1)), (1, 0))
            tape.backward(ag.cross_entropy(flat, np.asarray(mask).reshape(-1)))
        opt.step()
    return head


def pixel_accuracy(head: SegmentationHead, samples) -> float:
    total = hits = 0
    for field, mask in samples:
        pred, _ = segment(np.asarray(field, dtype=np.float64), head)
        hits += int((pred == np.asarray(mask)).sum())
        total += pred.size
    return hits / total


def iou(pred: np.ndarray, truth: np.ndarray, cls: int) -> float:
    """Intersection over union for one class; empty union counts as 1."""
    if pred.shape != truth.shape:
        raise DimensionError(f"mask shapes differ: {pred.shape} vs {truth.shape}")
    p = pred == cls
    t = truth == cls
    union = int(np.logical_or(p, t).sum())
    if union == 0:
        return 1.0
    return int(np.logical_and(p, t).sum()) / union


def mean_iou(pred: np.ndarray, truth: np.ndarray,
             num_classes: int = NUM_CLASSES) -> float:
    return sum(iou(pred, truth, c) for c in range(num_classes)) / num_classes


def mask_to_image(mask: np.ndarray) -> ImageBuffer:
    mask = np.asarray(mask)
    if mask.min() < 0 or mask.max() >= NUM_CLASSES:
        raise ContractError(f"mask values must lie in [0, {NUM_CLASSES})")
    lut = np.array(MASK_VALUES, dtype=np.uint8)
    return ImageBuffer(lut[mask])


def image_to_mask(img: ImageBuffer) -> np.ndarray:
    if img.channels != 1:
        raise ContractError("masks must be single-channel")
    plane = img.samples[:, :, 0]
    mask = np.full(plane.shape, -1, dtype=np.int64)
    for cls, value in enumerate(MASK_VALUES):
        mask[plane == value] = cls
    if (mask < 0).any():
        bad = sorted(set(np.unique(plane)) - set(MASK_VALUES))
        raise ContractError(f"mask contains non-class pixel values {bad}")
    return mask


_HEAD_CONFIG = ("feature_dim", "hidden", "num_classes", "conv_head")


def save_head(path: str | Path, head: SegmentationHead) -> None:
    state = {k: v.data for k, v in head.named_params()}
    for key in _HEAD_CONFIG:
        state[f"config.{key}"] = np.array(float(getattr(head, key)))
    save_checkpoint(path, state)


def load_head(path: str | Path) -> SegmentationHead:
    state = load_checkpoint(path)
    cfg = {k: int(state[f"config.{k}"].item()) for k in _HEAD_CONFIG}
    head = SegmentationHead(cfg["feature_dim"], np.random.default_rng(0),
                            hidden=cfg["hidden"], num_classes=cfg["num_classes"],
                            conv_head=bool(cfg["conv_head"]))
    head.load_state_dict({k: v for k, v in state.items()
                          if not k.startswith("config.")})
    return head