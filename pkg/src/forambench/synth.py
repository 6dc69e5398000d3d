"""Procedural foraminifera: a deterministic stand-in corpus.

Each image is a log-spiral of shaded elliptical chambers with a dark
aperture pit carved strictly inside the final chamber, plus additive texture
noise. The nine default classes differ in chamber count, spiral growth rate,
overall size, and noise level, so they are separable by shape cues that
survive 32x32 rendering. Ground-truth masks (0 background, 1 shell,
2 aperture) fall out of the geometry exactly.

Also here: a rule-based mask labeler (smooth, threshold, keep the largest
component, fill holes, find the dark pit) used to label generated images,
and a deliberately weaker two-threshold baseline for comparisons.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ContractError
from .image import ImageBuffer

SPIRAL_STEP = 0.9          # radians between consecutive chambers
CHAMBER_FILL = 0.55        # chamber radius as a fraction of its spiral radius
BACKGROUND_LEVEL = 30.0
SHELL_LEVEL = 150.0


@dataclass(frozen=True)
class SynthForamSpec:
    resolution: int = 32
    class_count: int = 9
    seed: int = 0

    def __post_init__(self):
        if self.resolution < 16:
            raise ContractError(
                f"resolution must be at least 16, got {self.resolution}")
        if self.class_count < 1:
            raise ContractError("need at least one class")


@dataclass(frozen=True)
class ClassGeometry:
    chambers: int
    growth: float          # log-spiral growth rate
    extent: float          # outer radius as a fraction of image side
    aperture_angle: float
    noise_sigma: float


def class_geometry(spec: SynthForamSpec, cls: int) -> ClassGeometry:
    if not 0 <= cls < spec.class_count:
        raise ContractError(f"class {cls} outside [0, {spec.class_count})")
    return ClassGeometry(
        chambers=6 + 3 * (cls % 3),
        growth=0.16 + 0.05 * ((cls // 3) % 3),
        extent=0.34 + 0.03 * ((cls // 3) % 3),
        aperture_angle=2.0 * math.pi * cls / spec.class_count,
        noise_sigma=4.0 + 2.0 * (cls % 3),
    )


def render_foram(spec: SynthForamSpec, cls: int, index: int) -> tuple[ImageBuffer, np.ndarray]:
    """One image plus its exact 3-class mask; bit-deterministic."""
    geom = class_geometry(spec, cls)
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, cls, index]))
    side = spec.resolution
    rot = rng.uniform(0.0, 2.0 * math.pi)
    scale_jit = rng.uniform(0.9, 1.1)
    cx = side / 2.0 + rng.uniform(-0.03, 0.03) * side
    cy = side / 2.0 + rng.uniform(-0.03, 0.03) * side

    # normalize the spiral so its outermost chamber rim lands at the extent
    theta_last = (geom.chambers - 1) * SPIRAL_STEP
    r0 = geom.extent * side * scale_jit / (
        (1.0 + CHAMBER_FILL) * math.exp(geom.growth * theta_last))

    yy, xx = np.mgrid[0:side, 0:side] + 0.5
    canvas = BACKGROUND_LEVEL + 6.0 * (xx / side)
    shell = np.zeros((side, side), dtype=bool)
    last_center = (cx, cy)
    last_radius = 1.0
    for i in range(geom.chambers):
        theta = i * SPIRAL_STEP
        r = r0 * math.exp(geom.growth * theta)
        rho = max(1.0, CHAMBER_FILL * r)
        px = cx + r * math.cos(theta + rot)
        py = cy + r * math.sin(theta + rot)
        d2 = ((xx - px) / rho) ** 2 + ((yy - py) / (0.9 * rho)) ** 2
        inside = d2 <= 1.0
        shade = SHELL_LEVEL + 70.0 * np.clip(1.0 - d2, 0.0, 1.0)
        canvas = np.where(inside, np.maximum(canvas, shade), canvas)
        shell |= inside
        last_center, last_radius = (px, py), rho

    # aperture: dark pit strictly interior to the final chamber
    alpha = geom.aperture_angle + rot + rng.uniform(-0.3, 0.3)
    ax = last_center[0] + 0.4 * last_radius * math.cos(alpha)
    ay = last_center[1] + 0.4 * last_radius * math.sin(alpha)
    ar = max(1.0, 0.32 * last_radius)   # pit stays clear of the chamber wall
    ad2 = ((xx - ax) / ar) ** 2 + ((yy - ay) / ar) ** 2
    aperture = (ad2 <= 1.0) & shell
    if not aperture.any():
        # sub-pixel chamber: mark the shell pixel nearest the pit center
        dist = np.where(shell, (xx - ax) ** 2 + (yy - ay) ** 2, np.inf)
        aperture.flat[int(np.argmin(dist))] = True
    canvas = np.where(aperture, 20.0 + 10.0 * np.clip(ad2, 0.0, 1.0), canvas)

    canvas = canvas + rng.normal(0.0, geom.noise_sigma, (side, side))
    mask = np.where(aperture, 2, np.where(shell, 1, 0)).astype(np.int64)
    return ImageBuffer.from_planes(canvas[np.newaxis]), mask


def synth_corpus(spec: SynthForamSpec, per_class: int):
    """Class-major list of (image, mask, class index) records."""
    if per_class < 1:
        raise ContractError(f"need at least one image per class, got {per_class}")
    return [(*render_foram(spec, cls, i), cls)
            for cls in range(spec.class_count) for i in range(per_class)]


def _otsu(values: np.ndarray) -> float:
    """Threshold maximizing inter-class variance over 8-bit levels."""
    hist = np.bincount(values.astype(np.uint8).reshape(-1), minlength=256).astype(np.float64)
    total = hist.sum()
    w0 = np.cumsum(hist)
    w1 = total - w0
    levels = np.arange(256, dtype=np.float64)
    m0 = np.cumsum(hist * levels)
    mt = m0[-1]
    with np.errstate(invalid="ignore", divide="ignore"):
        between = np.where((w0 > 0) & (w1 > 0),
                           (mt * w0 - total * m0) ** 2 / (w0 * w1), -1.0)
    return float(np.argmax(between))


def _largest_component(fg: np.ndarray) -> np.ndarray:
    labeled, count = ndimage.label(fg)
    if count == 0:
        return fg
    sizes = np.bincount(labeled.reshape(-1))
    sizes[0] = 0
    return labeled == int(np.argmax(sizes))


def rule_based_mask(img: ImageBuffer) -> np.ndarray:
    """Classical labeling of a foram image; the few-shot reference labeler."""
    plane = img.luma().samples[:, :, 0].astype(np.float64)
    # smoothing stabilizes the outline but would blur the tiny pit away,
    # so the dark-pit step runs on the raw plane
    smooth = ndimage.gaussian_filter(plane, 1.0)
    threshold = _otsu(smooth)
    fg = smooth > threshold
    if fg.any():
        fg = ndimage.binary_fill_holes(_largest_component(fg))
    mask = np.where(fg, 1, 0).astype(np.int64)
    dark = fg & (plane <= threshold)
    if dark.any():
        mask[_largest_component(dark)] = 2
    return mask


def threshold_baseline_mask(img: ImageBuffer) -> np.ndarray:
    """Two global thresholds, no morphology; the weak comparison point."""
    plane = img.luma().samples[:, :, 0].astype(np.float64)
    fg = plane > _otsu(plane)
    mask = np.where(fg, 1, 0).astype(np.int64)
    if fg.any():
        dark = fg & (plane < _otsu(plane[fg]))
        mask[dark] = 2
    return mask