"""Classical separable resampling and the multiscale degradation protocol.

Coordinate convention: output pixel i maps to source coordinate
(i + 0.5) * (n_in / n_out) - 0.5. When downscaling, kernels are stretched by
the scale factor for anti-aliasing. Tap coordinates outside the image clamp
to the border pixel, and each output pixel's weights are renormalized to sum
to one, so constant images stay constant everywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ContractError, DimensionError
from .image import ImageBuffer

_SUPPORT = {"nearest": 0.5, "bilinear": 1.0, "bicubic": 2.0, "lanczos": 3.0}

BICUBIC_A = -0.5   # Keys parameter
LANCZOS_A = 3


@dataclass(frozen=True)
class KernelSpec:
    """1-D interpolation kernel identified by name; radius fixed per kind."""

    kind: str

    def __post_init__(self):
        if self.kind not in _SUPPORT:
            raise ContractError(f"unknown kernel kind {self.kind!r}")

    @property
    def support(self) -> float:
        return _SUPPORT[self.kind]


def kernel_weight(spec: KernelSpec, x: float) -> float:
    """Kernel value at offset x; zero outside the support radius."""
    ax = abs(x)
    if spec.kind == "nearest":
        return 1.0 if -0.5 <= x < 0.5 else 0.0
    if spec.kind == "bilinear":
        return max(0.0, 1.0 - ax)
    if spec.kind == "bicubic":
        a = BICUBIC_A
        if ax <= 1.0:
            return (a + 2.0) * ax ** 3 - (a + 3.0) * ax ** 2 + 1.0
        if ax < 2.0:
            return a * ax ** 3 - 5.0 * a * ax ** 2 + 8.0 * a * ax - 4.0 * a
        return 0.0
    # lanczos: force exact zeros at integer taps (float sin(pi*k) is not 0)
    if ax >= LANCZOS_A:
        return 0.0
    if x == round(x):
        return 1.0 if x == 0 else 0.0
    px = math.pi * x
    return LANCZOS_A * math.sin(px) * math.sin(px / LANCZOS_A) / (px * px)


@lru_cache(maxsize=256)
def _axis_matrix(n_in: int, n_out: int, kind: str) -> np.ndarray:
    """Dense (n_out, n_in) row-normalized weight matrix for one axis."""
    spec = KernelSpec(kind)
    scale = n_in / n_out
    stretch = max(1.0, scale)
    reach = spec.support * stretch
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        src = (i + 0.5) * scale - 0.5
        lo = math.ceil(src - reach)
        hi = math.floor(src + reach)
        for j in range(lo, hi + 1):
            w = kernel_weight(spec, (j - src) / stretch)
            if w != 0.0:
                m[i, min(max(j, 0), n_in - 1)] += w
        total = m[i].sum()
        if total == 0.0:   # can only happen for nearest at half-open boundary
            m[i, min(max(round(src), 0), n_in - 1)] = 1.0
        else:
            m[i] /= total
    m.flags.writeable = False   # cached and shared
    return m


def resize_plane(plane: np.ndarray, out_w: int, out_h: int, spec: KernelSpec) -> np.ndarray:
    """Separable float resampling: horizontal pass, then vertical pass."""
    if out_w < 1 or out_h < 1:
        raise DimensionError(f"target size must be positive, got {out_w}x{out_h}")
    p = np.asarray(plane, dtype=np.float64)
    if p.ndim != 2:
        raise DimensionError(f"expected a 2-D plane, got shape {p.shape}")
    h, w = p.shape
    p = p @ _axis_matrix(w, out_w, spec.kind).T
    return _axis_matrix(h, out_h, spec.kind) @ p


def resize(img: ImageBuffer, out_w: int, out_h: int, spec: KernelSpec) -> ImageBuffer:
    planes = img.to_planes()
    out = np.stack([resize_plane(planes[c], out_w, out_h, spec)
                    for c in range(planes.shape[0])])
    return ImageBuffer.from_planes(out)


def degrade_chain(img: ImageBuffer) -> dict[int, ImageBuffer]:
    """Lanczos downscales to 1/2, 1/4, 1/8 side, each taken from the original."""
    if img.width != img.height:
        raise ContractError(f"degradation input must be square, got {img.width}x{img.height}")
    if img.width % 8 != 0:
        raise ContractError(f"side must be divisible by 8, got {img.width}")
    spec = KernelSpec("lanczos")
    return {f: resize(img, img.width // f, img.height // f, spec) for f in (2, 4, 8)}
