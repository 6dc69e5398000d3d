"""Image quality metrics and feature-space distribution distance.

PSNR and SSIM operate on 8-bit sample values. The distribution distance
fits a Gaussian (mean + unbiased covariance) to feature vectors extracted
from each image set and evaluates the Frechet formula with PSD-safe matrix
square roots computed by a hand-rolled cyclic Jacobi eigensolver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError, NumericsError
from .image import ImageBuffer

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = (0.01 * 255.0) ** 2
SSIM_C2 = (0.03 * 255.0) ** 2


@dataclass(frozen=True)
class QualityReport:
    """PSNR (+inf sentinel for identical images), optional SSIM, raw MSE."""

    psnr_db: float
    ssim: float | None
    mse: float


def _check_same_geometry(ref: ImageBuffer, test: ImageBuffer) -> None:
    if ref.samples.shape != test.samples.shape:
        raise DimensionError(
            f"image geometry mismatch: {ref.samples.shape} vs {test.samples.shape}")


def psnr(ref: ImageBuffer, test: ImageBuffer) -> QualityReport:
    """Peak signal-to-noise ratio over all 8-bit samples."""
    _check_same_geometry(ref, test)
    diff = ref.samples.astype(np.float64) - test.samples.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return QualityReport(psnr_db=math.inf, ssim=None, mse=0.0)
    return QualityReport(psnr_db=10.0 * math.log10(255.0 ** 2 / mse), ssim=None, mse=mse)


def _gaussian_window() -> np.ndarray:
    r = SSIM_WINDOW // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-(x * x) / (2.0 * SSIM_SIGMA ** 2))
    return g / g.sum()


def _windowed_mean(plane: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable Gaussian-weighted local mean, valid positions only."""
    h = np.lib.stride_tricks.sliding_window_view(plane, SSIM_WINDOW, axis=1) @ g
    return np.lib.stride_tricks.sliding_window_view(h, SSIM_WINDOW, axis=0) @ g


def ssim(ref: ImageBuffer, test: ImageBuffer) -> float:
    """Mean local structural similarity; color images are reduced to luma."""
    _check_same_geometry(ref, test)
    if ref.height < SSIM_WINDOW or ref.width < SSIM_WINDOW:
        raise ContractError(
            f"image {ref.width}x{ref.height} smaller than the {SSIM_WINDOW}-pixel window")
    x = ref.luma().samples[:, :, 0].astype(np.float64)
    y = test.luma().samples[:, :, 0].astype(np.float64)
    g = _gaussian_window()
    mu_x = _windowed_mean(x, g)
    mu_y = _windowed_mean(y, g)
    var_x = _windowed_mean(x * x, g) - mu_x * mu_x
    var_y = _windowed_mean(y * y, g) - mu_y * mu_y
    cov = _windowed_mean(x * y, g) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (var_x + var_y + SSIM_C2)
    return float(np.mean(num / den))


def quality_report(ref: ImageBuffer, test: ImageBuffer) -> QualityReport:
    base = psnr(ref, test)
    return QualityReport(psnr_db=base.psnr_db, ssim=ssim(ref, test), mse=base.mse)


class FeatureExtractor:
    """Deterministic map from an image to a fixed-dimension feature vector."""

    dim: int

    def features(self, img: ImageBuffer) -> np.ndarray:
        raise NotImplementedError


class PooledPixelExtractor(FeatureExtractor):
    """Average-pool each channel to an 8x8 grid and flatten (d = 64*channels)."""

    GRID = 8

    def __init__(self, channels: int = 1):
        if channels not in (1, 3):
            raise ContractError(f"channels must be 1 or 3, got {channels}")
        self.channels = channels
        self.dim = self.GRID * self.GRID * channels

    def features(self, img: ImageBuffer) -> np.ndarray:
        if img.channels != self.channels:
            raise DimensionError(
                f"extractor expects {self.channels}-channel images, got {img.channels}")
        if img.height < self.GRID or img.width < self.GRID:
            raise ContractError(
                f"image {img.width}x{img.height} smaller than the {self.GRID}x{self.GRID} grid")
        planes = img.to_planes()
        out = np.empty((self.channels, self.GRID, self.GRID))
        h, w = img.height, img.width
        for i in range(self.GRID):
            for j in range(self.GRID):
                cell = planes[:, (i * h) // self.GRID:((i + 1) * h) // self.GRID,
                              (j * w) // self.GRID:((j + 1) * w) // self.GRID]
                out[:, i, j] = cell.mean(axis=(1, 2))
        return out.reshape(-1)


@dataclass(frozen=True)
class FeatureDistribution:
    """Gaussian fit to a feature sample: mean, unbiased covariance, count."""

    mean: np.ndarray
    cov: np.ndarray
    n: int

    def __post_init__(self):
        if self.mean.ndim != 1 or self.cov.shape != (self.mean.size, self.mean.size):
            raise DimensionError(
                f"inconsistent distribution shapes {self.mean.shape} / {self.cov.shape}")
        if self.n < 2:
            raise ContractError(f"need at least 2 samples, got {self.n}")
        if np.max(np.abs(self.cov - self.cov.T)) > 1e-10:
            raise NumericsError("covariance is not symmetric")


def fit_feature_distribution(images, extractor: FeatureExtractor) -> FeatureDistribution:
    images = list(images)
    if len(images) < 2:
        raise ContractError(f"need at least 2 images to fit, got {len(images)}")
    feats = np.stack([np.asarray(extractor.features(img), dtype=np.float64)
                      for img in images])
    mean = feats.mean(axis=0)
    centered = feats - mean
    cov = centered.T @ centered / (len(images) - 1)
    cov = (cov + cov.T) / 2.0
    return FeatureDistribution(mean=mean, cov=cov, n=len(images))


def jacobi_eigh(a: np.ndarray, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues, eigenvectors) with a ~ V @ diag(w) @ V.T. Sweeps
    stop when the off-diagonal Frobenius norm falls below 1e-12 relative to
    the matrix norm (or after max_sweeps).
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {a.shape}")
    if np.max(np.abs(a - a.T), initial=0.0) > 1e-10 * max(1.0, np.max(np.abs(a))):
        raise NumericsError("matrix is not symmetric")
    n = a.shape[0]
    a = (a + a.T) / 2.0
    v = np.eye(n)
    if n == 1:
        return a.diagonal().copy(), v
    stop = 1e-12 * max(1.0, float(np.linalg.norm(a, "fro")))
    for _ in range(max_sweeps):
        off = math.sqrt(max(0.0, float((a * a).sum() - (a.diagonal() ** 2).sum())))
        if off < stop:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = float(a[p, q])
                if apq == 0.0:
                    continue
                # entries negligible against the diagonal rotate by ~0; zero
                # them directly to avoid overflow in the theta quotient
                if abs(apq) * 1e15 < abs(a[p, p]) + abs(a[q, q]):
                    a[p, q] = a[q, p] = 0.0
                    continue
                theta = (float(a[q, q]) - float(a[p, p])) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.hypot(theta, 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                col_p, col_q = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p, row_q = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                vec_p, vec_q = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vec_p - s * vec_q
                v[:, q] = s * vec_p + c * vec_q
    return a.diagonal().copy(), v


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = jacobi_eigh(m)
    w = np.clip(w, 0.0, None)
    root = (v * np.sqrt(w)) @ v.T
    return (root + root.T) / 2.0


def frechet_distance(p: FeatureDistribution, q: FeatureDistribution) -> float:
    """Frechet distance between two Gaussian feature fits; always >= 0."""
    if p.mean.size != q.mean.size:
        raise DimensionError(
            f"feature dimensions differ: {p.mean.size} vs {q.mean.size}")
    diff = p.mean - q.mean
    p_half = _psd_sqrt(p.cov)
    inner = p_half @ q.cov @ p_half
    cross = _psd_sqrt((inner + inner.T) / 2.0)
    value = float(diff @ diff + np.trace(p.cov) + np.trace(q.cov) - 2.0 * np.trace(cross))
    return max(value, 0.0)
