import math

import numpy as np
import pytest

from forambench.errors import ContractError, DimensionError
from forambench.image import ImageBuffer
from forambench.resample import (KernelSpec, _axis_matrix, degrade_chain,
                                 kernel_weight, resize, resize_plane)

ALL_KINDS = ["nearest", "bilinear", "bicubic", "lanczos"]
INTERPOLATING = ["bilinear", "bicubic", "lanczos"]


def test_kernel_spec_rejects_unknown():
    with pytest.raises(ContractError):
        KernelSpec("mitchell")


def test_kernel_support_radii():
    assert KernelSpec("nearest").support == 0.5
    assert KernelSpec("bilinear").support == 1.0
    assert KernelSpec("bicubic").support == 2.0
    assert KernelSpec("lanczos").support == 3.0


def test_lanczos_closed_forms():
    k = KernelSpec("lanczos")
    assert kernel_weight(k, 0.0) == 1.0
    assert kernel_weight(k, 1.0) == 0.0
    assert kernel_weight(k, -2.0) == 0.0
    assert kernel_weight(k, 3.5) == 0.0
    # 3*sin(pi/2)*sin(pi/6)/(pi/2)^2 = 6/pi^2, derived by hand
    assert abs(kernel_weight(k, 0.5) - 6.0 / math.pi ** 2) < 1e-15


def test_bicubic_closed_forms():
    k = KernelSpec("bicubic")
    assert kernel_weight(k, 0.0) == 1.0
    assert kernel_weight(k, 0.5) == 0.5625
    assert kernel_weight(k, 1.5) == -0.0625
    assert kernel_weight(k, 2.0) == 0.0


def test_bilinear_closed_forms():
    k = KernelSpec("bilinear")
    assert kernel_weight(k, 0.25) == 0.75
    assert kernel_weight(k, -0.25) == 0.75
    assert kernel_weight(k, 1.0) == 0.0


def test_nearest_half_open_window():
    k = KernelSpec("nearest")
    assert kernel_weight(k, 0.0) == 1.0
    assert kernel_weight(k, -0.5) == 1.0
    assert kernel_weight(k, 0.5) == 0.0
    assert kernel_weight(k, 0.49) == 1.0


@pytest.mark.parametrize("kind", INTERPOLATING)
def test_interpolating_property(kind):
    k = KernelSpec(kind)
    assert kernel_weight(k, 0.0) == 1.0
    for i in range(1, int(k.support) + 1):
        assert kernel_weight(k, float(i)) == 0.0
        assert kernel_weight(k, float(-i)) == 0.0


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_same_size_resize_is_identity(rng, kind):
    img = ImageBuffer(rng.integers(0, 256, size=(6, 9, 1), dtype=np.uint8))
    assert resize(img, 9, 6, KernelSpec(kind)) == img


@pytest.mark.parametrize("kind", ALL_KINDS)
@pytest.mark.parametrize("target", [(3, 5), (9, 9), (17, 4)])
def test_constant_preserved_any_size(kind, target):
    img = ImageBuffer(np.full((8, 8, 3), 167, dtype=np.uint8))
    out = resize(img, *target, KernelSpec(kind))
    assert np.all(out.samples == 167)


def test_nearest_upscale_replicates_blocks():
    img = ImageBuffer(np.array([[1, 2], [3, 4]], dtype=np.uint8))
    out = resize(img, 4, 4, KernelSpec("nearest"))
    expect = np.repeat(np.repeat([[1, 2], [3, 4]], 2, axis=0), 2, axis=1)
    np.testing.assert_array_equal(out.samples[:, :, 0], expect)


@pytest.mark.parametrize("kind", ["bilinear", "bicubic"])
def test_ramp_exact_away_from_border(kind):
    n = 16
    plane = np.tile(np.arange(n, dtype=np.float64) * 10.0, (4, 1))
    out = resize_plane(plane, 2 * n, 4, KernelSpec(kind))
    src = (np.arange(2 * n) + 0.5) * 0.5 - 0.5
    for i in range(5, 2 * n - 5):
        assert abs(out[2, i] - src[i] * 10.0) < 1e-9


@pytest.mark.parametrize("kind", ALL_KINDS)
@pytest.mark.parametrize("n_in,n_out", [(16, 16), (16, 32), (32, 16), (11, 7), (7, 23)])
def test_weight_rows_sum_to_one(kind, n_in, n_out):
    m = _axis_matrix(n_in, n_out, kind)
    np.testing.assert_allclose(m.sum(axis=1), 1.0, atol=1e-12)


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_separability_two_pass_equivalence(rng, kind):
    plane = rng.random((12, 10)) * 255.0
    spec = KernelSpec(kind)
    full = resize_plane(plane, 17, 7, spec)
    horizontal = resize_plane(plane, 17, 12, spec)
    two_pass = resize_plane(horizontal, 17, 7, spec)
    assert np.array_equal(full, two_pass)


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_down_then_up_constant_identity(kind):
    img = ImageBuffer(np.full((12, 12, 1), 58, dtype=np.uint8))
    spec = KernelSpec(kind)
    assert resize(resize(img, 6, 6, spec), 12, 12, spec) == img


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_checkerboard_antialiasing(kind):
    yy, xx = np.indices((24, 24))
    board = ((yy + xx) % 2 * 255).astype(np.uint8)
    out = resize(ImageBuffer(board), 12, 12, KernelSpec(kind))
    # mid-gray 127.5 within one quantization step; border pixels excluded
    # because clamped supports see an unbalanced black/white mix
    core = out.samples[3:-3, 3:-3]
    assert np.all(core >= 127) and np.all(core <= 128)


def test_resize_rejects_zero_target(rng):
    img = ImageBuffer(rng.integers(0, 256, size=(4, 4, 1), dtype=np.uint8))
    with pytest.raises(DimensionError):
        resize(img, 0, 4, KernelSpec("bilinear"))


def test_degrade_chain_desk_scale(rng):
    img = ImageBuffer(rng.integers(0, 256, size=(32, 32, 1), dtype=np.uint8))
    out = degrade_chain(img)
    assert {f: (o.width, o.height) for f, o in out.items()} == \
        {2: (16, 16), 4: (8, 8), 8: (4, 4)}


def test_degrade_chain_full_scale(rng):
    img = ImageBuffer(rng.integers(0, 256, size=(800, 800, 1), dtype=np.uint8))
    out = degrade_chain(img)
    assert (out[2].width, out[4].width, out[8].width) == (400, 200, 100)
    # each scale comes straight from the original, not from the previous stage
    spec = KernelSpec("lanczos")
    assert out[4] == resize(img, 200, 200, spec)
    assert out[8] == resize(img, 100, 100, spec)


def test_degrade_chain_rejects_bad_sides(rng):
    with pytest.raises(ContractError):
        degrade_chain(ImageBuffer(rng.integers(0, 256, size=(30, 30, 1), dtype=np.uint8)))
    with pytest.raises(ContractError):
        degrade_chain(ImageBuffer(rng.integers(0, 256, size=(32, 16, 1), dtype=np.uint8)))
