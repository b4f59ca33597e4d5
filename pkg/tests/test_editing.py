import io

import cv2
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from gramtex.editing import (CHROMA_QTABLE, LUMA_QTABLE, EditError, EditSpec, add_gaussian_noise, apply_edit,
                             apply_edits, bilinear_resize, blur_sigma, gaussian_blur, gaussian_kernel, jpeg_codec,
                             l0_smooth, nonzero_gradient_count, psnr, scaled_qtable)


def smooth_texture(seed, size=64):
    rng = np.random.default_rng(seed)
    field = cv2.GaussianBlur(rng.normal(size=(size, size)), (0, 0), 3.0)
    field = (field - field.mean()) / field.std()
    return np.clip(128 + 40 * field, 0, 255).astype(np.uint8)


def noisy_blocks(seed, size=32, amplitude=0.02):
    rng = np.random.default_rng(seed)
    base = np.kron(rng.uniform(0.2, 0.8, (4, 4)), np.ones((size // 4, size // 4)))
    return base + rng.uniform(-amplitude, amplitude, base.shape)


# resize

def test_resize_closed_form():
    out = bilinear_resize(np.array([[0.0, 1.0]]), 4, 1)
    np.testing.assert_allclose(out * 255, [[0, 63.75, 191.25, 255]])


def test_resize_same_size_and_constant():
    img = np.random.default_rng(0).integers(0, 256, (7, 9, 3)).astype(np.uint8)
    np.testing.assert_array_equal(bilinear_resize(img, 9, 7), img)
    flat = np.full((10, 14), 77, np.uint8)
    down = bilinear_resize(flat, 3, 5)
    assert down.shape == (5, 3) and np.all(down == 77)
    np.testing.assert_array_equal(bilinear_resize(down, 14, 10), flat)


@pytest.mark.parametrize("size", [(4, 4), (13, 7), (64, 64), (200, 150)])
def test_resize_matches_opencv_float(size):
    img = np.random.default_rng(1).random((37, 53)).astype(np.float32)
    w, h = size
    ours = bilinear_resize(img.astype(np.float64), w, h)
    ref = cv2.resize(img, (w, h), interpolation=cv2.INTER_LINEAR)
    np.testing.assert_allclose(ours, ref, atol=1e-5)


def test_resize_rejects_bad_size():
    with pytest.raises(EditError):
        bilinear_resize(np.zeros((4, 4)), 0, 3)


# blur

def test_blur_kernel_properties():
    for k in (1, 3, 5, 25, 51):
        taps = gaussian_kernel(k)
        assert abs(taps.sum() - 1) < 1e-9
        np.testing.assert_allclose(taps, taps[::-1])
    assert blur_sigma(3) == pytest.approx(0.8)
    assert blur_sigma(25) == pytest.approx(4.1)
    with pytest.raises(EditError):
        gaussian_kernel(4)


def test_blur_impulse_gives_kernel():
    img = np.zeros((9, 9))
    img[4, 4] = 1.0
    out = gaussian_blur(img, 3)
    x = np.array([-1.0, 0.0, 1.0])
    taps = np.exp(-x ** 2 / (2 * 0.8 ** 2))
    taps /= taps.sum()
    np.testing.assert_allclose(out[3:6, 3:6], np.outer(taps, taps), atol=1e-15)
    assert out.sum() == pytest.approx(1.0)


def test_blur_identity_and_constant():
    img = np.random.default_rng(2).integers(0, 256, (12, 12)).astype(np.uint8)
    np.testing.assert_array_equal(gaussian_blur(img, 1), img)
    assert np.all(gaussian_blur(np.full((30, 30, 3), 201, np.uint8), 25) == 201)


@pytest.mark.parametrize("k", [3, 7, 25])
def test_blur_matches_opencv(k):
    img = np.random.default_rng(k).random((40, 33))
    ref = cv2.GaussianBlur(img, (k, k), sigmaX=blur_sigma(k), sigmaY=blur_sigma(k),
                           borderType=cv2.BORDER_REFLECT_101)
    np.testing.assert_allclose(gaussian_blur(img, k), ref, atol=1e-12)


# noise

def test_noise_statistics_and_determinism():
    img = np.full((256, 256), 128, np.uint8)
    out = add_gaussian_noise(img, 5.0, seed=3)
    diff = out.astype(float) - 128
    assert abs(diff.mean()) < 0.5
    assert abs(diff.std() - 5) < 0.5
    np.testing.assert_array_equal(out, add_gaussian_noise(img, 5.0, seed=3))
    assert not np.array_equal(out, add_gaussian_noise(img, 5.0, seed=4))
    np.testing.assert_array_equal(add_gaussian_noise(img, 0.0, seed=3), img)


def test_noise_clamps():
    out = add_gaussian_noise(np.full((64, 64), 255, np.uint8), 20.0, seed=0)
    assert out.max() == 255 and out.min() < 255
    f = add_gaussian_noise(np.zeros((16, 16)), 20.0, seed=0)
    assert f.min() == 0.0 and f.max() <= 1.0


# jpeg

def test_qtable_scaling():
    np.testing.assert_array_equal(scaled_qtable(LUMA_QTABLE, 50), LUMA_QTABLE)
    assert np.all(scaled_qtable(LUMA_QTABLE, 100) == 1)
    assert scaled_qtable(LUMA_QTABLE, 75)[0, 0] == 8
    assert scaled_qtable(CHROMA_QTABLE, 1).max() == 255
    for q in (0, 101):
        with pytest.raises(EditError):
            scaled_qtable(LUMA_QTABLE, q)


def test_jpeg_quality_100_psnr():
    rng = np.random.default_rng(5)
    for img in (rng.integers(0, 256, (40, 37)).astype(np.uint8),
                rng.integers(0, 256, (24, 24, 3)).astype(np.uint8),
                smooth_texture(0)):
        assert psnr(jpeg_codec(img, 100), img) >= 45


@pytest.mark.parametrize("q", [10, 50, 75, 95])
def test_jpeg_idempotent_on_natural_content(q):
    img = smooth_texture(q)
    once = jpeg_codec(img, q)
    twice = jpeg_codec(once, q)
    assert np.max(np.abs(once.astype(int) - twice.astype(int))) <= 1


def test_jpeg_constant_images():
    # the DC step at q >= 75 is at most 8, which divides 8 * (v - 128) exactly
    for v in (0, 7, 128, 200, 255):
        for q in (75, 90, 100):
            assert np.all(jpeg_codec(np.full((16, 16), v, np.uint8), q) == v)
    assert np.all(jpeg_codec(np.full((16, 16), 128, np.uint8), 1) == 128)
    # coarser DC steps round the block mean to a multiple of step / 8
    out = jpeg_codec(np.full((16, 16), 7, np.uint8), 10)
    assert np.ptp(out) == 0
    assert abs(int(out[0, 0]) - 7) <= scaled_qtable(LUMA_QTABLE, 10)[0, 0] / 16 + 1


def test_jpeg_ramp_shows_block_edges():
    ramp = np.tile(np.arange(256, dtype=np.uint8), (16, 1))
    out = jpeg_codec(ramp, 10)
    err = np.abs(out.astype(int) - ramp)
    assert err.max() > 0
    steps = np.abs(np.diff(out[8].astype(int)))
    assert steps[7::8].mean() > steps[np.arange(255) % 8 != 7].mean()


def test_jpeg_close_to_libjpeg():
    img = np.stack([smooth_texture(s) for s in (1, 2, 3)], axis=-1)
    buf = io.BytesIO()
    Image.fromarray(img).save(buf, format="JPEG", quality=75, subsampling=0)
    ref = np.asarray(Image.open(io.BytesIO(buf.getvalue())).convert("RGB"))
    ours = jpeg_codec(img, 75)
    # libjpeg uses a fixed-point DCT, so agreement is approximate
    assert np.mean(np.abs(ours.astype(int) - ref.astype(int))) < 1.0
    assert psnr(ours, ref) > 40


def test_jpeg_float_and_padding():
    img = np.random.default_rng(0).random((13, 21))
    out = jpeg_codec(img, 90)
    assert out.shape == img.shape and out.dtype == img.dtype
    assert np.all((out * 255) == np.round(out * 255))


# L0

def test_l0_zero_lambda_is_identity():
    img = noisy_blocks(0)
    np.testing.assert_array_equal(l0_smooth(img, 0.0), img)


def test_l0_keeps_a_strong_edge():
    img = np.zeros((32, 32))
    img[:, 16:] = 1.0
    np.testing.assert_allclose(l0_smooth(img, 0.02), img, atol=1e-3)


def test_l0_flattens_small_texture():
    img = noisy_blocks(1)
    out = l0_smooth(img, 0.02)
    assert nonzero_gradient_count(out, 1e-3) < nonzero_gradient_count(img, 1e-3)
    assert nonzero_gradient_count(out) <= nonzero_gradient_count(img)
    u8 = (np.clip(img, 0, 1) * 255 + 0.5).astype(np.uint8)
    assert nonzero_gradient_count(l0_smooth(u8, 0.02)) < nonzero_gradient_count(u8) / 2


def test_l0_color_and_non_finite():
    rgb = np.stack([noisy_blocks(s) for s in (2, 3, 4)], axis=-1)
    out = l0_smooth(rgb, 0.02)
    assert out.shape == rgb.shape
    with pytest.raises(ValueError):
        l0_smooth(np.full((8, 8), np.nan), 0.02)


# specs

def test_edit_spec_validation_and_json():
    with pytest.raises(EditError):
        EditSpec("noise", {"std": 5})
    with pytest.raises(EditError):
        EditSpec("jpeg", {"quality": 75}, seed=1)
    with pytest.raises(EditError):
        EditSpec("sharpen")
    with pytest.raises(EditError):
        EditSpec("blur", {"kernel_size": 4})
    with pytest.raises(EditError):
        EditSpec("resize", {"width": 4})
    for spec in (EditSpec("noise", {"std": 5.0}, seed=3), EditSpec("resize", {"factor": 8}),
                 EditSpec("identity"), EditSpec("l0", {"lam": 0.01})):
        assert EditSpec.from_json(spec.to_json()) == spec
    assert EditSpec("jpeg", {"quality": 75}).to_dict() == {"kind": "jpeg", "quality": 75}


def test_apply_edit_dispatch():
    img = smooth_texture(9)
    assert apply_edit(img, EditSpec("identity")) is img
    np.testing.assert_array_equal(apply_edit(img, EditSpec("jpeg", {"quality": 60})), jpeg_codec(img, 60))
    np.testing.assert_array_equal(apply_edit(img, EditSpec("blur", {"kernel_size": 5})), gaussian_blur(img, 5))
    assert apply_edit(img, EditSpec("resize", {"factor": 8})).shape == (8, 8)
    assert apply_edit(img, EditSpec("resize", {"width": 10, "height": 6})).shape == (6, 10)
    assert apply_edit(img, EditSpec("resize", {"factor": 4, "restore": True})).shape == img.shape
    chain = [EditSpec("jpeg", {"quality": 75}), EditSpec("resize", {"factor": 8})]
    np.testing.assert_array_equal(apply_edits(img, chain), apply_edit(apply_edit(img, chain[0]), chain[1]))


@settings(max_examples=20, deadline=None)
@given(arrays(np.uint8, st.tuples(st.integers(1, 20), st.integers(1, 20))),
       st.sampled_from([EditSpec("jpeg", {"quality": 30}), EditSpec("blur", {"kernel_size": 5}),
                        EditSpec("noise", {"std": 5.0}, seed=1), EditSpec("resize", {"factor": 2}),
                        EditSpec("l0", {"lam": 0.05})]))
def test_edits_are_deterministic_valid_images(img, spec):
    a = apply_edit(img, spec)
    assert a.dtype == np.uint8 and a.ndim == 2
    np.testing.assert_array_equal(a, apply_edit(img, spec))
