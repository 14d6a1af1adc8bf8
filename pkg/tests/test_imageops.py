from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meshtex.imageops import (
    bilinear_sample,
    decode_png,
    encode_png,
    from_u8,
    png_b64,
    png_from_b64,
    resize,
    srgb_to_lab,
    to_u8,
)


def test_u8_round_trip_exact():
    img = np.arange(256, dtype=np.uint8).reshape(16, 16)
    np.testing.assert_array_equal(to_u8(from_u8(img)), img)


def test_png_round_trip_rgb(rng):
    img = rng.integers(0, 256, size=(20, 30, 3), dtype=np.uint8)
    out = decode_png(encode_png(img))
    assert out.dtype == np.float32
    np.testing.assert_array_equal(to_u8(out), img)


def test_png_b64_round_trip(rng):
    img = rng.integers(0, 256, size=(8, 8), dtype=np.uint8)
    np.testing.assert_array_equal(to_u8(png_from_b64(png_b64(img))), img)


def test_bilinear_sample_matches_manual():
    img = np.array([[0.0, 1.0], [2.0, 3.0]], dtype=np.float32)
    # halfway between all four pixels
    val = bilinear_sample(img, np.array([0.5]), np.array([0.5]))
    assert val[0] == pytest.approx(1.5)
    # on a pixel center
    assert bilinear_sample(img, np.array([1.0]), np.array([0.0]))[0] == pytest.approx(1.0)


def test_bilinear_sample_wrap_mode():
    img = np.array([[0.0, 1.0, 2.0]], dtype=np.float32).repeat(3, axis=0)
    wrapped = bilinear_sample(img, np.array([2.5]), np.array([0.0]), wrap=True)
    # halfway between last column (2) and wrapped first column (0)
    assert wrapped[0] == pytest.approx(1.0)


def test_srgb_to_lab_reference_colors():
    white = srgb_to_lab(np.ones((1, 1, 3), dtype=np.float32))[0, 0]
    np.testing.assert_allclose(white, [100.0, 0.0, 0.0], atol=0.01)
    black = srgb_to_lab(np.zeros((1, 1, 3), dtype=np.float32))[0, 0]
    np.testing.assert_allclose(black, [0.0, 0.0, 0.0], atol=0.01)
    # sRGB primary red, canonical D65 values
    red = srgb_to_lab(np.array([[[1.0, 0.0, 0.0]]], dtype=np.float32))[0, 0]
    np.testing.assert_allclose(red, [53.24, 80.09, 67.20], atol=0.05)


def test_resize_output_shape(rng):
    img = rng.random((16, 24, 3)).astype(np.float32)
    out = resize(img, (8, 12))
    assert out.shape == (8, 12, 3)
    gray = resize(img[..., 0], (4, 6))
    assert gray.shape == (4, 6)


@given(st.integers(0, 255))
def test_u8_float_conversion_is_stable(v):
    img = np.full((2, 2), v, dtype=np.uint8)
    assert (to_u8(from_u8(img)) == img).all()


@settings(deadline=None, max_examples=25)
@given(st.integers(1, 12), st.integers(1, 12))
def test_png_round_trip_arbitrary_sizes(h, w):
    img = (np.arange(h * w * 3, dtype=np.int64) % 256).astype(np.uint8).reshape(h, w, 3)
    np.testing.assert_array_equal(to_u8(decode_png(encode_png(img))), img)
