"""Grayscale image container and PNG round trips."""
from __future__ import annotations

import numpy as np
import pytest

from wafersem import SemImage, ValidationError, load_image, save_png


def test_accessors():
    img = SemImage(np.zeros((10, 20)))
    assert (img.width, img.height) == (20, 10)
    assert img.pixel_size_nm == 0.8


def test_rejects_bad_shapes_and_ranges():
    with pytest.raises(ValidationError):
        SemImage(np.zeros((4, 4, 3)))
    with pytest.raises(ValidationError):
        SemImage(np.full((4, 4), 1.5))
    with pytest.raises(ValidationError):
        SemImage(np.full((4, 4), -0.1))
    with pytest.raises(ValidationError):
        SemImage(np.zeros((4, 4)), pixel_size_nm=0.0)


def test_to_uint8_rounds():
    img = SemImage(np.array([[0.0, 0.5, 1.0]]))
    assert img.to_uint8().tolist() == [[0, 128, 255]]


def test_with_pixels_keeps_metadata():
    img = SemImage(np.zeros((4, 4)), pixel_size_nm=1.2)
    out = img.with_pixels(np.ones((4, 4)))
    assert out.pixel_size_nm == 1.2
    assert out.pixels.max() == 1.0


def test_png_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    quantized = np.round(rng.uniform(size=(32, 32)) * 255.0) / 255.0
    img = SemImage(quantized, pixel_size_nm=0.8)
    path = tmp_path / "img.png"
    save_png(img, path)
    back = load_image(path, pixel_size_nm=0.8)
    assert back.pixels.shape == (32, 32)
    assert np.array_equal(back.pixels, quantized)
