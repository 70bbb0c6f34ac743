import numpy as np
import pytest
from PIL import Image

from changechip.errors import ImageFormatError, WindowBoundsError
from changechip.imaging import (RasterImage, extract_window, load_image, load_mask, save_image, save_mask,
                                to_grayscale, window_stack)


def test_grayscale_uses_fixed_channel_weights():
    """Test that pure red, green and blue map to 0.3, 0.59 and 0.11."""
    # Arrange
    pixels = np.zeros((1, 3, 3))
    pixels[0, 0, 0] = pixels[0, 1, 1] = pixels[0, 2, 2] = 1.0

    # Act
    gray = to_grayscale(RasterImage(pixels))

    # Assert
    np.testing.assert_allclose(gray, [[0.3, 0.59, 0.11]])


def test_window_of_size_one_is_the_pixel(rng):
    plane = rng.random((7, 9))

    for row, col in [(0, 0), (3, 4), (6, 8)]:
        window = extract_window(plane, (row, col), 1)
        assert window.values.shape == (1, 1)
        assert window.values[0, 0] == plane[row, col]


def test_window_is_zero_padded_at_the_border():
    plane = np.arange(25, dtype=float).reshape(5, 5)

    window = extract_window(plane, (0, 0), 3)

    np.testing.assert_array_equal(window.values, [[0, 0, 0], [0, 0, 1], [0, 5, 6]])


def test_window_stack_matches_single_extraction(rng):
    plane = rng.random((10, 12))
    centers = np.array([[0, 0], [5, 6], [9, 11], [2, 10]])

    stack = window_stack(plane, centers, 5)

    for center, values in zip(centers, stack):
        np.testing.assert_array_equal(values, extract_window(plane, tuple(center), 5).values)


@pytest.mark.parametrize("center", [(-1, 0), (0, 5), (5, 0)])
def test_window_center_outside_plane_is_rejected(center):
    with pytest.raises(WindowBoundsError):
        extract_window(np.zeros((5, 5)), center, 3)


def test_even_window_size_is_rejected():
    with pytest.raises(WindowBoundsError):
        extract_window(np.zeros((5, 5)), (2, 2), 4)


def test_raster_image_rejects_values_outside_unit_range():
    with pytest.raises(ImageFormatError):
        RasterImage(np.full((2, 2, 3), 1.5))


def test_raster_image_rejects_nan():
    pixels = np.zeros((2, 2, 3))
    pixels[0, 0, 0] = np.nan
    with pytest.raises(ImageFormatError):
        RasterImage(pixels)


def test_raster_image_rejects_wrong_channel_count():
    with pytest.raises(ImageFormatError):
        RasterImage(np.zeros((4, 4, 4)))


def test_saved_8bit_image_loads_back_exactly(tmp_path, rng):
    """Test that values on the 8-bit grid survive save and load unchanged."""
    # Arrange
    img = RasterImage(rng.integers(0, 256, (17, 23, 3)) / 255.0)

    # Act
    loaded = load_image(save_image(img, tmp_path / "img.png"))

    # Assert
    np.testing.assert_array_equal(loaded.pixels, img.pixels)


def test_grayscale_file_is_promoted_to_rgb(tmp_path):
    path = tmp_path / "gray.png"
    Image.fromarray(np.array([[0, 128], [255, 64]], dtype=np.uint8)).save(path)

    img = load_image(path)

    assert img.shape == (2, 2)
    np.testing.assert_array_equal(img.channel(0), img.channel(2))
    assert img.pixels[0, 1, 1] == pytest.approx(128 / 255)


def test_alpha_channel_is_rejected(tmp_path):
    path = tmp_path / "rgba.png"
    Image.new("RGBA", (4, 4), (10, 20, 30, 128)).save(path)

    with pytest.raises(ImageFormatError, match="alpha"):
        load_image(path)


def test_unsupported_format_is_rejected(tmp_path):
    path = tmp_path / "photo.jpg"
    Image.new("RGB", (8, 8), (200, 10, 10)).save(path, format="JPEG")

    with pytest.raises(ImageFormatError, match="unsupported format"):
        load_image(path)


def test_missing_file_is_reported(tmp_path):
    with pytest.raises(ImageFormatError, match="not found"):
        load_image(tmp_path / "nope.png")


def test_mask_is_written_as_black_and_white(tmp_path):
    mask = np.zeros((6, 8), dtype=bool)
    mask[2:4, 3:7] = True

    path = save_mask(mask, tmp_path / "mask.png")

    assert Image.open(path).mode == "L"
    np.testing.assert_array_equal(load_mask(path), mask)
