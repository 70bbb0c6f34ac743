import numpy as np
import pytest

from changechip.histogram import (HistogramSpec, apportion, exact_histogram_match, histogram_counts,
                                  strict_order, to_levels)
from changechip.imaging import RasterImage


@pytest.mark.parametrize("seed", range(5))
def test_matched_histogram_equals_reference_bin_for_bin(seed):
    """Test that every channel of the output has exactly the reference histogram."""
    # Arrange
    rng = np.random.default_rng(seed)
    src = RasterImage(rng.random((40, 50, 3)) ** 2)
    ref = RasterImage(rng.integers(0, 256, (40, 50, 3)) / 255.0)

    # Act
    matched = exact_histogram_match(src, ref)

    # Assert
    np.testing.assert_array_equal(HistogramSpec.of(matched).bins, HistogramSpec.of(ref).bins)


def test_matching_an_image_to_itself_is_identity(random_image):
    img = random_image(30, 20)

    matched = exact_histogram_match(img, img)

    np.testing.assert_array_equal(matched.pixels, img.pixels)


def test_matching_preserves_pixel_order(rng):
    src = RasterImage(rng.random((25, 25, 3)))
    ref = RasterImage(rng.integers(0, 256, (25, 25, 3)) / 255.0)

    matched = exact_histogram_match(src, ref)

    for c in range(3):
        order = np.argsort(src.channel(c).ravel(), kind="stable")
        assert np.all(np.diff(matched.channel(c).ravel()[order]) >= 0)


def test_reference_of_another_size_is_rescaled(rng):
    src = RasterImage(rng.random((10, 10, 3)))
    ref = RasterImage(rng.integers(0, 256, (20, 30, 3)) / 255.0)

    matched = exact_histogram_match(src, ref)

    assert matched.shape == src.shape
    for c in range(3):
        assert histogram_counts(matched.channel(c)).sum() == 100


def test_apportion_sums_to_the_target_total():
    assert list(apportion(np.array([1, 1]), 3)) == [2, 1]
    assert apportion(np.array([3, 0, 5, 2]), 7).sum() == 7
    assert list(apportion(np.array([2, 4]), 6)) == [2, 4]


def test_constant_plane_is_ordered_by_index():
    order = strict_order(np.full((4, 5), 0.25))

    np.testing.assert_array_equal(order, np.arange(20))


def test_ties_are_broken_by_neighbourhood_average():
    plane = np.zeros((5, 5))
    plane[0, 0] = 0.5  # raises the local mean around (1, 1) but not around (3, 3)

    order = list(strict_order(plane, levels=1))

    assert order.index(3 * 5 + 3) < order.index(1 * 5 + 1)
    assert order[-1] == 0


def test_levels_snap_to_the_8bit_grid():
    np.testing.assert_array_equal(to_levels(np.array([0.0, 0.5, 1.0, 1 / 255])), [0, 128, 255, 1])
