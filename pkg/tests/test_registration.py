import numpy as np
import pytest

from changechip.errors import (DegenerateTransformError, ImageTooSmallError, InsufficientMatchesError,
                               RegistrationError)
from changechip.imaging import RasterImage
from changechip.registration import (AffineTransform, correspondences, detect_and_describe,
                                     estimate_affine_ransac, match_features, passes_ratio_test, register,
                                     render_matches, warp)


@pytest.mark.parametrize("nearest, second, expected", [
    (0.5, 1.0, True),
    (0.8, 1.0, True),
    (0.9, 1.0, False),
])
def test_ratio_test_keeps_distinctive_matches(nearest, second, expected):
    keep, ratio = passes_ratio_test(nearest, second, 0.8)

    assert keep is expected
    assert ratio == pytest.approx(nearest / second)


def test_ransac_recovers_affine_and_flags_outliers(rng):
    """Test that planted outliers are excluded and the model is exact on inliers."""
    # Arrange
    truth = AffineTransform(np.array([[0.98, -0.12, 14.0], [0.11, 1.03, -7.5]]))
    src = rng.uniform(0, 300, (60, 2))
    dst = truth.apply(src)
    outliers = np.arange(0, 60, 6)
    dst[outliers] += rng.uniform(50, 80, (len(outliers), 2)) * rng.choice([-1, 1], (len(outliers), 2))

    # Act
    transform, inliers = estimate_affine_ransac(src, dst, inlier_threshold_px=3.0, max_iters=500, seed=0)

    # Assert
    expected = np.ones(60, dtype=bool)
    expected[outliers] = False
    np.testing.assert_array_equal(inliers, expected)
    np.testing.assert_allclose(transform.matrix, truth.matrix, atol=1e-8)


def test_ransac_is_deterministic_for_a_seed(rng):
    src = rng.uniform(0, 100, (30, 2))
    dst = src + rng.normal(0, 1.0, src.shape)

    first = estimate_affine_ransac(src, dst, 3.0, 200, seed=5)
    second = estimate_affine_ransac(src, dst, 3.0, 200, seed=5)

    np.testing.assert_array_equal(first[0].matrix, second[0].matrix)
    np.testing.assert_array_equal(first[1], second[1])


def test_ransac_needs_three_correspondences():
    with pytest.raises(InsufficientMatchesError):
        estimate_affine_ransac(np.zeros((2, 2)), np.zeros((2, 2)))


def test_ransac_rejects_collinear_points():
    src = np.stack([np.arange(10.0), 2 * np.arange(10.0)], axis=1)

    with pytest.raises(RegistrationError):
        estimate_affine_ransac(src, src + 1.0, max_iters=50)


def test_degenerate_transform_is_rejected():
    with pytest.raises(DegenerateTransformError):
        AffineTransform(np.array([[1.0, 2.0, 0.0], [2.0, 4.0, 0.0]]))


def test_inverse_composes_to_identity():
    t = AffineTransform.from_parameters(angle_deg=12.0, scale=1.07, tx=5.0, ty=-3.0, center=(40, 30))

    product = t.compose(t.inverse())

    np.testing.assert_allclose(product.matrix, AffineTransform.identity().matrix, atol=1e-12)


def test_identity_warp_copies_the_image(board):
    aligned = warp(board, AffineTransform.identity(), board.width, board.height)

    np.testing.assert_allclose(aligned.pixels, board.pixels, atol=1e-12)


def test_warp_outside_source_is_black(board):
    shifted = warp(board, AffineTransform.from_parameters(tx=20.0), board.width, board.height)

    assert np.all(shifted.pixels[:, :19] == 0.0)


@pytest.mark.parametrize("dx", [1, 3, 8])
def test_integer_shift_moves_columns_exactly(board, dx):
    shifted = warp(board, AffineTransform.from_parameters(tx=float(dx)), board.width, board.height)

    np.testing.assert_allclose(shifted.pixels[:, dx:], board.pixels[:, :-dx], atol=1e-6)
    assert np.all(shifted.pixels[:, :dx] == 0.0)


def test_rotation_round_trip_preserves_the_interior():
    """Test that rotating by 45 degrees and back keeps a smooth image's center within 0.02."""
    # Arrange
    ys, xs = np.mgrid[0:128, 0:128].astype(np.float64)
    wave = 0.5 + 0.4 * np.sin(2 * np.pi * xs / 48) * np.cos(2 * np.pi * ys / 64)
    img = RasterImage(np.dstack([wave, 1.0 - wave, np.full_like(wave, 0.5)]))
    rotation = AffineTransform.from_parameters(angle_deg=45.0, center=(63.5, 63.5))

    # Act
    there = warp(img, rotation, img.width, img.height)
    back = warp(there, rotation.inverse(), img.width, img.height)

    # Assert
    interior = (slice(32, 96), slice(32, 96))
    assert np.abs(back.pixels[interior] - img.pixels[interior]).max() < 0.02


def test_stricter_ratio_keeps_a_subset_of_matches(board):
    target = warp(board, AffineTransform.from_parameters(tx=5.0, ty=-4.0), board.width, board.height)
    refs, tgts = detect_and_describe(board), detect_and_describe(target)

    loose = {(m.ref_index, m.tgt_index) for m in match_features(refs, tgts, 0.8)}
    strict = {(m.ref_index, m.tgt_index) for m in match_features(refs, tgts, 0.6)}

    assert strict <= loose
    assert len(strict) < len(loose)


def test_keypoints_survive_a_quarter_turn(board):
    """Test SIFT on a 90 degree rotation: similar keypoint counts and close descriptors at mapped positions."""
    # Arrange
    rotated = RasterImage(np.rot90(board.pixels, k=1))

    # Act
    refs, tgts = detect_and_describe(board), detect_and_describe(rotated)
    matches = match_features(refs, tgts)

    # Assert
    assert abs(len(tgts) - len(refs)) <= 0.1 * len(refs)
    # np.rot90 sends (x, y) to (y, W - 1 - x)
    expected = np.array([[refs[m.ref_index].y, board.width - 1 - refs[m.ref_index].x] for m in matches])
    found = np.array([tgts[m.tgt_index].position for m in matches])
    correct = np.linalg.norm(expected - found, axis=1) < 1.5
    assert correct.mean() > 0.7
    distances = np.array([m.distance for m in matches])
    assert np.median(distances[correct]) < 0.3


def test_noisy_checkerboard_has_many_keypoints(rng):
    ys, xs = np.mgrid[0:256, 0:256]
    squares = ((xs // 16 + ys // 16) % 2).astype(np.float64)
    gray = np.clip(0.2 + 0.6 * squares + rng.normal(0.0, 0.03, squares.shape), 0.0, 1.0)

    keypoints = detect_and_describe(RasterImage(np.dstack([gray] * 3)))

    assert len(keypoints) >= 50


def test_keypoints_are_sorted_and_normalised(board):
    keypoints = detect_and_describe(board)

    assert len(keypoints) > 20
    positions = [(kp.y, kp.x) for kp in keypoints]
    assert positions == sorted(positions)
    norms = [np.linalg.norm(kp.descriptor) for kp in keypoints]
    np.testing.assert_allclose(norms, 1.0, atol=1e-9)


def test_registering_an_image_to_itself_gives_identity(board):
    result = register(board, board)

    assert result.inlier_count >= 10
    assert result.transform.corner_error(AffineTransform.identity(), board.width, board.height) < 0.1


@pytest.mark.parametrize("angle, scale, tx, ty", [
    (4.0, 1.0, 6.0, -4.0),
    (-8.0, 1.05, -10.0, 5.0),
    (10.0, 0.95, 12.0, 8.0),
])
def test_registration_recovers_a_known_affine(board, angle, scale, tx, ty):
    """Test that the recovered transform maps the image corners within 1 px of the truth."""
    # Arrange
    center = ((board.width - 1) / 2, (board.height - 1) / 2)
    forward = AffineTransform.from_parameters(angle, scale, tx, ty, center)
    target = warp(board, forward, board.width, board.height)

    # Act
    result = register(board, target, seed=0)

    # Assert
    assert result.transform.corner_error(forward.inverse(), board.width, board.height) < 1.0
    assert result.coverage.shape == board.shape


def test_matches_point_to_real_correspondences(board):
    shift = AffineTransform.from_parameters(tx=7.0, ty=3.0)
    target = warp(board, shift, board.width, board.height)
    refs, tgts = detect_and_describe(board), detect_and_describe(target)

    matches = match_features(refs, tgts)
    src, dst = correspondences(refs, tgts, matches)

    residual = np.linalg.norm(src - (dst + [7.0, 3.0]), axis=1)
    assert np.median(residual) < 1.0


def test_small_image_is_rejected():
    with pytest.raises(ImageTooSmallError):
        detect_and_describe(RasterImage.filled(16, 16, (0.5, 0.5, 0.5)))


def test_flat_images_cannot_be_registered():
    flat = RasterImage.filled(64, 64, (0.4, 0.4, 0.4))

    with pytest.raises(InsufficientMatchesError):
        register(flat, flat)


def test_match_rendering_places_images_side_by_side(small_board):
    refs = detect_and_describe(small_board)
    matches = match_features(refs, refs)

    canvas = render_matches(small_board, small_board, refs, refs, matches)

    assert canvas.shape == (small_board.height, 2 * small_board.width)
