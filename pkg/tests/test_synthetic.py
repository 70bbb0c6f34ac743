import json

import numpy as np
import pytest

from changechip.errors import DefectSpecError
from changechip.imaging import RasterImage
from changechip.synthetic import (VISIBLE_CHANGE, DefectSpec, EraseBlock, PasteBlob, RecolorBlock, ShiftBlock,
                                  generate_defect_pair, load_defect_spec, random_defect_spec, synthetic_board)


def test_empty_spec_gives_identical_pair(small_board):
    pair = generate_defect_pair(small_board, {"defects": []})

    np.testing.assert_array_equal(pair.target.pixels, small_board.pixels)
    assert not pair.ground_truth.any()


def test_erase_block_marks_exactly_the_block():
    """Test that an erased block on a board with no black pixels is exactly the ground truth."""
    # Arrange
    rng = np.random.default_rng(0)
    base = RasterImage(rng.integers(64, 255, (120, 120, 3)) / 255.0)
    spec = {"defects": [{"kind": "erase_block", "x": 50, "y": 50, "w": 20, "h": 20, "color": [0.0, 0.0, 0.0]}]}

    # Act
    pair = generate_defect_pair(base, spec)

    # Assert
    expected = np.zeros((120, 120), dtype=bool)
    expected[50:70, 50:70] = True
    np.testing.assert_array_equal(pair.ground_truth, expected)


def test_shift_block_truth_matches_visible_difference(small_board):
    spec = DefectSpec(defects=[ShiftBlock(x=30, y=30, w=16, h=12, dx=4, dy=0)])

    pair = generate_defect_pair(small_board, spec)

    changed = np.abs(pair.target.pixels - small_board.pixels).max(axis=2) > VISIBLE_CHANGE
    np.testing.assert_array_equal(pair.ground_truth, changed)
    assert not pair.ground_truth[:, :30].any()
    assert not pair.ground_truth[:, 50:].any()


def test_recolor_and_blob_stay_inside_their_footprints(small_board):
    spec = DefectSpec(defects=[RecolorBlock(x=10, y=10, w=8, h=8, color=(1.0, 0.0, 0.0)),
                               PasteBlob(x=60, y=60, radius=5)])

    pair = generate_defect_pair(small_board, spec, seed=3)

    footprint = np.zeros(small_board.shape, dtype=bool)
    footprint[10:18, 10:18] = True
    yy, xx = np.mgrid[:small_board.height, :small_board.width]
    footprint |= (yy - 60) ** 2 + (xx - 60) ** 2 <= 36
    assert pair.ground_truth.any()
    assert not (pair.ground_truth & ~footprint).any()


def test_block_outside_image_is_rejected(small_board):
    with pytest.raises(DefectSpecError):
        generate_defect_pair(small_board, DefectSpec(defects=[EraseBlock(x=90, y=0, w=20, h=5)]))


def test_shift_destination_outside_image_is_rejected(small_board):
    with pytest.raises(DefectSpecError):
        generate_defect_pair(small_board, DefectSpec(defects=[ShiftBlock(x=0, y=0, w=10, h=10, dx=-3)]))


def test_unknown_kind_is_rejected(small_board):
    with pytest.raises(DefectSpecError):
        generate_defect_pair(small_board, {"defects": [{"kind": "scratch", "x": 1, "y": 1}]})


def test_illumination_and_jitter_keep_truth_in_reference_frame(small_board):
    spec = {"defects": [{"kind": "erase_block", "x": 40, "y": 40, "w": 10, "h": 10, "color": [1.0, 0.0, 1.0]}],
            "illumination": 1.1, "jitter": {"angle": 0.5, "tx": 2.0, "ty": -1.0}}

    pair = generate_defect_pair(small_board, spec)

    assert pair.ground_truth[42:48, 42:48].all()
    assert not pair.ground_truth[:40].any()
    assert pair.reference is small_board
    assert not np.array_equal(pair.target.pixels, small_board.pixels)


def test_generation_is_deterministic(small_board):
    spec = random_defect_spec(96, 96, "paste_blob", seed=4, illumination=0.95, max_jitter_px=2.0)

    first = generate_defect_pair(small_board, spec, seed=9)
    second = generate_defect_pair(small_board, spec, seed=9)

    np.testing.assert_array_equal(first.target.pixels, second.target.pixels)
    np.testing.assert_array_equal(first.ground_truth, second.ground_truth)


@pytest.mark.parametrize("kind", ["erase_block", "shift_block", "recolor_block", "paste_blob"])
def test_random_specs_fit_the_board(kind, board):
    spec = random_defect_spec(256, 256, kind, seed=11, base=board)

    pair = generate_defect_pair(board, spec)

    assert pair.ground_truth.any()


def test_spec_file_is_loaded(tmp_path):
    path = tmp_path / "spec.json"
    path.write_text(json.dumps({"defects": [{"kind": "paste_blob", "x": 20, "y": 20, "radius": 4}],
                                "illumination": 0.9}))

    spec = load_defect_spec(path)

    assert isinstance(spec.defects[0], PasteBlob)
    assert spec.illumination == 0.9


def test_board_generator_is_seeded():
    np.testing.assert_array_equal(synthetic_board(64, 48, seed=2).pixels, synthetic_board(64, 48, seed=2).pixels)
    assert synthetic_board(64, 48, seed=2).shape == (48, 64)


def test_changes_below_the_visibility_threshold_are_not_truth():
    """Test that erasing flat substrate to nearly the same colour leaves no ground truth."""
    # Arrange
    flat = RasterImage.filled(64, 64, (0.12, 0.42, 0.22))
    spec = {"defects": [{"kind": "erase_block", "x": 10, "y": 10, "w": 20, "h": 20, "color": [0.14, 0.44, 0.2]},
                        {"kind": "erase_block", "x": 40, "y": 40, "w": 10, "h": 10, "color": [0.8, 0.8, 0.8]}]}

    # Act
    pair = generate_defect_pair(flat, spec)

    # Assert
    assert not pair.ground_truth[10:30, 10:30].any()
    assert pair.ground_truth[40:50, 40:50].all()
    assert pair.ground_truth.sum() == 100


def test_zero_visibility_threshold_marks_every_changed_pixel():
    flat = RasterImage.filled(32, 32, (0.5, 0.5, 0.5))
    spec = {"defects": [{"kind": "erase_block", "x": 4, "y": 4, "w": 5, "h": 5, "color": [0.51, 0.5, 0.5]}],
            "visible_change": 0.0}

    pair = generate_defect_pair(flat, spec)

    assert pair.ground_truth.sum() == 25


@pytest.mark.parametrize("kind", ["erase_block", "shift_block"])
def test_random_blocks_land_on_component_bodies(kind, board):
    spec = random_defect_spec(256, 256, kind, seed=5, base=board)

    pair = generate_defect_pair(board, spec)

    block = spec.defects[0]
    body = board.gray[block.y:block.y + block.h, block.x:block.x + block.w] < 0.2
    assert body.any()
    assert pair.ground_truth.sum() >= body.sum() // 4
