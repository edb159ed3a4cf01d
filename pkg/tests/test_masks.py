"""Bounding-box validation and mask-distortion properties."""

import numpy as np
import pytest

from exedit.errors import ParameterError
from exedit.masks import (
    BBox,
    bbox_of_mask,
    box_mask,
    distort_mask,
    mask_is_binary,
    mask_is_connected,
    validate_mask,
)


class TestBBox:
    def test_valid_box(self):
        BBox(2, 3, 8, 8).validate((32, 32))

    def test_too_small(self):
        with pytest.raises(ParameterError):
            BBox(0, 0, 3, 10).validate((32, 32))

    def test_outside_image(self):
        with pytest.raises(ParameterError):
            BBox(28, 0, 8, 8).validate((32, 32))

    def test_over_half_area(self):
        with pytest.raises(ParameterError):
            BBox(0, 0, 24, 24).validate((32, 32))


class TestMaskHelpers:
    def test_binary_and_connectivity(self):
        m = np.zeros((10, 10), np.uint8)
        m[2:5, 2:5] = 1
        assert mask_is_binary(m)
        assert mask_is_connected(m)
        m[8, 8] = 1  # second component
        assert not mask_is_connected(m)

    def test_diagonal_is_not_4_connected(self):
        m = np.zeros((5, 5), np.uint8)
        m[1, 1] = 1
        m[2, 2] = 1
        assert not mask_is_connected(m)

    def test_validate_mask_rejects_nonbinary(self):
        m = np.zeros((10, 10), np.uint8)
        m[2:4, 2:4] = 2
        with pytest.raises(ParameterError):
            validate_mask(m)

    def test_bbox_of_mask_round_trip(self):
        box = BBox(3, 4, 6, 5)
        assert bbox_of_mask(box_mask(box, (16, 16))) == box


class TestDistortMask:
    def test_zero_offset_hook_gives_exact_rectangle(self):
        box = BBox(5, 7, 10, 9)
        out = distort_mask(box, (32, 32), np.random.default_rng(1), offset_range=(0, 0))
        np.testing.assert_array_equal(out, box_mask(box, (32, 32)))

    def test_points_per_edge_default(self):
        from exedit.masks import POINTS_PER_EDGE

        assert POINTS_PER_EDGE == 20

    def test_offset_range_default(self):
        from exedit.masks import OFFSET_RANGE

        assert OFFSET_RANGE == (1, 5)

    def test_band_and_connectivity_over_random_boxes(self):
        # mask stays within dilate(box, 6) and contains erode(box, 6); always
        # binary and 4-connected. 5 px max offset + 1 px rasterization slack.
        rng = np.random.default_rng(0)
        H = W = 64
        trials = 0
        while trials < 1000:
            w = int(rng.integers(4, 32))
            h = int(rng.integers(4, 32))
            if w * h > (H * W) // 2:
                continue
            x = int(rng.integers(0, W - w))
            y = int(rng.integers(0, H - h))
            box = BBox(x, y, w, h)
            m = distort_mask(box, (H, W), rng)
            trials += 1

            assert mask_is_binary(m)
            assert mask_is_connected(m)
            dilated = np.zeros((H, W), np.uint8)
            dilated[max(0, y - 6) : min(H, y + h + 6), max(0, x - 6) : min(W, x + w + 6)] = 1
            assert not np.any(m & ~dilated), f"mask escapes +6 band for {box}"
            if h > 12 and w > 12:
                eroded = np.zeros((H, W), np.uint8)
                eroded[y + 6 : y + h - 6, x + 6 : x + w - 6] = 1
                assert not np.any(eroded & ~m), f"mask misses -6 band for {box}"

    def test_determinism_per_seed(self):
        box = BBox(10, 10, 20, 15)
        a = distort_mask(box, (64, 64), np.random.default_rng(7))
        b = distort_mask(box, (64, 64), np.random.default_rng(7))
        np.testing.assert_array_equal(a, b)

    def test_degenerate_box_rejected(self):
        with pytest.raises(ParameterError):
            distort_mask(BBox(0, 0, 2, 2), (32, 32), np.random.default_rng(0))
