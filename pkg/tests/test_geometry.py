import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from autoassign.geometry import (Box, PyramidLevelSpec, center_offsets, giou_loss, inside_mask,
                                  iou, iou_matrix, ltrb_decode, ltrb_encode, make_locations)


def test_box_validation():
    with pytest.raises(ValueError):
        Box(2.0, 0.0, 1.0, 3.0)
    with pytest.raises(ValueError):
        Box(0.0, 0.0, float("nan"), 1.0)


def test_location_layout_and_order():
    locs = make_locations([PyramidLevelSpec(4, 16, 16), PyramidLevelSpec(8, 8, 8)])
    assert len(locs) == 320
    assert tuple(locs.xy[0]) == (2.0, 2.0)
    assert tuple(locs.xy[1]) == (6.0, 2.0)      # row-major within a level
    assert tuple(locs.xy[256]) == (4.0, 4.0)    # second level starts after the first
    assert locs.grid_position(257) == (1, 0, 1)


def test_bad_pyramids_rejected():
    with pytest.raises(ValueError):
        make_locations([PyramidLevelSpec(4, 0, 4)])
    with pytest.raises(ValueError):
        make_locations([PyramidLevelSpec(8, 2, 2), PyramidLevelSpec(4, 4, 4)])


def test_inside_mask_is_strict():
    locs = make_locations([PyramidLevelSpec(4, 4, 4)])
    on_edge = Box(2.0, 2.0, 10.0, 10.0)        # corners fall exactly on locations
    idx = inside_mask(locs, on_edge).indices
    assert all(2.0 < locs.xy[i, 0] < 10.0 for i in idx)
    assert len(idx) == 1
    assert len(inside_mask(locs, on_edge, strict=False).indices) == 9


def test_center_offsets_are_stride_normalized():
    d = center_offsets(np.array([[6.0, 2.0]]), Box(0.0, 0.0, 4.0, 4.0), [4.0])
    np.testing.assert_allclose(d, [[1.0, 0.0]])


def test_giou_hand_case():
    assert giou_loss(Box(0, 0, 2, 2), Box(1, 1, 3, 3)) == pytest.approx(1 + 5 / 63, abs=1e-12)


def test_giou_identical_boxes():
    assert giou_loss(Box(1, 2, 5, 7), Box(1, 2, 5, 7)) == pytest.approx(0.0, abs=1e-15)


def test_ltrb_round_trip():
    xy = np.array([[10.0, 12.0]])
    box = np.array([[4.0, 5.0, 20.0, 30.0]])
    np.testing.assert_allclose(ltrb_decode(xy, ltrb_encode(xy, box)), box)


coords = st.floats(0, 50, allow_nan=False)
sizes = st.floats(0.5, 30, allow_nan=False)


def box_strategy():
    return st.builds(lambda x, y, w, h: Box(x, y, x + w, y + h), coords, coords, sizes, sizes)


@settings(max_examples=60, deadline=None)
@given(box_strategy(), box_strategy())
def test_iou_symmetric_and_bounded(a, b):
    v = iou(a, b)
    assert 0.0 <= v <= 1.0
    assert v == pytest.approx(iou(b, a), abs=1e-15)


@settings(max_examples=60, deadline=None)
@given(box_strategy(), box_strategy(), st.floats(-20, 20), st.floats(-20, 20),
       st.floats(0.25, 4.0))
def test_iou_translation_and_scale_invariant(a, b, dx, dy, s):
    def move(bx):
        return Box((bx.x1 + dx) * s, (bx.y1 + dy) * s, (bx.x2 + dx) * s, (bx.y2 + dy) * s)
    assert iou(move(a), move(b)) == pytest.approx(iou(a, b), abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(box_strategy(), box_strategy())
def test_giou_loss_range(a, b):
    assert 0.0 <= giou_loss(a, b) <= 2.0 + 1e-12


def test_iou_matrix_shape():
    a = np.array([[0, 0, 2, 2], [1, 1, 3, 3.0]])
    assert iou_matrix(a, a[:1]).shape == (2, 1)
