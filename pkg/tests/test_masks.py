import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from parattack.oracle.masks import BinaryMask, mask_iou


def _counting_iou(a: BinaryMask, b: BinaryMask) -> float:
    inter = union = 0
    for y in range(a.height):
        for x in range(a.width):
            pa, pb = bool(a.bits[y, x]), bool(b.bits[y, x])
            inter += pa and pb
            union += pa or pb
    return 1.0 if union == 0 else inter / union


def test_identical_and_disjoint():
    m = BinaryMask(np.array([[1, 0], [0, 1]], dtype=bool))
    assert mask_iou(m, m) == 1.0
    other = BinaryMask(np.array([[0, 1], [1, 0]], dtype=bool))
    assert mask_iou(m, other) == 0.0


def test_pinned_two_by_three():
    a = BinaryMask(np.array([[1, 1, 0], [1, 0, 0]], dtype=bool))
    b = BinaryMask(np.array([[1, 0, 1], [0, 1, 1]], dtype=bool))
    # |a & b| = 1, |a | b| = 6 by enumeration
    assert mask_iou(a, b) == pytest.approx(1 / 6)
    c = BinaryMask(np.array([[1, 1, 1], [1, 0, 0]], dtype=bool))
    d = BinaryMask(np.array([[1, 1, 0], [0, 0, 1]], dtype=bool))
    # |c & d| = 2, |c | d| = 5
    assert mask_iou(c, d) == pytest.approx(2 / 5)


def test_both_empty_is_one():
    empty = BinaryMask(np.zeros((3, 3), dtype=bool))
    assert mask_iou(empty, empty) == 1.0


def test_shape_mismatch():
    with pytest.raises(ValueError):
        mask_iou(BinaryMask(np.zeros((2, 2), dtype=bool)),
                 BinaryMask(np.zeros((2, 3), dtype=bool)))


@st.composite
def masks(draw, w=None, h=None):
    w = w if w is not None else draw(st.integers(1, 8))
    h = h if h is not None else draw(st.integers(1, 8))
    flat = draw(st.lists(st.booleans(), min_size=w * h, max_size=w * h))
    return BinaryMask(np.array(flat, dtype=bool).reshape(h, w))


@given(st.data())
@settings(max_examples=80)
def test_iou_properties(data):
    w = data.draw(st.integers(1, 6))
    h = data.draw(st.integers(1, 6))
    a = data.draw(masks(w=w, h=h))
    b = data.draw(masks(w=w, h=h))
    iou = mask_iou(a, b)
    assert iou == mask_iou(b, a)
    assert 0.0 <= iou <= 1.0
    assert iou == pytest.approx(_counting_iou(a, b))
    if a.bits.any() or b.bits.any():
        assert (iou == 1.0) == bool(np.array_equal(a.bits, b.bits))


@given(masks())
@settings(max_examples=80)
def test_rle_round_trip(mask):
    runs = mask.to_rle()
    assert all(r >= 0 for r in runs)
    back = BinaryMask.from_rle(mask.width, mask.height, runs)
    assert np.array_equal(back.bits, mask.bits)


def test_rle_validation():
    with pytest.raises(ValueError):
        BinaryMask.from_rle(2, 2, [3])
    with pytest.raises(ValueError):
        BinaryMask.from_rle(2, 2, [-1, 5])
