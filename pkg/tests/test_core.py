import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import box_area_iou, lerp_1d
from suppress_detect.core import Annotation, BBox, Detection, Image, crop, iou, resize_bilinear
from suppress_detect.errors import NoOverlap

coord = st.floats(min_value=-50, max_value=200, allow_nan=False)
size = st.floats(min_value=0.5, max_value=120, allow_nan=False)
boxes = st.builds(BBox, coord, coord, size, size)


def test_iou_examples():
    assert iou(BBox(10, 10, 20, 20), BBox(10, 10, 20, 20)) == 1.0
    assert iou(BBox(0, 0, 10, 10), BBox(100, 100, 10, 10)) == 0.0
    assert iou(BBox(0, 0, 10, 10), BBox(5, 0, 10, 10)) == pytest.approx(50 / 150)


@given(boxes, boxes)
def test_iou_symmetric_and_bounded(a, b):
    v = iou(a, b)
    assert v == iou(b, a)
    assert 0.0 <= v <= 1.0
    assert v == pytest.approx(box_area_iou(a.as_list(), b.as_list()), abs=1e-9)


@given(boxes)
def test_iou_self_is_one(a):
    assert iou(a, a) == pytest.approx(1.0)


def test_bbox_rejects_degenerate():
    with pytest.raises(ValueError):
        BBox(0, 0, 0, 5)
    with pytest.raises(ValueError):
        BBox(0, 0, 5, -1)


def test_detection_score_range():
    with pytest.raises(ValueError):
        Detection("a", BBox(0, 0, 1, 1), 1.5)


def test_annotation_tags():
    a = Annotation("a", BBox(0, 0, 1, 1), {"variety=gala", "lighting=back"})
    assert a.tag_value("variety") == "gala"
    assert a.tag_value("missing") is None
    assert Annotation("b", BBox(0, 0, 1, 1)).tags == frozenset()


def test_image_invariants():
    img = Image.from_triples(2, 1, [(1, 2, 3), (4, 5, 6)])
    assert (img.width, img.height) == (2, 1)
    assert img.pixels[0, 1].tolist() == [4, 5, 6]
    with pytest.raises(ValueError):
        img.pixels[0, 0, 0] = 9
    with pytest.raises(ValueError):
        Image.from_triples(2, 2, [(0, 0, 0)])
    with pytest.raises(ValueError):
        Image(np.zeros((0, 3, 3)))


def _gradient_image(w, h):
    y, x = np.mgrid[0:h, 0:w]
    return Image(np.stack([x * 10 % 256, y * 20 % 256, (x + y) * 3 % 256], axis=-1))


def test_crop_full_image_identity():
    img = _gradient_image(7, 5)
    assert crop(img, BBox(0, 0, 7, 5)) == img


def test_crop_top_left():
    img = _gradient_image(4, 4)
    out = crop(img, BBox(0, 0, 2, 2))
    assert (out.width, out.height) == (2, 2)
    np.testing.assert_array_equal(out.pixels, img.pixels[:2, :2])


def test_crop_clamps_past_right_edge():
    img = _gradient_image(10, 6)
    out = crop(img, BBox(4, 1, 11, 3))  # 5px past the right edge
    assert (out.width, out.height) == (6, 3)
    # reference: per-pixel copy of the in-bounds region
    for yy in range(3):
        for xx in range(6):
            assert out.pixels[yy, xx].tolist() == img.pixels[1 + yy, 4 + xx].tolist()


def test_crop_no_overlap():
    with pytest.raises(NoOverlap):
        crop(_gradient_image(4, 4), BBox(10, 10, 3, 3))


def test_crop_idempotent():
    img = _gradient_image(9, 8)
    sub = crop(img, BBox(2, 1, 5, 4))
    assert crop(sub, BBox(0, 0, sub.width, sub.height)) == sub


def test_resize_identity():
    img = _gradient_image(6, 4)
    assert resize_bilinear(img, 6, 4) == img


@pytest.mark.parametrize("w,h", [(1, 1), (3, 7), (36, 36), (50, 2)])
def test_resize_constant(w, h):
    img = Image(np.full((2, 2, 3), (200, 30, 90), dtype=np.uint8))
    out = resize_bilinear(img, w, h)
    assert (out.width, out.height) == (w, h)
    assert (out.pixels == np.array([200, 30, 90], dtype=np.uint8)).all()


def test_resize_two_pixel_ramp():
    img = Image.from_triples(2, 1, [(0, 0, 0), (255, 255, 255)])
    out = resize_bilinear(img, 4, 1)
    expected = [round(v) for v in lerp_1d([0.0, 255.0], 4)]
    assert expected == [0, 85, 170, 255]
    assert out.pixels[0, :, 0].tolist() == expected
    assert out.pixels[0, :, 2].tolist() == expected


def test_resize_matches_separable_oracle(rng):
    src = rng.integers(0, 256, (5, 7, 3)).astype(np.uint8)
    out = resize_bilinear(Image(src), 11, 9)
    # interpolate rows then columns with the scalar oracle
    rows = np.array([[lerp_1d(list(src[r, :, c].astype(float)), 11) for c in range(3)]
                     for r in range(5)])            # (5, 3, 11)
    ref = np.zeros((9, 11, 3))
    for c in range(3):
        for x in range(11):
            ref[:, x, c] = lerp_1d(list(rows[:, c, x]), 9)
    np.testing.assert_array_equal(out.pixels, np.clip(np.rint(ref), 0, 255).astype(np.uint8))


def test_resize_rejects_zero():
    with pytest.raises(ValueError):
        resize_bilinear(_gradient_image(2, 2), 0, 3)
