import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from shapely.geometry import Point, Polygon

from label_convergence.geometry import (
    Box,
    GeometryError,
    Mask,
    area,
    box_iou_matrix,
    compress_rle,
    decode_rle,
    encode_rle,
    iou,
    is_hull_comparison,
    mask_from_polygons,
    rasterize_polygons,
    union_region,
)


def grid_iou(a, b, size=16):
    """Count unit cells covered by two integer boxes."""
    ga = np.zeros((size, size), bool)
    gb = np.zeros((size, size), bool)
    ga[a[1] : a[1] + a[3], a[0] : a[0] + a[2]] = True
    gb[b[1] : b[1] + b[3], b[0] : b[0] + b[2]] = True
    return (ga & gb).sum() / (ga | gb).sum()


def box_raster(box, shape=(32, 32)):
    full = np.zeros(shape, bool)
    x, y, w, h = box
    full[y : y + h, x : x + w] = True
    return Mask.from_full(full)


def test_identical_boxes():
    assert iou(Box(1, 2, 3, 4), Box(1, 2, 3, 4)) == 1.0


def test_disjoint_boxes():
    assert iou(Box(0, 0, 1, 1), Box(5, 5, 1, 1)) == 0.0


def test_shifted_boxes_against_grid_count():
    expected = grid_iou((0, 0, 2, 2), (1, 0, 2, 2))
    assert expected == pytest.approx(1 / 3)
    assert iou(Box(0, 0, 2, 2), Box(1, 0, 2, 2)) == pytest.approx(expected, abs=1e-15)


def test_area():
    assert area(Box(0, 0, 2, 3)) == 6
    one = np.zeros((4, 4), bool)
    one[2, 1] = True
    assert area(Mask.from_full(one)) == 1


def test_empty_mask_rejected():
    with pytest.raises(GeometryError):
        Mask.from_full(np.zeros((3, 3), bool))


def test_mask_dimension_mismatch():
    a = Mask.from_full(np.ones((4, 4), bool))
    b = Mask.from_full(np.ones((4, 5), bool))
    with pytest.raises(GeometryError):
        iou(a, b)


def test_mixed_comparison_uses_hull():
    full = np.zeros((10, 10), bool)
    full[2:5, 3:7] = True
    full[3, 4] = False
    m = Mask.from_full(full)
    assert is_hull_comparison(m, Box(3, 2, 4, 3))
    assert iou(m, Box(3, 2, 4, 3)) == 1.0


def test_union_single_region_is_identity():
    b = Box(1, 1, 2, 2)
    assert union_region([b]) == b
    m = box_raster((1, 1, 3, 3))
    assert union_region([m]) == m


def test_union_of_boxes_is_enclosing_box():
    assert union_region([Box(0, 0, 1, 1), Box(2, 0, 1, 1)]) == Box(0, 0, 3, 1)


def test_union_of_disjoint_masks_pixel_count():
    a = box_raster((0, 0, 2, 2))
    b = box_raster((10, 10, 2, 2))
    u = union_region([a, b])
    assert (a.to_full() | b.to_full()).sum() == 8
    assert area(u) == 8


def test_union_empty_list():
    with pytest.raises(GeometryError):
        union_region([])


def test_square_polygon_area_by_point_in_polygon():
    square = [0, 0, 10, 0, 10, 10, 0, 10]
    raster = rasterize_polygons([square], 20, 20)
    poly = Polygon(np.reshape(square, (-1, 2)))
    brute = sum(poly.contains(Point(c + 0.5, r + 0.5)) for r in range(20) for c in range(20))
    assert brute == 100
    assert raster.sum() == 100
    assert area(mask_from_polygons([square], 20, 20)) == 100


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_random_polygon_raster_matches_point_in_polygon(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 8))
    angles = np.sort(rng.uniform(0, 2 * np.pi, n))
    radius = rng.uniform(2, 9, n)
    pts = np.c_[12 + radius * np.cos(angles), 12 + radius * np.sin(angles)]
    raster = rasterize_polygons([pts.ravel().tolist()], 24, 24)
    poly = Polygon(pts)
    brute = np.array([[poly.contains(Point(c + 0.5, r + 0.5)) for c in range(24)] for r in range(24)])
    assert np.array_equal(raster, brute)


def test_rle_round_trip():
    rng = np.random.default_rng(3)
    full = rng.random((13, 17)) > 0.6
    rle = encode_rle(full)
    assert rle["size"] == [13, 17]
    assert sum(rle["counts"]) == 13 * 17
    assert np.array_equal(decode_rle(rle), full)
    assert np.array_equal(decode_rle(compress_rle(rle)), full)


def test_rle_is_column_major_starting_with_zeros():
    full = np.array([[1, 0], [1, 1]], bool)
    # column-major flattening: 1, 1, 0, 1
    assert encode_rle(full)["counts"] == [0, 2, 1, 1]


def test_bad_rle():
    with pytest.raises(GeometryError):
        decode_rle({"size": [2, 2], "counts": [1, 1]})


boxes = st.tuples(
    st.floats(0, 50, allow_nan=False),
    st.floats(0, 50, allow_nan=False),
    st.floats(0.1, 30, allow_nan=False),
    st.floats(0.1, 30, allow_nan=False),
).map(lambda t: Box(*t))


@given(boxes, boxes)
def test_iou_symmetric_and_bounded(a, b):
    v = iou(a, b)
    assert v == iou(b, a)
    assert 0.0 <= v <= 1.0
    assert iou(a, a) == 1.0


int_boxes = st.tuples(st.integers(0, 20), st.integers(0, 20), st.integers(1, 10), st.integers(1, 10))


@given(int_boxes, int_boxes)
def test_box_iou_equals_mask_iou_for_box_rasters(a, b):
    ma, mb = box_raster(a), box_raster(b)
    assert iou(ma, mb) == pytest.approx(iou(Box(*a), Box(*b)), abs=1e-12)
    assert iou(ma, mb) == iou(mb, ma)
    assert iou(ma, ma) == 1.0


@given(st.lists(int_boxes, min_size=1, max_size=5), st.randoms())
def test_union_area_invariant_under_permutation(parts, rnd):
    masks = [box_raster(p) for p in parts]
    shuffled = masks[:]
    rnd.shuffle(shuffled)
    assert area(union_region(masks)) == area(union_region(shuffled))
    bxs = [Box(*p) for p in parts]
    assert union_region(bxs) == union_region(list(reversed(bxs)))
    # associativity
    if len(masks) > 2:
        nested = union_region([union_region(masks[:2]), union_region(masks[2:])])
        assert nested == union_region(masks)


def test_box_iou_matrix_agrees_with_scalar():
    rng = np.random.default_rng(0)
    a = np.c_[rng.uniform(0, 20, (6, 2)), rng.uniform(1, 10, (6, 2))]
    b = np.c_[rng.uniform(0, 20, (4, 2)), rng.uniform(1, 10, (4, 2))]
    m = box_iou_matrix(a, b)
    for i in range(6):
        for j in range(4):
            assert m[i, j] == pytest.approx(iou(Box(*a[i]), Box(*b[j])), abs=1e-15)


def test_clamp():
    assert Box(-5, -5, 20, 20).clamp(10, 10) == Box(0, 0, 10, 10)
