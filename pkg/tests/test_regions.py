import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from crystalseg.errors import ContractError
from crystalseg.forest import ClassLabel
from crystalseg.regions import (
    Region,
    apply_morphology,
    binary_close,
    binary_open,
    connected_components,
    crop_box,
    disk,
    extract_regions,
    label_from_instances,
    region_from_crop,
    region_from_label,
    region_props,
)

from oracles import flood_fill_labels, set_close, set_open

masks = arrays(np.bool_, st.tuples(st.integers(1, 24), st.integers(1, 24)))


def test_disk_shapes():
    assert disk(0).tolist() == [[True]]
    assert disk(1).all() and disk(1).shape == (3, 3)
    d2 = disk(2)
    assert d2.shape == (5, 5) and not d2[0, 0] and d2[0, 1] and d2[2, 2]


def test_close_examples():
    m = np.array([[1, 0, 1, 0, 0]], bool)
    np.testing.assert_array_equal(binary_close(m, 0), m)
    assert binary_close(np.array([[0, 1, 0, 1, 0]], bool), 1).tolist() == [[False, True, True, True, False]]
    np.testing.assert_array_equal(binary_close(np.ones((6, 5), bool), 2), np.ones((6, 5), bool))


def test_open_examples():
    speck = np.zeros((7, 7), bool)
    speck[3, 3] = True
    assert not binary_open(speck, 1).any()
    sq = np.zeros((16, 16), bool)
    sq[3:13, 4:14] = True
    np.testing.assert_array_equal(binary_open(sq, 1), sq)
    np.testing.assert_array_equal(binary_open(speck, 0), speck)


@pytest.mark.parametrize("radius", [1, 2, 3])
@given(mask=masks)
def test_morphology_matches_set_oracle(radius, mask):
    np.testing.assert_array_equal(binary_close(mask, radius), set_close(mask, radius))
    np.testing.assert_array_equal(binary_open(mask, radius), set_open(mask, radius))


@pytest.mark.parametrize("radius", [1, 2, 3])
@given(mask=arrays(np.bool_, (40, 40)))
def test_morphology_laws(radius, mask):
    o = binary_open(mask, radius)
    c = binary_close(mask, radius)
    np.testing.assert_array_equal(binary_open(o, radius), o)
    np.testing.assert_array_equal(binary_close(c, radius), c)
    assert not (o & ~mask).any()
    assert not (mask & ~c).any()


def test_apply_morphology_sequence():
    m = np.zeros((20, 20), bool)
    m[5:15, 5:15] = True
    m[9, 9] = False
    m[0, 0] = True
    out = apply_morphology(m, [("close", 1), ("open", 1)])
    expected = np.zeros_like(m)
    expected[5:15, 5:15] = True
    np.testing.assert_array_equal(out, expected)
    with pytest.raises(ValueError):
        apply_morphology(m, [("blur", 1)])


def test_components_examples():
    labels, k = connected_components(np.zeros((4, 4), bool))
    assert k == 0 and not labels.any()
    diag = np.array([[1, 0], [0, 1]], bool)
    assert connected_components(diag)[1] == 1
    m = np.zeros((5, 11), bool)
    m[1:4, 1:4] = True
    m[1:4, 6:9] = True
    labels, k = connected_components(m)
    assert k == 2
    assert labels[2, 2] == 1 and labels[2, 7] == 2


@given(masks)
def test_components_match_flood_fill(mask):
    labels, k = connected_components(mask)
    ref, kref = flood_fill_labels(mask)
    assert k == kref
    np.testing.assert_array_equal(labels, ref)
    assert np.bincount(labels.ravel(), minlength=k + 1)[1:].sum() == mask.sum()


def _blob_labels(areas, shape=(300, 300)):
    labels = np.zeros(shape, dtype=np.int64)
    r = 1
    for i, area in enumerate(areas, start=1):
        w = min(area, shape[1] - 2)
        rows = -(-area // w)
        flat = np.zeros(rows * w, bool)
        flat[:area] = True
        labels[r:r + rows, 1:1 + w][flat.reshape(rows, w)] = i
        r += rows + 2
    return labels


def test_extract_pass_through():
    labels = _blob_labels([100])
    regions, report = extract_regions(labels, np.zeros(labels.shape), 64, 10000)
    assert len(regions) == 1 and regions[0].area == 100
    assert (report.kept, report.too_small, report.too_large) == (1, 0, 0)


def test_extract_too_small():
    regions, report = extract_regions(_blob_labels([20]), np.zeros((300, 300)), 64, 10000)
    assert regions == [] and report.too_small == 1


def test_extract_too_large():
    labels = _blob_labels([100, 50000])
    regions, report = extract_regions(labels, np.zeros(labels.shape), 64, 20000)
    assert [r.area for r in regions] == [100]
    assert report.too_large == 1


def test_extract_default_max_and_checks():
    labels = np.ones((10, 10), dtype=np.int64)
    regions, report = extract_regions(labels, np.zeros((10, 10)), min_area=1)
    assert regions == [] and report.too_large == 1
    with pytest.raises(ContractError):
        extract_regions(labels, np.zeros((9, 10)))
    with pytest.raises(ValueError):
        extract_regions(labels, np.zeros((10, 10)), min_area=0)


def test_region_geometry_invariants(rng):
    img = rng.random((40, 40))
    labels = np.zeros((40, 40), dtype=np.int64)
    labels[10:15, 3:9] = 1
    labels[12, 9] = 1
    r = region_from_label(labels, img, 1, margin=4, source="t")
    assert r.bbox == (10, 3, 14, 9)
    assert r.crop_origin == (6, 0)
    assert r.area == r.mask_crop.sum() == 31
    rows = np.flatnonzero(r.mask_crop.any(axis=1)) + r.crop_origin[0]
    cols = np.flatnonzero(r.mask_crop.any(axis=0)) + r.crop_origin[1]
    assert (rows[0], cols[0], rows[-1], cols[-1]) == r.bbox
    np.testing.assert_array_equal(r.image_crop, img[6:19, 0:14])
    assert crop_box(r.bbox, (40, 40), 4) == (6, 0, 19, 14)


def test_region_from_crop_matches_label():
    labels = np.zeros((30, 30), dtype=np.int64)
    labels[5:9, 5:12] = 3
    img = np.arange(900.0).reshape(30, 30)
    a = region_from_label(labels, img, 3, margin=2)
    b = region_from_crop(labels, img, 3, (3, 3, 11, 14))
    assert a.bbox == b.bbox and a.crop_origin == b.crop_origin
    np.testing.assert_array_equal(a.mask_crop, b.mask_crop)
    np.testing.assert_array_equal(a.image_crop, b.image_crop)
    with pytest.raises(ContractError):
        region_from_crop(labels, img, 4, (3, 3, 11, 14))
    with pytest.raises(ContractError):
        region_from_crop(labels, img, 3, (3, 3, 31, 14))


def _region(mask):
    mask = np.asarray(mask, bool)
    return Region(1, (0, 0, 0, 0), (0, 0), mask, np.zeros(mask.shape), int(mask.sum()))


def test_props_single_pixel():
    p = region_props(_region([[1]]))
    assert p.area_px == 1
    assert p.equivalent_diameter == pytest.approx(1.1284, abs=1e-4)
    assert p.eccentricity == 0 and p.major_axis == 0


def test_props_line():
    p = region_props(_region(np.ones((1, 9))))
    assert p.centroid == (0.0, 4.0)
    assert p.major_axis == pytest.approx(4 * math.sqrt((81 - 1) / 12))
    assert p.minor_axis == 0
    assert 0.9 < p.eccentricity <= 1.0


def test_props_disk():
    yy, xx = np.mgrid[-12:13, -12:13]
    p = region_props(_region(yy**2 + xx**2 <= 100), pixel_size=0.5)
    assert abs(p.equivalent_diameter - 20) <= 1.0
    assert p.eccentricity < 0.1
    assert p.area_nm2 == pytest.approx(p.area_px * 0.25)
    assert p.major_axis >= p.minor_axis >= 0


def test_label_from_instances_rule():
    mask = np.zeros((10, 10), bool)
    mask[2:8, 2:8] = True  # 36 px
    r = _region(mask)
    inst = np.zeros((10, 10), dtype=np.int64)
    classes = {1: ClassLabel.STACKING_FAULT, 2: ClassLabel.MISORIENTED}
    assert label_from_instances(r, inst, classes) == ClassLabel.NO_PARTICLE
    inst[2:8, 2:8] = 1
    assert label_from_instances(r, inst, classes) == ClassLabel.STACKING_FAULT
    inst[2:8, 5:8] = 2
    assert label_from_instances(r, inst, classes) == ClassLabel.AGGLOMERATION
    inst[2:8, 2:8] = 2
    inst[2, 2] = 1  # 1 px of 36 is below 20 %
    assert label_from_instances(r, inst, classes) == ClassLabel.MISORIENTED
    inst[2:8, 2:8] = 9
    with pytest.raises(ContractError):
        label_from_instances(r, inst, classes)
