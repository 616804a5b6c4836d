import numpy as np
import pytest

from crystalseg.features import FEATURE_NAMES, compute_features, frame_size, padded_crop
from crystalseg.regions import Region, region_from_label
from crystalseg.spectral import profile_stats, radial_profile

from oracles import matrix_dft2


def _region(img, mask):
    mask = np.asarray(mask, bool)
    return Region(1, (0, 0, 0, 0), (0, 0), mask, np.asarray(img, float), int(mask.sum()))


def test_constant_region():
    mask = np.zeros((20, 20), bool)
    mask[4:16, 5:15] = True
    fv = compute_features(_region(np.full((20, 20), 0.7), mask))
    assert fv.f4 == pytest.approx(0.7) and fv.f5 == 0
    assert fv.f1 == fv.f2 == fv.f3 == 0


def test_translation_invariance(rng):
    patch = rng.random((12, 14))
    pmask = rng.random((12, 14)) > 0.3
    pmask[6, :] = True
    pmask[:, 7] = True
    out = []
    for r0, c0 in ((10, 10), (40, 27)):
        img = rng.random((80, 80))
        labels = np.zeros((80, 80), dtype=np.int64)
        img[r0:r0 + 12, c0:c0 + 14] = patch
        labels[r0:r0 + 12, c0:c0 + 14] = pmask
        # margin pixels outside the mask must not influence anything
        out.append(compute_features(region_from_label(labels, img, 1, margin=0)))
    assert out[0] == out[1]


def test_fringe_frequency_recovered():
    n, k = 64, 10
    yy, xx = np.mgrid[0:40, 0:40]
    img = 0.5 + 0.2 * np.cos(2 * np.pi * k * xx / n)
    mask = (yy - 20) ** 2 + (xx - 20) ** 2 <= 18**2
    region = _region(img, mask)
    frame = padded_crop(region, n)
    assert frame.shape == (n, n)
    prof = radial_profile(matrix_dft2(frame))
    assert abs(int(np.argmax(prof.values[1:])) + 1 - k) <= 1
    fv = compute_features(region, n)
    assert fv.f3 > 0 and np.isfinite(fv.as_array()).all()
    assert fv.f2 >= 0 and fv.f5 >= 0


def test_determinism_and_names(rng):
    img = rng.random((30, 30))
    mask = rng.random((30, 30)) > 0.5
    a = compute_features(_region(img, mask))
    b = compute_features(_region(img.copy(), mask.copy()))
    assert a.as_array().tobytes() == b.as_array().tobytes()
    assert len(FEATURE_NAMES) == a.as_array().size == 5


def test_scaling_covariance(rng):
    img = rng.random((30, 30))
    mask = np.zeros((30, 30), bool)
    mask[5:25, 3:27] = True
    a = compute_features(_region(img, mask)).as_array()
    b = compute_features(_region(3.0 * img, mask)).as_array()
    np.testing.assert_allclose(b[[0, 1, 3, 4]], 3.0 * a[[0, 1, 3, 4]], rtol=1e-12)
    assert b[2] == pytest.approx(a[2], rel=1e-12)


def test_real_space_stats_pad_independent(rng):
    img = rng.random((30, 30))
    mask = rng.random((30, 30)) > 0.4
    a = compute_features(_region(img, mask), 64)
    b = compute_features(_region(img, mask), 256)
    assert (a.f4, a.f5) == (b.f4, b.f5)


def test_options(rng):
    img = rng.random((30, 30))
    mask = np.zeros((30, 30), bool)
    mask[8:22, 8:22] = True
    r = _region(img, mask)
    masked = compute_features(r)
    whole = compute_features(r, masked_only=False)
    assert whole.f4 == pytest.approx(img.mean())
    assert masked.f4 == pytest.approx(img[mask].mean())
    dc = compute_features(r, include_dc=True)
    # mean is removed before the transform, so the DC bin is zero and only dilutes f1
    assert dc.f1 < masked.f1


def test_frame_grows_for_large_crops():
    assert frame_size((40, 100), 128) == 128
    assert frame_size((40, 130), 128) == 192
    mask = np.ones((10, 150), bool)
    assert padded_crop(_region(np.zeros((10, 150)), mask), 128).shape == (192, 192)


def test_profile_stats_used_on_dc_free_profile():
    frame = np.zeros((16, 16))
    frame[8, 8] = 1.0
    prof = radial_profile(matrix_dft2(frame)).without_dc()
    mean, std, com = profile_stats(prof)
    assert mean == pytest.approx(1.0) and std == pytest.approx(0.0, abs=1e-12)
    assert com == pytest.approx(np.mean(np.arange(1, 9)))
