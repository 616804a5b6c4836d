import math

import numpy as np
import pytest

from crystalseg.errors import ContractError
from crystalseg.spectral import annulus_mask, dft2, idft2, profile_stats, radial_profile

from oracles import direct_dft2, matrix_dft2


def test_constant_image_dc_only():
    f = dft2(np.full((6, 6), 2.5))
    assert f[0, 0] == pytest.approx(2.5 * 36)
    f[0, 0] = 0
    assert np.abs(f).max() < 1e-12


def test_cosine_peaks_at_plus_minus_k():
    n, k = 16, 3
    x = np.arange(n)
    img = np.tile(np.cos(2 * np.pi * k * x / n), (n, 1))
    f = dft2(img)
    np.testing.assert_allclose(f, direct_dft2(img), atol=1e-9)
    mag = np.abs(f)
    assert mag[0, k] == pytest.approx(n * n / 2)
    assert mag[0, n - k] == pytest.approx(n * n / 2)
    mag[0, k] = mag[0, n - k] = 0
    assert mag.max() < 1e-9


def test_impulse_flat_spectrum():
    img = np.zeros((5, 7))
    img[0, 0] = 1
    np.testing.assert_allclose(np.abs(dft2(img)), 1.0)


@pytest.mark.parametrize("h,w", [(1, 1), (2, 3), (5, 5), (7, 4), (16, 13)])
def test_matches_direct_sum(h, w, rng):
    img = rng.normal(size=(h, w))
    ref = direct_dft2(img)
    assert np.abs(dft2(img) - ref).max() <= 1e-9 * max(1.0, np.abs(ref).max())


def test_matrix_oracle_agrees_with_direct_sum(rng):
    img = rng.normal(size=(6, 9))
    np.testing.assert_allclose(matrix_dft2(img), direct_dft2(img), atol=1e-10)
    big = rng.normal(size=(48, 40))
    ref = matrix_dft2(big)
    assert np.abs(dft2(big) - ref).max() <= 1e-9 * np.abs(ref).max()


def test_inverse_round_trip(rng):
    img = rng.random((8, 8))
    back, residue = idft2(dft2(img), return_residue=True)
    np.testing.assert_allclose(back, img, atol=1e-9)
    assert residue < 1e-12


def test_zero_spectrum_and_impulse_inverse():
    np.testing.assert_array_equal(idft2(np.zeros((4, 4), complex)), np.zeros((4, 4)))
    imp = np.zeros((4, 4))
    imp[0, 0] = 1
    np.testing.assert_allclose(idft2(direct_dft2(imp)), imp, atol=1e-12)


def test_parseval(rng):
    img = rng.normal(size=(64, 64))
    lhs = np.sum(img**2)
    rhs = np.sum(np.abs(dft2(img)) ** 2) / img.size
    assert abs(lhs - rhs) <= 1e-6 * lhs


def test_empty_input_rejected():
    with pytest.raises(ContractError):
        dft2(np.zeros((0, 3)))


def test_annulus_all_and_dc():
    assert annulus_mask(8, 8, 0, math.inf).all()
    m = annulus_mask(8, 8, 0, 1)
    assert m[0, 0] and m.sum() == 1


def test_annulus_enumeration_8x8():
    m = annulus_mask(8, 8, 1, 3)
    for v in range(8):
        for u in range(8):
            cu = u - 8 if u >= 4 else u
            cv = v - 8 if v >= 4 else v
            r = math.sqrt(cu * cu + cv * cv)
            assert m[v, u] == (1 <= r < 3)


def test_annuli_disjoint():
    a = annulus_mask(20, 14, 2, 5)
    b = annulus_mask(20, 14, 5, 9)
    assert not (a & b).any()


def test_annulus_bad_radii():
    with pytest.raises(ValueError):
        annulus_mask(8, 8, 3, 3)
    with pytest.raises(ValueError):
        annulus_mask(8, 8, -1, 3)


def test_profile_constant_dc_only():
    p = radial_profile(dft2(np.full((16, 16), 3.0)))
    assert p.values[0] > 0
    assert np.abs(p.values[1:]).max() < 1e-12
    assert (p.counts >= 1).all()
    assert p.radii.tolist() == list(range(9))


def test_profile_peak_at_sinusoid_frequency():
    n, k = 16, 3
    x = np.arange(n)
    img = np.tile(np.sin(2 * np.pi * k * x / n), (n, 1))
    p = radial_profile(direct_dft2(img))
    assert int(np.argmax(p.values)) == k


def test_profile_rotation_and_translation_invariant(rng):
    img = rng.normal(size=(32, 32))
    p = radial_profile(dft2(img)).values
    np.testing.assert_allclose(radial_profile(dft2(np.rot90(img))).values, p, rtol=1e-9, atol=1e-9)
    shifted = np.roll(img, (5, -9), axis=(0, 1))
    np.testing.assert_allclose(radial_profile(dft2(shifted)).values, p, rtol=1e-9, atol=1e-9)


def test_profile_stats_examples():
    assert profile_stats(np.array([1.0, 1, 1, 1])) == (1.0, 0.0, 1.5)
    assert profile_stats(np.array([0.0, 0, 5, 0]))[2] == 2.0
    mean, std, com = profile_stats(np.array([2.0, 4.0]))
    assert (mean, std) == (3.0, 1.0)
    assert com == pytest.approx(4 / 6, abs=1e-12)


def test_profile_stats_zero_profile_and_offset_radii():
    assert profile_stats(np.zeros(4)) == (0.0, 0.0, 0.0)
    p = radial_profile(dft2(np.eye(8))).without_dc()
    _, _, com = profile_stats(p)
    assert com >= 1
