"""
2-D DFT helpers: transforms, annulus masks in the frequency plane, and
radial integration of magnitude spectra.

Spectra use the unshifted layout (DC term at index ``[0, 0]``). The forward
transform is unnormalised, the inverse carries the ``1/(W*H)`` factor.
Frequency radii are in cycles per image, measured with signed (wrapped)
frequency indices so the geometry is that of the centred spectrum.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError


@dataclass(frozen=True)
class RadialProfile:
    radii: np.ndarray   # integer bins 0..floor(min(w, h)/2)
    values: np.ndarray  # mean |F| per bin
    counts: np.ndarray  # frequency samples per bin

    def without_dc(self) -> "RadialProfile":
        return RadialProfile(self.radii[1:], self.values[1:], self.counts[1:])


def dft2(image: np.ndarray) -> np.ndarray:
    """Unnormalised forward 2-D DFT of any size (no implicit padding)."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise ContractError(f"dft2 needs a non-empty 2-D array, got shape {arr.shape}")
    return np.fft.fft2(arr)


def idft2(spectrum: np.ndarray, return_residue: bool = False):
    """
    Inverse 2-D DFT, real part only.

    With ``return_residue=True`` also returns the largest absolute imaginary
    part discarded, which should be at rounding level for Hermitian input.
    """
    spec = np.asarray(spectrum, dtype=np.complex128)
    if spec.ndim != 2 or spec.size == 0:
        raise ContractError(f"idft2 needs a non-empty 2-D array, got shape {spec.shape}")
    full = np.fft.ifft2(spec)
    if return_residue:
        return full.real.copy(), float(np.abs(full.imag).max())
    return full.real.copy()


def frequency_radius(width: int, height: int) -> np.ndarray:
    """Euclidean radius of every DFT bin, shape ``(height, width)``."""
    v = np.fft.fftfreq(height, d=1.0 / height)
    u = np.fft.fftfreq(width, d=1.0 / width)
    # fftfreq puts the Nyquist bin at -N/2; its magnitude is what matters
    return np.hypot(v[:, None], u[None, :])


def annulus_mask(width: int, height: int, r_in: float, r_out: float) -> np.ndarray:
    """
    Boolean mask of DFT bins with ``r_in <= radius < r_out`` (unshifted layout).

    ``r_out`` may be ``math.inf`` to keep everything beyond ``r_in``.
    """
    if not (r_in >= 0 and r_out > r_in):
        raise ValueError(f"annulus needs 0 <= r_in < r_out, got r_in={r_in}, r_out={r_out}")
    rad = frequency_radius(width, height)
    return (rad >= r_in) & (rad < r_out)


def radial_profile(spectrum: np.ndarray) -> RadialProfile:
    """
    Mean spectral magnitude over integer-floor radius bins.

    Bins run from 0 to ``floor(min(w, h) / 2)``; corner frequencies beyond
    that radius are not reported.
    """
    spec = np.asarray(spectrum)
    height, width = spec.shape
    nbins = min(width, height) // 2 + 1
    rad = frequency_radius(width, height)
    bins = np.floor(rad).astype(np.int64).ravel()
    mag = np.abs(spec).ravel()
    keep = bins < nbins
    counts = np.bincount(bins[keep], minlength=nbins)
    sums = np.bincount(bins[keep], weights=mag[keep], minlength=nbins)
    return RadialProfile(np.arange(nbins), sums / counts, counts)


def profile_stats(profile: RadialProfile | np.ndarray, radii: np.ndarray | None = None) -> tuple[float, float, float]:
    """
    (mean, population std, centre of mass) of a radial profile.

    The centre of mass is in bin units, ``sum(r * p) / sum(p)``, and is 0
    for an all-zero profile. A bare array is taken to start at bin 0.
    """
    if isinstance(profile, RadialProfile):
        values = np.asarray(profile.values, dtype=np.float64)
        radii = profile.radii
    else:
        values = np.asarray(profile, dtype=np.float64)
        if radii is None:
            radii = np.arange(values.size)
    if values.size == 0:
        raise ContractError("profile_stats needs a non-empty profile")
    mean = float(values.mean())
    std = float(values.std())
    total = float(values.sum())
    com = float(np.dot(np.asarray(radii, dtype=np.float64), values) / total) if total != 0 else 0.0
    return mean, std, com

