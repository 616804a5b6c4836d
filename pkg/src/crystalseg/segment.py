"""
Binary particle masks from micrograph tiles.

Three routes: Otsu intensity thresholding, Fourier annulus filtering, and
thresholding of probability maps produced by an external network.
"""
from __future__ import annotations

import math
from typing import Literal

import numpy as np
from scipy import ndimage

from .errors import ContractError
from .spectral import annulus_mask, dft2, idft2

FourierMode = Literal["keep", "suppress"]


class DegenerateHistogramError(ContractError):
    """All pixels fall into one histogram bin, so no split exists."""


def otsu_split(hist: np.ndarray) -> int:
    """
    Otsu split index ``k`` for integer histogram *hist*.

    Class 0 is bins ``[0, k)``, class 1 is bins ``[k, len(hist))``. The
    between-class variance is compared in exact integer arithmetic, using bin
    index as intensity; ties go to the lowest ``k``.
    """
    counts = [int(c) for c in np.asarray(hist).ravel()]
    if any(c < 0 for c in counts):
        raise ValueError("histogram counts must be non-negative")
    n = sum(counts)
    s = sum(i * c for i, c in enumerate(counts))
    best_k, best_num, best_den = -1, 0, 1
    n0 = s0 = 0
    for k in range(1, len(counts)):
        n0 += counts[k - 1]
        s0 += (k - 1) * counts[k - 1]
        n1 = n - n0
        if n0 == 0 or n1 == 0:
            continue
        # sigma_b^2 * n^2 = (s0*n - s*n0)^2 / (n0*n1)
        num = (s0 * n - s * n0) ** 2
        den = n0 * n1
        if best_k < 0 or num * best_den > best_num * den:
            best_k, best_num, best_den = k, num, den
    if best_k < 0 or best_num == 0:
        raise DegenerateHistogramError("degenerate histogram: no valid two-class split")
    return best_k


def intensity_bins(image: np.ndarray, bins: int) -> np.ndarray:
    """Histogram bin index of each pixel for ``bins`` equal bins over ``[0, 1]``."""
    arr = np.asarray(image, dtype=np.float64)
    return np.clip(np.floor(arr * bins), 0, bins - 1).astype(np.int64)


def otsu_threshold(
    image: np.ndarray, bins: int = 256, particle_above: bool = True
) -> tuple[float, np.ndarray]:
    """
    Otsu threshold of a ``[0, 1]``-normalised image.

    Returns ``(threshold, mask)``. The threshold is the bin boundary ``k/bins``
    and pixels in bins ``>= k`` form the upper class. ``particle_above``
    selects which class is labelled particle.
    """
    if bins < 2:
        raise ValueError("bins must be >= 2")
    arr = np.asarray(image, dtype=np.float64)
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ContractError("otsu_threshold expects an image normalised to [0, 1]")
    idx = intensity_bins(arr, bins)
    k = otsu_split(np.bincount(idx.ravel(), minlength=bins))
    upper = idx >= k
    return k / bins, upper if particle_above else ~upper


def smooth(image: np.ndarray, sigma: float) -> np.ndarray:
    """Gaussian blur truncated at 3 sigma with edge replication; sigma 0 is a no-op."""
    if sigma < 0:
        raise ValueError("smooth_sigma must be >= 0")
    arr = np.asarray(image, dtype=np.float64)
    if sigma == 0:
        return arr.copy()
    return ndimage.gaussian_filter(arr, sigma=sigma, mode="nearest", truncate=3.0)


def fourier_response(
    image: np.ndarray,
    r_in: float,
    r_out: float,
    smooth_sigma: float = 4.0,
    mode: FourierMode = "keep",
) -> np.ndarray:
    """Smoothed magnitude of the annulus-filtered image."""
    arr = np.asarray(image, dtype=np.float64)
    height, width = arr.shape
    ring = annulus_mask(width, height, r_in, r_out)
    if mode == "suppress":
        ring = ~ring
    elif mode != "keep":
        raise ValueError(f"mode must be 'keep' or 'suppress', got {mode!r}")
    filtered = idft2(dft2(arr) * ring)
    return smooth(np.abs(filtered), smooth_sigma)


def fourier_filter_segment(
    image: np.ndarray,
    r_in: float,
    r_out: float,
    smooth_sigma: float = 4.0,
    mode: FourierMode = "keep",
    threshold: float = 0.5,
) -> np.ndarray:
    """
    Segment crystalline regions by their lattice frequencies.

    The image spectrum is multiplied by an annulus (``mode="keep"``) or its
    complement (``mode="suppress"``), transformed back, rectified, smoothed,
    and thresholded at ``threshold`` times the maximum response. A response
    that is zero everywhere gives an empty mask.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    response = fourier_response(image, r_in, r_out, smooth_sigma, mode)
    peak = response.max()
    if peak <= 0:
        return np.zeros(response.shape, dtype=bool)
    return response >= threshold * peak


def threshold_probmap(prob: np.ndarray, t: float = 0.5) -> np.ndarray:
    """Particle where ``prob >= t``."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"probability threshold must lie in [0, 1], got {t}")
    return np.asarray(prob) >= t


def parse_radius(value: str | float) -> float:
    """Accept ``inf``/``all`` as an unbounded outer radius."""
    if isinstance(value, str) and value.strip().lower() in ("inf", "all"):
        return math.inf
    return float(value)
