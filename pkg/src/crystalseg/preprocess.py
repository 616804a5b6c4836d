"""Denoising, min-max normalisation and dihedral augmentation of tiles."""
from __future__ import annotations

import numpy as np
from scipy import ndimage

from .errors import ContractError


def median_filter(image: np.ndarray, kernel: int = 3) -> np.ndarray:
    """
    Median of each ``kernel x kernel`` neighbourhood, borders by edge replication.

    Removes isolated hot pixels such as X-ray strikes.
    """
    arr = np.asarray(image, dtype=np.float64)
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError(f"median kernel must be odd and >= 1, got {kernel}")
    if kernel > min(arr.shape):
        raise ContractError(f"median kernel {kernel} exceeds image size {arr.shape}")
    if kernel == 1:
        return arr.copy()
    return ndimage.median_filter(arr, size=kernel, mode="nearest")


def normalize(image: np.ndarray) -> np.ndarray:
    """Affine map to ``[0, 1]`` by min and max; a constant image maps to zeros."""
    arr = np.asarray(image, dtype=np.float64)
    lo, hi = arr.min(), arr.max()
    if hi == lo:
        return np.zeros_like(arr)
    out = (arr - lo) / (hi - lo)
    # guard against 1 + ulp from the division
    return np.clip(out, 0.0, 1.0)


def dihedral_augment(image: np.ndarray) -> list[np.ndarray]:
    """
    The 8 rotations/reflections of a square image.

    Order: rotations by 0, 90, 180, 270 degrees clockwise, then the same
    four applied after a left-right mirror. Element 0 is the input itself.
    """
    arr = np.asarray(image)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ContractError(f"dihedral augmentation needs a square image, got {arr.shape}")
    rotations = [np.rot90(arr, -k) for k in range(4)]
    mirrored = np.fliplr(arr)
    return [r.copy() for r in rotations] + [np.rot90(mirrored, -k).copy() for k in range(4)]
