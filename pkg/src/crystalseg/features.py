"""Five-number region descriptor: radial-spectrum statistics plus real-space intensity statistics."""
from __future__ import annotations

from dataclasses import astuple, dataclass

import numpy as np

from .regions import Region
from .spectral import dft2, profile_stats, radial_profile

FEATURE_NAMES = ("f1", "f2", "f3", "f4", "f5")


@dataclass(frozen=True)
class FeatureVector:
    f1: float  # radial-profile mean
    f2: float  # radial-profile std
    f3: float  # radial-profile centre of mass, in bins
    f4: float  # real-space mean over masked pixels
    f5: float  # real-space std over masked pixels

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)


def frame_size(crop_shape: tuple[int, int], pad_to: int) -> int:
    """*pad_to*, or the next multiple of 64 that holds the crop."""
    need = max(crop_shape)
    if need <= pad_to:
        return pad_to
    return -(-need // 64) * 64


def _mean(pix: np.ndarray) -> float:
    # exact for constant input, where np.mean can be off by an ulp
    first = pix.flat[0]
    return float(first) if np.all(pix == first) else float(pix.mean())


def padded_crop(region: Region, pad_to: int = 128) -> np.ndarray:
    """
    The crop as seen by the spectral branch.

    Non-mask pixels take the masked-pixel mean, the masked mean is then
    removed, and the result is centred in a zero ``N x N`` frame. Removing the
    mean first means the zero padding adds no box edge.
    """
    img = np.asarray(region.image_crop, dtype=np.float64)
    mask = np.asarray(region.mask_crop, dtype=bool)
    inside = img[mask]
    centred = np.where(mask, img - _mean(inside), 0.0)
    n = frame_size(img.shape, pad_to)
    frame = np.zeros((n, n), dtype=np.float64)
    r0 = (n - img.shape[0]) // 2
    c0 = (n - img.shape[1]) // 2
    frame[r0 : r0 + img.shape[0], c0 : c0 + img.shape[1]] = centred
    return frame


def compute_features(
    region: Region,
    pad_to: int = 128,
    include_dc: bool = False,
    masked_only: bool = True,
) -> FeatureVector:
    """
    Feature vector of one region.

    Spectral branch: radial profile of the padded crop's DFT magnitude,
    without the DC bin unless ``include_dc``, summarised by mean, std and
    centre of mass. Real-space branch: mean and population std of the
    masked pixels (whole crop when ``masked_only`` is False).

    The spectral features depend on *pad_to*, so a model trained at one
    frame size must be applied at the same one.
    """
    if region.area < 1:
        raise ValueError("region has no pixels")
    profile = radial_profile(dft2(padded_crop(region, pad_to)))
    if not include_dc:
        profile = profile.without_dc()
    f1, f2, f3 = profile_stats(profile)
    img = np.asarray(region.image_crop, dtype=np.float64)
    pix = img[np.asarray(region.mask_crop, dtype=bool)] if masked_only else img.ravel()
    mu = _mean(pix)
    return FeatureVector(f1, f2, f3, mu, float(np.sqrt(np.mean((pix - mu) ** 2))))
