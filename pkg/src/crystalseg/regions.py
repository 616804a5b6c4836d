"""
Mask clean-up, connected-component isolation and per-region geometry.

Morphology works on the mask as a subset of the infinite pixel plane with
everything outside the image set to background. Closing is computed on a
canvas padded by the structuring-element radius so it stays extensive
(``m <= close(m)``) at the image border.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from .errors import ContractError
from .forest import ClassLabel


def disk(radius: int) -> np.ndarray:
    """
    Discrete disk structuring element.

    Offsets with ``dx^2 + dy^2 <= radius * (radius + 1)``, i.e. pixel centres
    strictly inside a circle of radius ``radius + 1/2``. Radius 1 is the full
    3x3 square; radius 0 is the single centre pixel.
    """
    if radius < 0:
        raise ValueError("radius must be >= 0")
    r = int(radius)
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    return yy * yy + xx * xx <= r * (r + 1)


def binary_dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    m = np.asarray(mask, dtype=bool)
    if radius == 0:
        return m.copy()
    return ndimage.binary_dilation(m, structure=disk(radius), border_value=0)


def binary_erode(mask: np.ndarray, radius: int) -> np.ndarray:
    m = np.asarray(mask, dtype=bool)
    if radius == 0:
        return m.copy()
    return ndimage.binary_erosion(m, structure=disk(radius), border_value=0)


def binary_close(mask: np.ndarray, radius: int) -> np.ndarray:
    """Dilation then erosion with ``disk(radius)``; fills gaps narrower than the disk."""
    m = np.asarray(mask, dtype=bool)
    if radius == 0:
        return m.copy()
    padded = np.pad(m, radius, mode="constant", constant_values=False)
    closed = binary_erode(binary_dilate(padded, radius), radius)
    return closed[radius:-radius, radius:-radius]


def binary_open(mask: np.ndarray, radius: int) -> np.ndarray:
    """Erosion then dilation with ``disk(radius)``; removes specks smaller than the disk."""
    m = np.asarray(mask, dtype=bool)
    if radius == 0:
        return m.copy()
    return binary_dilate(binary_erode(m, radius), radius)


def apply_morphology(mask: np.ndarray, steps: Iterable[Sequence]) -> np.ndarray:
    """Run a sequence like ``[("close", 2), ("open", 2)]``."""
    out = np.asarray(mask, dtype=bool)
    for op, radius in steps:
        if op == "close":
            out = binary_close(out, int(radius))
        elif op == "open":
            out = binary_open(out, int(radius))
        else:
            raise ValueError(f"unknown morphology step {op!r}")
    return out


_EIGHT = np.ones((3, 3), dtype=bool)


def connected_components(mask: np.ndarray) -> tuple[np.ndarray, int]:
    """
    8-connected component labelling.

    Returns ``(labels, K)``; labels are ``1..K`` in raster order of each
    component's first pixel, 0 is background.
    """
    m = np.asarray(mask, dtype=bool)
    labels, k = ndimage.label(m, structure=_EIGHT)
    return labels.astype(np.int64), int(k)


@dataclass
class Region:
    """One isolated candidate particle."""

    id: int
    bbox: tuple[int, int, int, int]            # tight, inclusive (r0, c0, r1, c1)
    crop_origin: tuple[int, int]               # tile coords of crop[0, 0]
    mask_crop: np.ndarray
    image_crop: np.ndarray
    area: int
    source: str = ""


@dataclass
class RegionProps:
    area_px: int
    area_nm2: float | None
    equivalent_diameter: float
    centroid: tuple[float, float]
    major_axis: float
    minor_axis: float
    eccentricity: float


@dataclass
class ExtractionReport:
    kept: int = 0
    too_small: int = 0
    too_large: int = 0


def crop_box(bbox: tuple[int, int, int, int], shape: tuple[int, int], margin: int) -> tuple[int, int, int, int]:
    """Half-open crop ``(r0, c0, r1, c1)`` around an inclusive bbox, clamped to *shape*."""
    r0, c0, r1, c1 = bbox
    return (
        max(r0 - margin, 0),
        max(c0 - margin, 0),
        min(r1 + margin + 1, shape[0]),
        min(c1 + margin + 1, shape[1]),
    )


def region_from_label(
    labels: np.ndarray, image: np.ndarray, label: int, margin: int = 8, source: str = ""
) -> Region:
    """Build the Region for one label of a label image."""
    sel = labels == label
    rows = np.flatnonzero(sel.any(axis=1))
    cols = np.flatnonzero(sel.any(axis=0))
    if rows.size == 0:
        raise ContractError(f"label {label} is not present")
    bbox = (int(rows[0]), int(cols[0]), int(rows[-1]), int(cols[-1]))
    r0, c0, r1, c1 = crop_box(bbox, labels.shape, margin)
    mask_crop = sel[r0:r1, c0:c1].copy()
    return Region(
        id=int(label),
        bbox=bbox,
        crop_origin=(r0, c0),
        mask_crop=mask_crop,
        image_crop=np.asarray(image, dtype=np.float64)[r0:r1, c0:c1].copy(),
        area=int(mask_crop.sum()),
        source=source,
    )


def region_from_crop(
    labels: np.ndarray, image: np.ndarray, label: int, crop: tuple[int, int, int, int],
    region_id: int | None = None, source: str = "",
) -> Region:
    """Rebuild a Region from a stored half-open crop box (as in a regions table)."""
    r0, c0, r1, c1 = crop
    h, w = np.shape(labels)
    if not (0 <= r0 < r1 <= h and 0 <= c0 < c1 <= w):
        raise ContractError(f"crop box {crop} outside a {w}x{h} label image")
    mask_crop = np.asarray(labels)[r0:r1, c0:c1] == label
    if not mask_crop.any():
        raise ContractError(f"label {label} is not present in crop box {crop}")
    rows = np.flatnonzero(mask_crop.any(axis=1))
    cols = np.flatnonzero(mask_crop.any(axis=0))
    return Region(
        id=int(label if region_id is None else region_id),
        bbox=(r0 + int(rows[0]), c0 + int(cols[0]), r0 + int(rows[-1]), c0 + int(cols[-1])),
        crop_origin=(r0, c0),
        mask_crop=mask_crop,
        image_crop=np.asarray(image, dtype=np.float64)[r0:r1, c0:c1].copy(),
        area=int(mask_crop.sum()),
        source=source,
    )


def label_from_instances(
    region: Region, instance_crop: np.ndarray, classes: dict[int, ClassLabel], min_fraction: float = 0.2
) -> ClassLabel:
    """
    Ground-truth class of a region from an instance image.

    Instances covering at least *min_fraction* of the region's pixels count
    as present: none gives NoParticle, two or more Agglomeration, exactly one
    that instance's class.
    """
    inst = np.asarray(instance_crop)[region.mask_crop]
    ids, counts = np.unique(inst[inst > 0], return_counts=True)
    present = [int(i) for i, c in zip(ids, counts) if c >= min_fraction * region.area]
    if not present:
        return ClassLabel.NO_PARTICLE
    if len(present) > 1:
        return ClassLabel.AGGLOMERATION
    if present[0] not in classes:
        raise ContractError(f"instance {present[0]} has no class annotation")
    return ClassLabel(classes[present[0]])


def extract_regions(
    labels: np.ndarray,
    image: np.ndarray,
    min_area: int = 64,
    max_area: int | None = None,
    margin: int = 8,
    source: str = "",
) -> tuple[list[Region], ExtractionReport]:
    """
    Regions whose area lies in ``[min_area, max_area]``.

    ``max_area`` defaults to a quarter of the image area. Returns the kept
    regions (ordered by label) and counts of what was discarded.
    """
    labels = np.asarray(labels)
    if labels.shape != np.shape(image):
        raise ContractError(f"labels {labels.shape} and image {np.shape(image)} differ in size")
    if max_area is None:
        max_area = labels.size // 4
    if not 0 < min_area <= max_area:
        raise ValueError(f"need 0 < min_area <= max_area, got {min_area}, {max_area}")
    areas = np.bincount(labels.ravel())
    report = ExtractionReport()
    regions = []
    for lab in range(1, areas.size):
        area = int(areas[lab])
        if area == 0:
            continue
        if area < min_area:
            report.too_small += 1
        elif area > max_area:
            report.too_large += 1
        else:
            regions.append(region_from_label(labels, image, lab, margin, source))
    report.kept = len(regions)
    return regions, report


def region_props(region: Region, pixel_size: float | None = None) -> RegionProps:
    """
    Size and shape of a region.

    Axes are ``4 * sqrt(eigenvalue)`` of the second central moments of the
    set pixels (population normalisation). Centroid is in tile coordinates.
    """
    rr, cc = np.nonzero(region.mask_crop)
    area = int(rr.size)
    rr = rr + region.crop_origin[0]
    cc = cc + region.crop_origin[1]
    cy, cx = rr.mean(), cc.mean()
    dy, dx = rr - cy, cc - cx
    mu_rr = float(np.mean(dy * dy))
    mu_cc = float(np.mean(dx * dx))
    mu_rc = float(np.mean(dy * dx))
    half_tr = 0.5 * (mu_rr + mu_cc)
    disc = math.sqrt(max(0.25 * (mu_rr - mu_cc) ** 2 + mu_rc**2, 0.0))
    l1 = max(half_tr + disc, 0.0)
    l2 = max(half_tr - disc, 0.0)
    major, minor = 4.0 * math.sqrt(l1), 4.0 * math.sqrt(l2)
    ecc = math.sqrt(1.0 - (minor / major) ** 2) if major > 0 else 0.0
    return RegionProps(
        area_px=area,
        area_nm2=area * pixel_size**2 if pixel_size is not None else None,
        equivalent_diameter=math.sqrt(4.0 * area / math.pi),
        centroid=(float(cy), float(cx)),
        major_axis=major,
        minor_axis=minor,
        eccentricity=ecc,
    )
