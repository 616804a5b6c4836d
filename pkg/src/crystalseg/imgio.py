"""
Image, mask and manifest I/O.

Supported on-disk formats
-------------------------
* PGM ``P5`` with maxval <= 255 (8-bit) or <= 65535 (16-bit, big-endian).
* Grayscale PNG, 8 or 16 bit (read and written through Pillow).
* Raw little-endian float32, row-major, with a JSON sidecar next to it
  (same stem, ``.json``) holding ``{"width", "height", "pixel_size_nm"}``.

Images are returned as 2-D ``float64`` arrays of shape ``(height, width)``.
Intensities are never rescaled on load; normalisation is a pipeline step.
"""
from __future__ import annotations

import json
import os
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Union

import numpy as np
from PIL import Image

from .errors import ContractError, ImageFormatError

PathLike = Union[str, os.PathLike]

RAW_SUFFIXES = {".f32", ".raw"}
PGM_SUFFIXES = {".pgm"}
PNG_SUFFIXES = {".png"}

# refuse headers that would allocate more than this many pixels
MAX_PIXELS = 1 << 30

__all__ = [
    "load_image",
    "save_image",
    "load_mask",
    "save_mask",
    "load_probmap",
    "load_labels",
    "save_labels",
    "read_sidecar",
    "slice_tiles",
    "ManifestEntry",
    "load_manifest",
    "save_manifest",
]


# ---------------------------------------------------------------------
# PGM
# ---------------------------------------------------------------------
_PGM_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _read_pgm(path: Path) -> tuple[np.ndarray, int]:
    data = path.read_bytes()
    if not data.startswith(b"P"):
        raise ImageFormatError(f"{path}: malformed header (not a PGM file)")
    magic = data[:2]
    if magic in (b"P6", b"P3"):
        raise ImageFormatError(f"{path}: non-grayscale input (PPM colour image)")
    if magic != b"P5":
        raise ImageFormatError(f"{path}: malformed header (unsupported magic {magic!r})")

    pos = 2
    values = []
    for _ in range(3):
        m = _PGM_TOKEN.match(data, pos)
        if m is None:
            raise ImageFormatError(f"{path}: malformed header")
        try:
            values.append(int(m.group(1)))
        except ValueError:
            raise ImageFormatError(f"{path}: malformed header field {m.group(1)!r}") from None
        pos = m.end()
    width, height, maxval = values
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise ImageFormatError(f"{path}: malformed header (missing separator)")
    pos += 1

    if width < 1 or height < 1:
        raise ImageFormatError(f"{path}: malformed header (size {width}x{height})")
    if width * height > MAX_PIXELS:
        raise ImageFormatError(f"{path}: dimension overflow ({width}x{height})")
    if not 0 < maxval < 65536:
        raise ImageFormatError(f"{path}: malformed header (maxval {maxval})")

    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = width * height * dtype.itemsize
    payload = data[pos : pos + need]
    if len(payload) < need:
        raise ImageFormatError(f"{path}: truncated pixel data ({len(payload)} of {need} bytes)")
    arr = np.frombuffer(payload, dtype=dtype).reshape(height, width)
    return arr, maxval


def _write_pgm(path: Path, arr: np.ndarray, maxval: int) -> None:
    height, width = arr.shape
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    header = f"P5\n{width} {height}\n{maxval}\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(arr, dtype=dtype).tobytes())


# ---------------------------------------------------------------------
# PNG
# ---------------------------------------------------------------------
def _read_png(path: Path) -> tuple[np.ndarray, int]:
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("L", "1"):
                return np.asarray(im.convert("L"), dtype=np.uint8), 255
            if mode in ("I;16", "I;16B", "I;16L"):
                return np.asarray(im, dtype=np.uint16), 65535
            if mode == "I":
                arr = np.asarray(im, dtype=np.int64)
                if arr.size and (arr.min() < 0 or arr.max() > 65535):
                    raise ImageFormatError(f"{path}: 32-bit integer PNG out of 16-bit range")
                return arr.astype(np.uint16), 65535
    except ImageFormatError:
        raise
    except (OSError, ValueError) as exc:
        raise ImageFormatError(f"{path}: malformed image ({exc})") from exc
    raise ImageFormatError(f"{path}: non-grayscale input (mode {mode})")


def _write_png(path: Path, arr: np.ndarray, maxval: int) -> None:
    if maxval > 255:
        im = Image.fromarray(np.ascontiguousarray(arr, dtype=np.uint16))
    else:
        im = Image.fromarray(np.ascontiguousarray(arr, dtype=np.uint8))
    im.save(path)


# ---------------------------------------------------------------------
# Raw float32 + sidecar
# ---------------------------------------------------------------------
def sidecar_path(path: PathLike) -> Path:
    return Path(path).with_suffix(".json")


def read_sidecar(path: PathLike) -> dict[str, Any]:
    """Return the JSON sidecar of a raw float32 image."""
    side = sidecar_path(path)
    try:
        meta = json.loads(side.read_text())
    except FileNotFoundError:
        raise
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ImageFormatError(f"{side}: malformed sidecar ({exc})") from exc
    if not isinstance(meta, dict):
        raise ImageFormatError(f"{side}: sidecar must be a JSON object")
    try:
        width, height = int(meta["width"]), int(meta["height"])
    except (KeyError, TypeError, ValueError):
        raise ImageFormatError(f"{side}: sidecar needs integer 'width' and 'height'") from None
    if width < 1 or height < 1:
        raise ImageFormatError(f"{side}: malformed header (size {width}x{height})")
    if width * height > MAX_PIXELS:
        raise ImageFormatError(f"{side}: dimension overflow ({width}x{height})")
    meta["width"], meta["height"] = width, height
    return meta


def _read_raw(path: Path) -> np.ndarray:
    meta = read_sidecar(path)
    width, height = meta["width"], meta["height"]
    payload = path.read_bytes()
    if len(payload) != width * height * 4:
        raise ImageFormatError(
            f"{path}: expected {width * height * 4} bytes for {width}x{height} float32, got {len(payload)}"
        )
    return np.frombuffer(payload, dtype="<f4").reshape(height, width)


def _write_raw(path: Path, arr: np.ndarray, pixel_size_nm: float | None) -> None:
    height, width = arr.shape
    path.write_bytes(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    meta: dict[str, Any] = {"width": width, "height": height}
    if pixel_size_nm is not None:
        meta["pixel_size_nm"] = pixel_size_nm
    sidecar_path(path).write_text(json.dumps(meta) + "\n")


# ---------------------------------------------------------------------
# Public API
# ---------------------------------------------------------------------
def _read_any(path: PathLike) -> tuple[np.ndarray, int | None]:
    """Return (integer-or-float array, maxval or None for float data)."""
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"{p}: no such file")
    suffix = p.suffix.lower()
    if suffix in RAW_SUFFIXES:
        return _read_raw(p), None
    if suffix in PGM_SUFFIXES:
        return _read_pgm(p)
    if suffix in PNG_SUFFIXES:
        return _read_png(p)
    raise ImageFormatError(f"{p}: unsupported file extension {suffix!r}")


def load_image(path: PathLike) -> np.ndarray:
    """
    Load a grayscale image as a ``float64`` array of shape ``(height, width)``.

    Integer formats keep their raw counts (a 16-bit pixel of 65535 loads as
    65535.0). Raises ``ImageFormatError`` for malformed or colour input and
    ``FileNotFoundError`` if *path* does not exist.
    """
    arr, _ = _read_any(path)
    out = arr.astype(np.float64)
    if not np.all(np.isfinite(out)):
        raise ImageFormatError(f"{path}: image contains NaN or Inf")
    return out


def save_image(image: np.ndarray, path: PathLike, *, bits: int = 16, pixel_size_nm: float | None = None) -> None:
    """
    Write *image* to *path*; the format follows the extension.

    Raw float32 output is lossless for float32-representable data. PGM/PNG
    output rounds and clips to ``[0, 2**bits - 1]``, so saving a loaded
    integer image again reproduces it exactly.
    """
    p = Path(path)
    arr = np.asarray(image)
    if arr.ndim != 2:
        raise ContractError(f"expected a 2-D image, got shape {arr.shape}")
    suffix = p.suffix.lower()
    if suffix in RAW_SUFFIXES:
        _write_raw(p, arr, pixel_size_nm)
        return
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    maxval = (1 << bits) - 1
    q = np.clip(np.rint(arr), 0, maxval)
    if suffix in PGM_SUFFIXES:
        _write_pgm(p, q, maxval)
    elif suffix in PNG_SUFFIXES:
        _write_png(p, q, maxval)
    else:
        raise ImageFormatError(f"{p}: unsupported file extension {suffix!r}")


def load_mask(path: PathLike) -> np.ndarray:
    """Load a binary mask; any nonzero pixel is particle. Returns a bool array."""
    arr, _ = _read_any(path)
    return np.asarray(arr) != 0


def save_mask(mask: np.ndarray, path: PathLike) -> None:
    """Write *mask* as 8-bit grayscale, 0 = background and 255 = particle."""
    m = np.asarray(mask)
    if m.ndim != 2:
        raise ContractError(f"expected a 2-D mask, got shape {m.shape}")
    p = Path(path)
    out = np.where(m.astype(bool), 255, 0).astype(np.uint8)
    suffix = p.suffix.lower()
    if suffix in PGM_SUFFIXES:
        _write_pgm(p, out, 255)
    elif suffix in PNG_SUFFIXES:
        _write_png(p, out, 255)
    else:
        raise ImageFormatError(f"{p}: masks must be .pgm or .png")


def load_probmap(path: PathLike) -> np.ndarray:
    """
    Load a particle-probability map into ``[0, 1]``.

    Integer images are divided by their maxval. Raw float maps are clamped,
    with a warning when any value falls outside ``[0, 1]``.
    """
    arr, maxval = _read_any(path)
    if maxval is not None:
        return arr.astype(np.float64) / maxval
    prob = arr.astype(np.float64)
    if not np.all(np.isfinite(prob)):
        raise ImageFormatError(f"{path}: probability map contains NaN or Inf")
    if prob.size and (prob.min() < 0.0 or prob.max() > 1.0):
        warnings.warn(f"{path}: probabilities outside [0, 1] were clamped", stacklevel=2)
        prob = np.clip(prob, 0.0, 1.0)
    return prob


def load_labels(path: PathLike) -> np.ndarray:
    """Load an integer label image (16-bit PGM/PNG) as ``int64``."""
    arr, maxval = _read_any(path)
    if maxval is None:
        raise ImageFormatError(f"{path}: label images must be integer PGM/PNG")
    return arr.astype(np.int64)


def save_labels(labels: np.ndarray, path: PathLike) -> None:
    lab = np.asarray(labels)
    if lab.size and (lab.min() < 0 or lab.max() > 65535):
        raise ContractError("label values must fit in 16 bits")
    p = Path(path)
    if p.suffix.lower() in PNG_SUFFIXES:
        _write_png(p, lab, 65535)
    else:
        _write_pgm(p, lab, 65535)


# ---------------------------------------------------------------------
# Tiling
# ---------------------------------------------------------------------
def _tile_starts(length: int, tile: int) -> list[int]:
    starts = list(range(0, length - tile + 1, tile))
    if length % tile:
        starts.append(length - tile)
    return starts


def slice_tiles(image: np.ndarray, tile: int = 512) -> list[tuple[np.ndarray, int, int]]:
    """
    Cut *image* into ``tile x tile`` pieces in row-major tile order.

    Returns ``(tile_array, tile_row, tile_col)`` triples. When a dimension is
    not a multiple of *tile* the last tile in that direction is anchored to
    the image edge and overlaps its neighbour; no pixel is dropped.
    """
    arr = np.asarray(image)
    if tile < 1:
        raise ValueError("tile must be >= 1")
    height, width = arr.shape[:2]
    if height < tile or width < tile:
        raise ContractError(f"image {width}x{height} is smaller than tile {tile}")
    tiles = []
    for i, r0 in enumerate(_tile_starts(height, tile)):
        for j, c0 in enumerate(_tile_starts(width, tile)):
            tiles.append((arr[r0 : r0 + tile, c0 : c0 + tile].copy(), i, j))
    return tiles


# ---------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------
_PATH_KEYS = ("image", "mask", "probmap")
_CORE_KEYS = ("image", "mask", "probmap", "material", "pixel_size_nm")


@dataclass
class ManifestEntry:
    """One dataset item. Paths are absolute once loaded."""

    image: Path
    mask: Path | None = None
    probmap: Path | None = None
    material: str | None = None
    pixel_size_nm: float | None = None
    # stage outputs and provenance ("name", "pred_mask", "labels", "instances", ...)
    extra: dict[str, Any] = field(default_factory=dict)

    @property
    def name(self) -> str:
        return self.extra.get("name") or Path(self.image).stem

    def path(self, key: str) -> Path | None:
        """Resolved path stored under a core or extra key."""
        if key in _PATH_KEYS:
            return getattr(self, key)
        value = self.extra.get(key)
        return Path(value) if value is not None else None


def load_manifest(path: PathLike) -> list[ManifestEntry]:
    """Read a manifest; relative paths resolve against the manifest's directory."""
    p = Path(path)
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ContractError(f"{p}: manifest is not valid JSON ({exc})") from exc
    if not isinstance(raw, list):
        raise ContractError(f"{p}: manifest must be a JSON array of entries")
    base = p.parent
    entries = []
    seen: set[Path] = set()
    for k, item in enumerate(raw):
        if not isinstance(item, dict) or "image" not in item:
            raise ContractError(f"{p}: entry {k} lacks an 'image' key")
        kwargs: dict[str, Any] = {}
        for key in _PATH_KEYS:
            if item.get(key) is not None:
                kwargs[key] = (base / item[key]).resolve()
        if kwargs["image"] in seen:
            raise ContractError(f"{p}: duplicate image path {item['image']}")
        seen.add(kwargs["image"])
        ps = item.get("pixel_size_nm")
        if ps is not None and not (isinstance(ps, (int, float)) and ps > 0):
            raise ContractError(f"{p}: entry {k} has invalid pixel_size_nm {ps!r}")
        extra = {}
        for key, value in item.items():
            if key in _CORE_KEYS:
                continue
            if isinstance(value, str) and key in _EXTRA_PATH_KEYS:
                value = str((base / value).resolve())
            extra[key] = value
        entries.append(
            ManifestEntry(material=item.get("material"), pixel_size_nm=ps, extra=extra, **kwargs)
        )
    return entries


# extra keys written by pipeline stages that hold file paths
_EXTRA_PATH_KEYS = {"pred_mask", "labels", "instances"}


def _rel(target: PathLike, base: Path) -> str:
    return Path(os.path.relpath(Path(target).resolve(), base.resolve())).as_posix()


def save_manifest(entries: Iterable[ManifestEntry], path: PathLike) -> None:
    """Write *entries* with paths relative to the manifest's directory."""
    p = Path(path)
    base = p.parent
    out = []
    for e in entries:
        item: dict[str, Any] = {
            "image": _rel(e.image, base),
            "mask": _rel(e.mask, base) if e.mask is not None else None,
            "probmap": _rel(e.probmap, base) if e.probmap is not None else None,
            "material": e.material,
            "pixel_size_nm": e.pixel_size_nm,
        }
        for key, value in e.extra.items():
            if key in _EXTRA_PATH_KEYS and value is not None:
                value = _rel(value, base)
            item[key] = value
        out.append(item)
    p.write_text(json.dumps(out, indent=1) + "\n")


def check_same_shape(name: str, *arrays: np.ndarray) -> None:
    shapes = {np.shape(a) for a in arrays}
    if len(shapes) > 1:
        raise ContractError(f"{name}: dimension mismatch {sorted(shapes)}")
