"""
Synthetic HRTEM-like tiles with known ground truth.

Each tile is a Gaussian-noise background holding non-overlapping elliptical
particles filled with lattice fringes:

* zone-axis particles carry two perpendicular fringe sets (a column lattice);
* stacking-fault particles are zone-axis particles whose lattice is shifted
  by half a cell on one side of a line parallel to the first fringe set;
* misoriented particles show a single fringe set (planes, no columns);
* optional agglomerations are two touching zone-axis particles.

Everything is drawn from ``numpy.random.default_rng([seed, tile_index])``
so each tile is reproducible on its own.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .forest import CLASS_NAMES, ClassLabel
from .imgio import ManifestEntry, save_image, save_labels, save_manifest, save_mask


@dataclass
class SynthConfig:
    tile: int = 256
    min_particles: int = 4
    max_particles: int = 7
    semi_axis: tuple[float, float] = (21.0, 25.0)
    aspect: tuple[float, float] = (0.85, 1.0)
    period: tuple[float, float] = (7.5, 8.5)   # fringe period, pixels
    amplitude: float = 0.15                    # per fringe set
    contrast: float = -0.03                    # particle mean offset
    background: float = 0.5
    noise_sigma: float = 0.04
    gap: float = 10.0                          # minimum spacing between particles
    fault_offset: float = 0.1                  # fault line offset from centre, fraction of minor semi-axis
    edge_taper: float = 0.0                    # outer radius fraction where contrast fades out
    agglomeration_rate: float = 0.0
    pixel_size_nm: float = 0.05


@dataclass
class Particle:
    instance: int
    label: str
    center_row: float
    center_col: float
    semi_major: float
    semi_minor: float
    angle: float
    period: float
    lattice_angle: float
    fault: bool
    fault_offset: float


_ORIENTED_CLASSES = (ClassLabel.STACKING_FAULT, ClassLabel.NO_STACKING_FAULT, ClassLabel.MISORIENTED)


def _ellipse_rho2(yy, xx, cy, cx, a, b, angle):
    """Squared normalised elliptical radius; <= 1 inside the particle."""
    ca, sa = math.cos(angle), math.sin(angle)
    u = (xx - cx) * ca + (yy - cy) * sa
    v = -(xx - cx) * sa + (yy - cy) * ca
    return (u / a) ** 2 + (v / b) ** 2


def _envelope(rho2: np.ndarray, taper: float) -> np.ndarray:
    """Fringe contrast falling to zero over the outer *taper* fraction of the radius."""
    if taper <= 0:
        return np.ones_like(rho2)
    rho = np.sqrt(rho2)
    x = np.clip((rho - (1.0 - taper)) / taper, 0.0, 1.0)
    return 0.5 + 0.5 * np.cos(np.pi * x)


def _lattice(yy, xx, cy, cx, period, theta, phases, n_sets, fault_offset=None):
    """Fringe pattern (zero mean, unit amplitude per set) around (cy, cx)."""
    k = 2 * math.pi / period
    dy, dx = yy - cy, xx - cx
    n1 = (math.cos(theta), math.sin(theta))
    n2 = (-math.sin(theta), math.cos(theta))
    s1 = dx * n1[0] + dy * n1[1]
    s2 = dx * n2[0] + dy * n2[1]
    shift = 0.0
    if fault_offset is not None:
        # half-cell offset along n1 + n2 flips both fringe sets by pi
        shift = np.where(s1 > fault_offset, math.pi, 0.0)
    out = np.cos(k * s1 + phases[0] + shift)
    if n_sets == 2:
        out = out + np.cos(k * s2 + phases[1] + shift)
    return out


def _place(rng, cfg: SynthConfig, placed: list[tuple[float, float, float]], radius: float):
    lo = radius + 2
    hi = cfg.tile - radius - 2
    for _ in range(200):
        cy, cx = rng.uniform(lo, hi, size=2)
        if all(math.hypot(cy - py, cx - px) >= radius + pr + cfg.gap for py, px, pr in placed):
            return float(cy), float(cx)
    return None


def generate_tile(seed: int, index: int, cfg: SynthConfig | None = None):
    """
    One synthetic tile.

    Returns ``(image, mask, instances, particles)`` where *instances* labels
    each particle's pixels with its 1-based instance number.
    """
    cfg = cfg or SynthConfig()
    rng = np.random.default_rng([seed, index])
    n = cfg.tile
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    signal = np.zeros((n, n))
    instances = np.zeros((n, n), dtype=np.int64)
    placed: list[tuple[float, float, float]] = []
    particles: list[Particle] = []

    def add(cy, cx, a, b, angle, label, period, theta, fault):
        inst = len(particles) + 1
        rho2 = _ellipse_rho2(yy, xx, cy, cx, a, b, angle)
        inside = (rho2 <= 1.0) & (instances == 0)
        phases = rng.uniform(0, 2 * math.pi, size=2)
        n_sets = 1 if label == ClassLabel.MISORIENTED else 2
        offset = float(rng.uniform(-cfg.fault_offset, cfg.fault_offset) * b) if fault else None
        pattern = _lattice(yy, xx, cy, cx, period, theta, phases, n_sets, offset)
        env = _envelope(rho2[inside], cfg.edge_taper)
        signal[inside] = env * (cfg.contrast + cfg.amplitude * pattern[inside])
        instances[inside] = inst
        particles.append(
            Particle(inst, CLASS_NAMES[label], cy, cx, a, b, angle, period, theta, fault,
                     offset if offset is not None else 0.0)
        )

    count = int(rng.integers(cfg.min_particles, cfg.max_particles + 1))
    for _ in range(count):
        a = float(rng.uniform(*cfg.semi_axis))
        b = a * float(rng.uniform(*cfg.aspect))
        angle = float(rng.uniform(0, math.pi))
        period = float(rng.uniform(*cfg.period))
        theta = float(rng.uniform(0, math.pi))
        if rng.random() < cfg.agglomeration_rate:
            pos = _place(rng, cfg, placed, 2 * a)
            if pos is None:
                continue
            cy, cx = pos
            placed.append((cy, cx, 2 * a))
            # two touching particles whose union is one agglomerated blob
            dy, dx = 0.8 * a * math.sin(angle), 0.8 * a * math.cos(angle)
            for sgn in (-1, 1):
                add(cy + sgn * dy, cx + sgn * dx, a, a, 0.0, ClassLabel.AGGLOMERATION,
                    period, float(rng.uniform(0, math.pi)), False)
            continue
        pos = _place(rng, cfg, placed, a)
        if pos is None:
            continue
        placed.append((pos[0], pos[1], a))
        label = _ORIENTED_CLASSES[int(rng.integers(0, 3))]
        add(pos[0], pos[1], a, b, angle, label, period, theta, label == ClassLabel.STACKING_FAULT)

    noise = rng.normal(0.0, cfg.noise_sigma, size=(n, n))
    image = (cfg.background + signal + noise).astype(np.float32).astype(np.float64)
    return image, instances > 0, instances, particles


PARTICLE_FIELDS = ["source", *Particle.__dataclass_fields__.keys()]


def write_dataset(out_dir: str | Path, n_tiles: int, seed: int, cfg: SynthConfig | None = None) -> list[ManifestEntry]:
    """
    Write a synthetic dataset under *out_dir*.

    Layout: ``images/*.f32`` (+ JSON sidecars), ``masks/*.pgm``,
    ``instances/*.pgm`` (16-bit instance ids), ``particles.csv`` and
    ``manifest.json``.
    """
    cfg = cfg or SynthConfig()
    out = Path(out_dir)
    for sub in ("images", "masks", "instances"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    entries = []
    rows = []
    for i in range(n_tiles):
        name = f"synth_{i:04d}"
        image, mask, inst, particles = generate_tile(seed, i, cfg)
        img_path = out / "images" / f"{name}.f32"
        mask_path = out / "masks" / f"{name}.pgm"
        inst_path = out / "instances" / f"{name}.pgm"
        save_image(image, img_path, pixel_size_nm=cfg.pixel_size_nm)
        save_mask(mask, mask_path)
        save_labels(inst, inst_path)
        entries.append(
            ManifestEntry(
                image=img_path,
                mask=mask_path,
                material="synthetic",
                pixel_size_nm=cfg.pixel_size_nm,
                extra={"name": name, "source": name, "instances": str(inst_path)},
            )
        )
        for p in particles:
            rows.append({"source": name, **asdict(p)})
    with open(out / "particles.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=PARTICLE_FIELDS, lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    save_manifest(entries, out / "manifest.json")
    doc = {"seed": seed, "n_tiles": n_tiles, **asdict(cfg)}
    (out / "synth_config.json").write_text(json.dumps(doc, indent=1) + "\n")
    return entries
