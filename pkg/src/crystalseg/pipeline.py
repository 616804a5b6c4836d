"""
Batch stages of the two-step pipeline.

Each stage reads the files written by the previous one (a manifest, CSV
tables, mask/label images) and writes its own under an output directory.
Per-tile work can run in a process pool; results are gathered in input
order so outputs do not depend on the number of workers.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from . import imgio
from .config import FeaturesConfig, ForestConfig, RegionsConfig, SegmentConfig
from .errors import ContractError
from .features import FEATURE_NAMES, compute_features
from .forest import CLASS_NAMES, ClassLabel, ForestParams, load_model, predict_batch, save_model, train
from .imgio import ManifestEntry
from .metrics import (
    balanced_accuracy,
    confusion_matrix,
    dice,
    mask_counts,
    normalize_rows,
    pooled_scores,
    population_stats,
    pr_curve_counts,
    precision,
    recall,
    scores,
)
from .preprocess import median_filter, normalize
from .regions import (
    apply_morphology,
    connected_components,
    extract_regions,
    label_from_instances,
    region_from_crop,
    region_props,
)
from .segment import fourier_filter_segment, otsu_threshold, threshold_probmap

log = logging.getLogger(__name__)

METHODS = ("otsu", "fourier", "probmap")


def run_map(fn: Callable, items: Sequence, jobs: int = 1) -> list:
    """``map`` in input order, optionally across *jobs* processes."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def fmt(value: Any) -> str:
    """CSV cell text: shortest round-trip floats, 'undefined' for NaN."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return "undefined" if math.isnan(v) else repr(v)
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def read_csv(path: Path, required: Sequence[str] = ()) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in required if c not in header]
        if missing:
            raise ContractError(f"{path}: missing column(s) {', '.join(missing)}")
        return list(reader)


def _float(row: dict[str, str], key: str, path: Path) -> float:
    try:
        return float(row[key])
    except (TypeError, ValueError):
        raise ContractError(f"{path}: column {key} holds non-numeric value {row.get(key)!r}") from None


def _int(row: dict[str, str], key: str, path: Path) -> int:
    try:
        return int(row[key])
    except (TypeError, ValueError):
        raise ContractError(f"{path}: column {key} holds non-integer value {row.get(key)!r}") from None


# ---------------------------------------------------------------------
# preprocess
# ---------------------------------------------------------------------
def _preprocess_one(args) -> list[ManifestEntry]:
    entry, out, tile, kernel, scope = args
    image = median_filter(imgio.load_image(entry.image), kernel)
    if scope == "micrograph":
        image = normalize(image)
    companions: dict[str, tuple[np.ndarray, str]] = {}
    if entry.mask is not None:
        companions["mask"] = (imgio.load_mask(entry.mask), "masks")
    if entry.probmap is not None:
        companions["probmap"] = (imgio.load_probmap(entry.probmap), "probmaps")
    inst_path = entry.path("instances")
    if inst_path is not None:
        companions["instances"] = (imgio.load_labels(inst_path), "instances")
    for key, (arr, _) in companions.items():
        if arr.shape != image.shape:
            raise ContractError(f"{entry.image}: {key} is {arr.shape[::-1]}, image is {image.shape[::-1]}")

    cut = {key: imgio.slice_tiles(arr, tile) for key, (arr, _) in companions.items()}
    source = entry.extra.get("source", entry.name)
    results = []
    for k, (pix, i, j) in enumerate(imgio.slice_tiles(image, tile)):
        name = f"{entry.name}_r{i}_c{j}"
        if scope == "tile":
            pix = normalize(pix)
        img_path = out / "tiles" / f"{name}.f32"
        imgio.save_image(pix, img_path, pixel_size_nm=entry.pixel_size_nm)
        new = ManifestEntry(
            image=img_path,
            material=entry.material,
            pixel_size_nm=entry.pixel_size_nm,
            extra={"name": name, "source": source, "tile_row": i, "tile_col": j},
        )
        if "mask" in cut:
            new.mask = out / "masks" / f"{name}.pgm"
            imgio.save_mask(cut["mask"][k][0], new.mask)
        if "probmap" in cut:
            new.probmap = out / "probmaps" / f"{name}.f32"
            imgio.save_image(cut["probmap"][k][0], new.probmap)
        if "instances" in cut:
            path = out / "instances" / f"{name}.pgm"
            imgio.save_labels(cut["instances"][k][0], path)
            new.extra["instances"] = str(path)
        results.append(new)
    return results


def cmd_preprocess(
    manifest: Path, out_dir: Path, tile: int = 512, kernel: int = 3, scope: str = "tile", jobs: int = 1
) -> list[ManifestEntry]:
    """Median filter, normalise and tile every manifest image."""
    if scope not in ("tile", "micrograph"):
        raise ValueError("normalize scope must be 'tile' or 'micrograph'")
    entries = imgio.load_manifest(manifest)
    out = Path(out_dir)
    for sub in ("tiles", "masks", "probmaps", "instances"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    if not entries:
        log.warning("no entries in %s", manifest)
    tiled = run_map(_preprocess_one, [(e, out, tile, kernel, scope) for e in entries], jobs)
    result = [t for group in tiled for t in group]
    imgio.save_manifest(result, out / "manifest.json")
    log.info("preprocess: %d image(s) -> %d tile(s)", len(entries), len(result))
    return result


# ---------------------------------------------------------------------
# segment
# ---------------------------------------------------------------------
def segment_image(image: np.ndarray, method: str, cfg: SegmentConfig, prob: np.ndarray | None = None) -> np.ndarray:
    if method == "otsu":
        if image.min() < 0 or image.max() > 1:
            raise ContractError("otsu needs tiles normalised to [0, 1]; run preprocess first")
        return otsu_threshold(image, cfg.otsu_bins, cfg.otsu_particle_above)[1]
    if method == "fourier":
        return fourier_filter_segment(image, cfg.r_in, cfg.r_out, cfg.smooth_sigma, cfg.mode, cfg.threshold)
    if method == "probmap":
        if prob is None:
            raise ContractError("probmap method needs a probability map")
        if prob.shape != image.shape:
            raise ContractError(f"probability map {prob.shape} and image {image.shape} differ in size")
        return threshold_probmap(prob, cfg.probmap_threshold)
    raise ValueError(f"unknown segmentation method {method!r}")


def _segment_one(args) -> ManifestEntry:
    entry, out, method, cfg = args
    image = imgio.load_image(entry.image)
    prob = imgio.load_probmap(entry.probmap) if method == "probmap" else None
    mask = segment_image(image, method, cfg, prob)
    path = out / "masks" / f"{entry.name}.pgm"
    imgio.save_mask(mask, path)
    return replace(entry, extra={**entry.extra, "pred_mask": str(path)})


def _annulus_scores(args) -> list[float]:
    entry, pairs, cfg = args
    image = imgio.load_image(entry.image)
    truth = imgio.load_mask(entry.mask)
    out = []
    for r_in, r_out in pairs:
        m = fourier_filter_segment(image, r_in, r_out, cfg.smooth_sigma, cfg.mode, cfg.threshold)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            out.append(dice(mask_counts(m, truth)))
    return out


def optimize_annulus(
    entries: Sequence[ManifestEntry],
    r_in_grid: Sequence[float],
    r_out_grid: Sequence[float],
    cfg: SegmentConfig,
    jobs: int = 1,
) -> tuple[tuple[float, float], list[tuple[float, float, float]]]:
    """
    Grid search of annulus radii maximising mean Dice against ground truth.

    Pairs with ``r_out <= r_in`` are skipped. Ties keep the first pair in
    grid order (``r_in`` outer loop, ``r_out`` inner loop).
    """
    scored = [e for e in entries if e.mask is not None]
    if not scored:
        raise ContractError("annulus optimisation needs ground-truth masks in the manifest")
    pairs = [(a, b) for a in r_in_grid for b in r_out_grid if b > a]
    if not pairs:
        raise ValueError("annulus grid has no pair with r_out > r_in")
    per_image = run_map(_annulus_scores, [(e, pairs, cfg) for e in scored], jobs)
    table = []
    best = None
    for k, (a, b) in enumerate(pairs):
        mean = float(np.mean([s[k] for s in per_image]))
        table.append((a, b, mean))
        if best is None or mean > best[2]:
            best = (a, b, mean)
    return (best[0], best[1]), table


def cmd_segment(
    manifest: Path,
    out_dir: Path,
    method: str,
    cfg: SegmentConfig,
    optimize: tuple[Sequence[float], Sequence[float]] | None = None,
    jobs: int = 1,
) -> list[ManifestEntry]:
    entries = imgio.load_manifest(manifest)
    out = Path(out_dir)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    if method not in METHODS:
        raise ValueError(f"unknown segmentation method {method!r}")
    if method == "probmap":
        missing = [e.name for e in entries if e.probmap is None]
        if missing:
            raise ContractError(f"probmap method but no probability map for: {', '.join(missing[:5])}")
    if optimize is not None and method == "fourier":
        (r_in, r_out), table = optimize_annulus(entries, optimize[0], optimize[1], cfg, jobs)
        write_csv(out / "annulus_search.csv", ["r_in", "r_out", "mean_dice"], table)
        log.info("annulus search: best r_in=%g r_out=%g", r_in, r_out)
        cfg = replace(cfg, r_in=r_in, r_out=r_out)
    result = run_map(_segment_one, [(e, out, method, cfg) for e in entries], jobs)
    imgio.save_manifest(result, out / "manifest.json")
    (out / "segment_params.json").write_text(json.dumps({"method": method, **asdict(cfg)}, indent=1) + "\n")
    return result


# ---------------------------------------------------------------------
# regions
# ---------------------------------------------------------------------
REGION_COLUMNS = [
    "id", "tile", "source", "component",
    "bbox_r0", "bbox_c0", "bbox_r1", "bbox_c1",
    "crop_r0", "crop_c0", "crop_r1", "crop_c1",
    "area_px", "area_nm2", "equivalent_diameter", "eccentricity",
    "major_axis", "minor_axis", "centroid_row", "centroid_col",
]


def _regions_one(args):
    entry, out, cfg, mask_key = args
    mask_path = entry.path(mask_key)
    if mask_path is None:
        raise ContractError(f"{entry.name}: manifest entry has no '{mask_key}'")
    mask = imgio.load_mask(mask_path)
    image = imgio.load_image(entry.image)
    cleaned = apply_morphology(mask, cfg.morphology)
    labels, _ = connected_components(cleaned)
    max_area = max(cfg.min_area, int(cfg.max_area_fraction * labels.size))
    regions, report = extract_regions(labels, image, cfg.min_area, max_area, cfg.margin, entry.name)
    path = out / "labels" / f"{entry.name}.pgm"
    imgio.save_labels(labels, path)
    rows = []
    for r in regions:
        p = region_props(r, entry.pixel_size_nm)
        r0, c0 = r.crop_origin
        h, w = r.mask_crop.shape
        rows.append([
            entry.name, entry.extra.get("source", entry.name), r.id,
            *r.bbox, r0, c0, r0 + h, c0 + w,
            p.area_px, p.area_nm2, p.equivalent_diameter, p.eccentricity,
            p.major_axis, p.minor_axis, p.centroid[0], p.centroid[1],
        ])
    new = replace(entry, extra={**entry.extra, "labels": str(path)})
    return new, rows, (entry.name, report.kept, report.too_small, report.too_large)


def cmd_regions(manifest: Path, out_dir: Path, cfg: RegionsConfig, mask_key: str = "pred_mask", jobs: int = 1):
    """Clean masks, label components and tabulate the surviving regions."""
    entries = imgio.load_manifest(manifest)
    out = Path(out_dir)
    (out / "labels").mkdir(parents=True, exist_ok=True)
    results = run_map(_regions_one, [(e, out, cfg, mask_key) for e in entries], jobs)
    rows = []
    for _, tile_rows, _ in results:
        for row in tile_rows:
            rows.append([len(rows) + 1, *row])
    write_csv(out / "regions.csv", REGION_COLUMNS, rows)
    write_csv(out / "regions_summary.csv", ["tile", "kept", "too_small", "too_large"], [r[2] for r in results])
    imgio.save_manifest([r[0] for r in results], out / "manifest.json")
    dropped = sum(r[2][2] + r[2][3] for r in results)
    log.info("regions: kept %d, discarded %d", len(rows), dropped)
    return rows


# ---------------------------------------------------------------------
# features
# ---------------------------------------------------------------------
FEATURE_COLUMNS = ["id", "tile", "source", "pad_to", "include_dc", "masked_only", *FEATURE_NAMES]


def read_instance_classes(path: Path) -> dict[tuple[str, int], ClassLabel]:
    """``(source, instance) -> class`` from a particle table such as ``particles.csv``."""
    rows = read_csv(path, ["source", "instance", "label"])
    return {(r["source"], _int(r, "instance", path)): ClassLabel.parse(r["label"]) for r in rows}


def _features_one(args):
    entry, rows, cfg, classes, regions_path = args
    labels_path = entry.path("labels")
    if labels_path is None:
        raise ContractError(f"{entry.name}: manifest entry has no 'labels'; run the regions stage")
    labels = imgio.load_labels(labels_path)
    image = imgio.load_image(entry.image)
    instances = None
    source = entry.extra.get("source", entry.name)
    if classes is not None:
        inst_path = entry.path("instances")
        if inst_path is None:
            raise ContractError(f"{entry.name}: annotation requested but entry has no 'instances'")
        instances = imgio.load_labels(inst_path)
    out = []
    for row in rows:
        crop = tuple(_int(row, k, regions_path) for k in ("crop_r0", "crop_c0", "crop_r1", "crop_c1"))
        region = region_from_crop(labels, image, _int(row, "component", regions_path), crop,
                                  _int(row, "id", regions_path), entry.name)
        fv = compute_features(region, cfg.pad_to, cfg.include_dc, cfg.masked_only)
        line = [region.id, entry.name, source, cfg.pad_to, cfg.include_dc, cfg.masked_only, *fv.as_array()]
        if instances is not None:
            inst_crop = instances[crop[0]:crop[2], crop[1]:crop[3]]
            lookup = {k[1]: v for k, v in classes.items() if k[0] == source}
            line.append(CLASS_NAMES[label_from_instances(region, inst_crop, lookup)])
        out.append(line)
    return out


def cmd_features(
    manifest: Path, regions_csv: Path, out_csv: Path, cfg: FeaturesConfig,
    annotate: Path | None = None, jobs: int = 1,
):
    """Feature table for every region; with *annotate*, add a ground-truth label column."""
    entries = {e.name: e for e in imgio.load_manifest(manifest)}
    rows = read_csv(regions_csv, ["id", "tile", "component", "crop_r0", "crop_c0", "crop_r1", "crop_c1"])
    classes = read_instance_classes(annotate) if annotate is not None else None
    by_tile: dict[str, list[dict[str, str]]] = {}
    for r in rows:
        if r["tile"] not in entries:
            raise ContractError(f"{regions_csv}: tile {r['tile']!r} not in manifest")
        by_tile.setdefault(r["tile"], []).append(r)
    tasks = [(entries[t], rs, cfg, classes, regions_csv) for t, rs in by_tile.items()]
    table = [line for group in run_map(_features_one, tasks, jobs) for line in group]
    table.sort(key=lambda line: line[0])
    header = FEATURE_COLUMNS + (["label"] if classes is not None else [])
    write_csv(Path(out_csv), header, table)
    return table


# ---------------------------------------------------------------------
# split / train / predict
# ---------------------------------------------------------------------
def cmd_split(features_csv: Path, train_csv: Path, test_csv: Path, test_fraction: float = 0.5, seed: int = 0):
    """Split a feature table by source micrograph so no micrograph lands on both sides."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test fraction must lie in (0, 1)")
    with open(features_csv, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or "source" not in header:
            raise ContractError(f"{features_csv}: missing column source")
        body = list(reader)
    col = header.index("source")
    sources = sorted({row[col] for row in body})
    order = np.random.default_rng(seed).permutation(len(sources))
    n_test = int(round(test_fraction * len(sources)))
    test_sources = {sources[i] for i in order[:n_test]}
    for path, keep in ((train_csv, False), (test_csv, True)):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(r for r in body if (r[col] in test_sources) == keep)


def _feature_contract(rows: list[dict[str, str]], path: Path) -> dict[str, Any]:
    keys = ("pad_to", "include_dc", "masked_only")
    seen = {tuple(r[k] for k in keys) for r in rows}
    if len(seen) > 1:
        raise ContractError(f"{path}: rows were computed with different feature settings {sorted(seen)}")
    pad, dc, masked = next(iter(seen))
    return {"pad_to": int(pad), "include_dc": dc == "1", "masked_only": masked == "1"}


def _feature_matrix(rows: list[dict[str, str]], path: Path) -> np.ndarray:
    return np.array([[_float(r, f, path) for f in FEATURE_NAMES] for r in rows], dtype=np.float64)


def cmd_rf_train(features_csv: Path, model_path: Path, cfg: ForestConfig, seed: int = 0, jobs: int = 1):
    rows = read_csv(features_csv, FEATURE_COLUMNS + ["label"])
    if not rows:
        raise ContractError(f"{features_csv}: no training rows")
    contract = _feature_contract(rows, features_csv)
    X = _feature_matrix(rows, features_csv)
    y = [ClassLabel.parse(r["label"]) for r in rows]
    params = ForestParams(cfg.n_trees, cfg.max_features, cfg.min_leaf, cfg.class_weight)
    model = train(
        X, y, params, seed,
        pad_to=contract["pad_to"],
        feature_config={"include_dc": contract["include_dc"], "masked_only": contract["masked_only"]},
        jobs=jobs,
    )
    save_model(model, model_path)
    log.info("rf-train: %d samples, %d trees", len(rows), model.n_trees)
    return model


PREDICTION_COLUMNS = ["id", "tile", "source", "predicted", *[f"votes_{c}" for c in CLASS_NAMES]]


def cmd_rf_predict(model_path: Path, features_csv: Path, out_csv: Path):
    model = load_model(model_path)
    rows = read_csv(features_csv, FEATURE_COLUMNS)
    has_truth = bool(rows) and "label" in rows[0]
    header = PREDICTION_COLUMNS + (["label"] if has_truth else [])
    if not rows:
        write_csv(Path(out_csv), header, [])
        return []
    contract = _feature_contract(rows, features_csv)
    expected = {"pad_to": model.pad_to, **{k: model.feature_config.get(k) for k in ("include_dc", "masked_only")}}
    if contract != expected:
        raise ContractError(f"feature contract mismatch: features {contract}, model {expected}")
    labels, votes = predict_batch(model, _feature_matrix(rows, features_csv))
    table = []
    for r, lab, v in zip(rows, labels, votes):
        line = [r["id"], r["tile"], r["source"], CLASS_NAMES[int(lab)], *v.tolist()]
        if has_truth:
            line.append(r["label"])
        table.append(line)
    write_csv(Path(out_csv), header, table)
    return table


# ---------------------------------------------------------------------
# evaluate / stats
# ---------------------------------------------------------------------
SEG_COLUMNS = ["image", "material", "tp", "fp", "fn", "tn", "dice", "precision", "recall"]


def evaluate_segmentation(manifest: Path, out_dir: Path, pred_key: str = "pred_mask") -> list[list[Any]]:
    """Per-image scores plus pooled (micro) and averaged (macro) rows, overall and per material."""
    entries = imgio.load_manifest(manifest)
    rows = []
    per: list[tuple[str, Any]] = []
    for e in entries:
        pred_path = e.path(pred_key)
        if pred_path is None or e.mask is None:
            raise ContractError(f"{e.name}: needs both '{pred_key}' and 'mask' to evaluate")
        c = mask_counts(imgio.load_mask(pred_path), imgio.load_mask(e.mask))
        s = scores(c)
        rows.append([e.name, e.material or "", c.tp, c.fp, c.fn, c.tn, s.dice, s.precision, s.recall])
        per.append((e.material or "", c))
    if per:
        groups = {"ALL": [c for _, c in per]}
        for mat in sorted({m for m, _ in per if m}):
            groups[mat] = [c for m, c in per if m == mat]
        for name, counts in groups.items():
            micro, macro = pooled_scores(counts)
            total = counts[0]
            for c in counts[1:]:
                total = total + c
            rows.append([f"{name}:micro", name, total.tp, total.fp, total.fn, total.tn,
                         micro.dice, micro.precision, micro.recall])
            rows.append([f"{name}:macro", name, "", "", "", "", macro.dice, macro.precision, macro.recall])
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "segmentation_metrics.csv", SEG_COLUMNS, rows)
    return rows


def evaluate_pr_curve(manifest: Path, out_dir: Path, thresholds: Sequence[float]) -> list[tuple[float, float, float]]:
    entries = [e for e in imgio.load_manifest(manifest)]
    usable = [e for e in entries if e.probmap is not None and e.mask is not None]
    if not usable:
        raise ContractError("PR curve needs entries with both 'probmap' and 'mask'")
    probs = [imgio.load_probmap(e.probmap) for e in usable]
    truths = [imgio.load_mask(e.mask) for e in usable]
    for e, p, t in zip(usable, probs, truths):
        if p.shape != t.shape:
            raise ContractError(f"{e.name}: probability map and mask differ in size")
    counts = pr_curve_counts(probs, truths, thresholds)
    curve = [(float(t), precision(c), recall(c)) for t, c in zip(thresholds, counts)]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "pr_curve.csv", ["threshold", "precision", "recall"], curve)
    return curve


def evaluate_classification(predictions: Path, out_dir: Path, classes: Sequence[ClassLabel] | None = None) -> dict[str, Any]:
    """Confusion matrix (rows true, columns predicted) and class-balanced accuracy."""
    rows = read_csv(predictions, ["predicted", "label"])
    pairs = [(ClassLabel.parse(r["label"]), ClassLabel.parse(r["predicted"])) for r in rows]
    if classes is not None:
        keep = set(classes)
        pairs = [p for p in pairs if p[0] in keep]
    if not pairs:
        raise ContractError(f"{predictions}: no labelled predictions to evaluate")
    cm = confusion_matrix(pairs)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "confusion_matrix.csv", ["true\\predicted", *CLASS_NAMES],
              [[CLASS_NAMES[i], *cm[i].tolist()] for i in range(len(CLASS_NAMES))])
    norm = normalize_rows(cm)
    write_csv(out / "confusion_matrix_normalized.csv", ["true\\predicted", *CLASS_NAMES],
              [[CLASS_NAMES[i], *norm[i].tolist()] for i in range(len(CLASS_NAMES))])
    bacc = balanced_accuracy(cm)
    truth_pop = population_stats([t for t, _ in pairs])
    pred_pop = population_stats([p for _, p in pairs])
    summary = {
        "n": len(pairs),
        "balanced_accuracy": bacc,
        "accuracy": float(np.trace(cm) / cm.sum()),
        "predicted_fraction_oriented": pred_pop["fraction_oriented"],
        "predicted_fraction_faulted_of_oriented": pred_pop["fraction_faulted_of_oriented"],
        "true_fraction_oriented": truth_pop["fraction_oriented"],
        "true_fraction_faulted_of_oriented": truth_pop["fraction_faulted_of_oriented"],
    }
    write_csv(out / "classification_metrics.csv", ["metric", "value"], summary.items())
    return {"confusion_matrix": cm, **summary}


def cmd_stats(regions_csv: Path, out_dir: Path, predictions: Path | None = None, bins: int = 20) -> dict[str, Any]:
    """Size/shape histograms of regions and, with predictions, population fractions."""
    rows = read_csv(regions_csv, ["id", "area_px", "equivalent_diameter", "eccentricity", "area_nm2"])
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    diam = np.array([_float(r, "equivalent_diameter", regions_csv) for r in rows])
    ecc = np.array([_float(r, "eccentricity", regions_csv) for r in rows])
    area = np.array([_float(r, "area_px", regions_csv) for r in rows])
    summary: dict[str, Any] = {"n_regions": len(rows)}
    if rows:
        nm = [r["area_nm2"] for r in rows]
        if all(nm):
            # diameter from nm^2 area keeps the histogram in physical units
            diam = np.sqrt(4.0 * np.array([float(v) for v in nm]) / math.pi)
            summary["diameter_unit"] = "nm"
        else:
            summary["diameter_unit"] = "px"
        counts, edges = np.histogram(diam, bins=bins)
        write_csv(out / "size_histogram.csv", ["bin_lo", "bin_hi", "count"],
                  zip(edges[:-1].tolist(), edges[1:].tolist(), counts.tolist()))
        counts, edges = np.histogram(ecc, bins=bins, range=(0.0, 1.0))
        write_csv(out / "eccentricity_histogram.csv", ["bin_lo", "bin_hi", "count"],
                  zip(edges[:-1].tolist(), edges[1:].tolist(), counts.tolist()))
        for name, arr in (("equivalent_diameter", diam), ("area_px", area), ("eccentricity", ecc)):
            summary[f"{name}_mean"] = float(arr.mean())
            summary[f"{name}_std"] = float(arr.std())
            summary[f"{name}_median"] = float(np.median(arr))
    if predictions is not None:
        preds = read_csv(predictions, ["predicted"])
        if preds:
            summary.update(population_stats([ClassLabel.parse(r["predicted"]) for r in preds]))
            summary["class_counts"] = {
                name: sum(1 for r in preds if ClassLabel.parse(r["predicted"]) == k)
                for k, name in enumerate(CLASS_NAMES)
            }
    clean = {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in summary.items()}
    (out / "stats.json").write_text(json.dumps(clean, indent=1) + "\n")
    return summary
