"""
Command line entry point: ``crystalseg <subcommand> [--config path] [--jobs N] [--seed S] ...``

Exit codes: 0 success, 1 usage error, 2 I/O error, 3 data-contract error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import pipeline
from .config import Config, load_config
from .errors import ContractError, ImageFormatError, ModelFormatError
from .forest import ClassLabel
from .segment import parse_radius
from .synth import SynthConfig, write_dataset

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_CONTRACT = 0, 1, 2, 3

log = logging.getLogger("crystalseg")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    try:
        return [parse_radius(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _morphology(text: str) -> list[list]:
    """``close:2,open:2`` -> ``[["close", 2], ["open", 2]]``; empty string disables clean-up."""
    steps = []
    for item in filter(None, (s.strip() for s in text.split(","))):
        op, _, radius = item.partition(":")
        if op not in ("close", "open") or not radius.isdigit():
            raise argparse.ArgumentTypeError(f"bad morphology step {item!r}; use op:radius")
        steps.append([op, int(radius)])
    return steps


def _classes(text: str) -> list[ClassLabel]:
    try:
        return [ClassLabel.parse(v.strip()) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _override(section, **values):
    """Copy of a config section with the non-None *values* applied."""
    return replace(section, **{k: v for k, v in values.items() if v is not None})


# ---------------------------------------------------------------------
# subcommand handlers
# ---------------------------------------------------------------------
def _synth(args, cfg: Config):
    sc = _override(SynthConfig(), tile=args.tile, agglomeration_rate=args.agglomeration_rate)
    if args.n_tiles < 0:
        raise UsageError("--n-tiles must be >= 0")
    write_dataset(args.out_dir, args.n_tiles, cfg.seed, sc)


def _preprocess(args, cfg: Config):
    pc = _override(cfg.preprocess, tile=args.tile, median_kernel=args.kernel, normalize_scope=args.scope)
    pipeline.cmd_preprocess(args.manifest, args.out_dir, pc.tile, pc.median_kernel, pc.normalize_scope, args.jobs)


def _segment(args, cfg: Config):
    sc = _override(
        cfg.segment,
        otsu_bins=args.bins,
        r_in=args.r_in,
        r_out=args.r_out,
        smooth_sigma=args.sigma,
        mode=args.mode,
        threshold=args.threshold,
        probmap_threshold=args.t,
    )
    if args.invert:
        sc = replace(sc, otsu_particle_above=False)
    optimize = None
    if args.optimize:
        if args.method != "fourier":
            raise UsageError("--optimize applies to the fourier method only")
        optimize = (args.r_in_grid, args.r_out_grid)
    pipeline.cmd_segment(args.manifest, args.out_dir, args.method, sc, optimize, args.jobs)


def _regions(args, cfg: Config):
    rc = _override(
        cfg.regions,
        morphology=args.morphology,
        min_area=args.min_area,
        max_area_fraction=args.max_area_fraction,
        margin=args.margin,
    )
    pipeline.cmd_regions(args.manifest, args.out_dir, rc, args.mask_key, args.jobs)


def _features(args, cfg: Config):
    fc = _override(cfg.features, pad_to=args.pad_to)
    if args.include_dc:
        fc = replace(fc, include_dc=True)
    if args.whole_crop:
        fc = replace(fc, masked_only=False)
    pipeline.cmd_features(args.manifest, args.regions, args.out_csv, fc, args.annotate, args.jobs)


def _split(args, cfg: Config):
    pipeline.cmd_split(args.features, args.train_csv, args.test_csv, args.test_fraction, cfg.seed)


def _rf_train(args, cfg: Config):
    fc = _override(cfg.forest, n_trees=args.n_trees, max_features=args.max_features, min_leaf=args.min_leaf)
    pipeline.cmd_rf_train(args.features, args.model, fc, cfg.seed, args.jobs)


def _rf_predict(args, cfg: Config):
    pipeline.cmd_rf_predict(args.model, args.features, args.out_csv)


def _evaluate(args, cfg: Config):
    if args.kind == "seg":
        rows = pipeline.evaluate_segmentation(args.manifest, args.out_dir, args.pred_key)
        for row in rows:
            print(f"{row[0]:<32} dice={pipeline.fmt(row[6])} precision={pipeline.fmt(row[7])} "
                  f"recall={pipeline.fmt(row[8])}")
    elif args.kind == "cls":
        res = pipeline.evaluate_classification(args.predictions, args.out_dir, args.classes)
        print(f"n={res['n']} balanced_accuracy={res['balanced_accuracy']:.4f} accuracy={res['accuracy']:.4f}")
    else:
        curve = pipeline.evaluate_pr_curve(args.manifest, args.out_dir, args.thresholds)
        for t, p, r in curve:
            print(f"t={t:g} precision={pipeline.fmt(p)} recall={pipeline.fmt(r)}")


def _stats(args, cfg: Config):
    pipeline.cmd_stats(args.regions, args.out_dir, args.predictions, args.bins)


# ---------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    # SUPPRESS lets the globals appear before or after the subcommand
    common.add_argument("--config", type=Path, default=argparse.SUPPRESS, help="JSON config file")
    common.add_argument("--jobs", type=int, default=argparse.SUPPRESS, help="worker processes (default 1)")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed (overrides config)")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    parser = _Parser(prog="crystalseg", description="Nanoparticle segmentation and defect classification.",
                     parents=[common])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, handler, help_):
        p = sub.add_parser(name, parents=[common], help=help_, description=help_)
        p.set_defaults(handler=handler)
        return p

    p = add("synth", _synth, "write a synthetic dataset with known masks and classes")
    p.add_argument("out_dir", type=Path)
    p.add_argument("--n-tiles", type=int, default=10)
    p.add_argument("--tile", type=int)
    p.add_argument("--agglomeration-rate", type=float)

    p = add("preprocess", _preprocess, "median filter, normalise and tile micrographs")
    p.add_argument("manifest", type=Path)
    p.add_argument("out_dir", type=Path)
    p.add_argument("--tile", type=int)
    p.add_argument("--kernel", type=int, help="median kernel size (odd)")
    p.add_argument("--scope", choices=("tile", "micrograph"), help="normalise per tile or per micrograph")

    p = add("segment", _segment, "segment tiles into particle masks")
    p.add_argument("manifest", type=Path)
    p.add_argument("out_dir", type=Path)
    p.add_argument("--method", choices=pipeline.METHODS, default="fourier")
    p.add_argument("--bins", type=int, help="otsu histogram bins")
    p.add_argument("--invert", action="store_true", help="otsu: particles are darker than background")
    p.add_argument("--r-in", type=parse_radius)
    p.add_argument("--r-out", type=parse_radius, help="number, or 'inf' for all higher frequencies")
    p.add_argument("--sigma", type=float, help="smoothing of the filtered magnitude")
    p.add_argument("--mode", choices=("keep", "suppress"))
    p.add_argument("--threshold", type=float, help="fraction of the maximum response")
    p.add_argument("--t", type=float, help="probability map threshold")
    p.add_argument("--optimize", action="store_true", help="grid-search the annulus against ground truth")
    p.add_argument("--r-in-grid", type=_floats, default=[16.0, 20.0, 24.0, 28.0])
    p.add_argument("--r-out-grid", type=_floats, default=[36.0, 40.0, 44.0, 48.0])

    p = add("regions", _regions, "clean masks and isolate particle regions")
    p.add_argument("manifest", type=Path)
    p.add_argument("out_dir", type=Path)
    p.add_argument("--mask-key", default="pred_mask", help="manifest key of the masks (pred_mask or mask)")
    p.add_argument("--morphology", type=_morphology, help="e.g. close:2,open:2")
    p.add_argument("--min-area", type=int)
    p.add_argument("--max-area-fraction", type=float)
    p.add_argument("--margin", type=int)

    p = add("features", _features, "compute the region feature table")
    p.add_argument("manifest", type=Path)
    p.add_argument("regions", type=Path)
    p.add_argument("out_csv", type=Path)
    p.add_argument("--pad-to", type=int)
    p.add_argument("--include-dc", action="store_true")
    p.add_argument("--whole-crop", action="store_true", help="real-space stats over the whole crop")
    p.add_argument("--annotate", type=Path, help="particle table giving instance classes")

    p = add("split", _split, "split a feature table by source micrograph")
    p.add_argument("features", type=Path)
    p.add_argument("train_csv", type=Path)
    p.add_argument("test_csv", type=Path)
    p.add_argument("--test-fraction", type=float, default=0.5)

    p = add("rf-train", _rf_train, "train the random forest")
    p.add_argument("features", type=Path)
    p.add_argument("model", type=Path)
    p.add_argument("--n-trees", type=int)
    p.add_argument("--max-features", type=int)
    p.add_argument("--min-leaf", type=int)

    p = add("rf-predict", _rf_predict, "classify regions with a trained forest")
    p.add_argument("model", type=Path)
    p.add_argument("features", type=Path)
    p.add_argument("out_csv", type=Path)

    p = add("evaluate", _evaluate, "score segmentation or classification")
    ev = p.add_subparsers(dest="kind", required=True, parser_class=_Parser)
    q = ev.add_parser("seg", parents=[common], help="per-image and pooled Dice/precision/recall")
    q.add_argument("manifest", type=Path)
    q.add_argument("out_dir", type=Path)
    q.add_argument("--pred-key", default="pred_mask")
    q = ev.add_parser("cls", parents=[common], help="confusion matrix and balanced accuracy")
    q.add_argument("predictions", type=Path)
    q.add_argument("out_dir", type=Path)
    q.add_argument("--classes", type=_classes, help="restrict to these true classes, e.g. 0,1,2")
    q = ev.add_parser("pr", parents=[common], help="precision-recall curve of probability maps")
    q.add_argument("manifest", type=Path)
    q.add_argument("out_dir", type=Path)
    q.add_argument("--thresholds", type=_floats, default=[i / 20 for i in range(21)])

    p = add("stats", _stats, "size/shape histograms and population fractions")
    p.add_argument("regions", type=Path)
    p.add_argument("out_dir", type=Path)
    p.add_argument("--predictions", type=Path)
    p.add_argument("--bins", type=int, default=20)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.jobs = getattr(args, "jobs", 1)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s: %(message)s",
    )
    try:
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        cfg = load_config(getattr(args, "config", None))
        if getattr(args, "seed", None) is not None:
            cfg.seed = args.seed
        args.handler(args, cfg)
    except ContractError as exc:
        print(f"crystalseg: contract error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except (OSError, ImageFormatError, ModelFormatError) as exc:
        print(f"crystalseg: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (UsageError, ValueError) as exc:
        print(f"crystalseg: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
