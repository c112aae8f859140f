"""Command-line front end: extract, index, query, and eval subcommands.

Conventions enforced here rather than in the library:

* exit codes: 0 success, 2 input format, 3 configuration, 4 labeling,
  5 dimension/usage -- a stable contract for scripting
* progress and diagnostics go to stderr; machine-readable output goes to
  files or stdout only
* output files are written to a temporary sibling and renamed into place,
  so a failed run never leaves a partial file behind
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Sequence

from . import desc_io, feature_io
from .descriptors import DEFAULT_SCALES
from .errors import (
    CbirError,
    DimensionMismatch,
    FormatError,
    KOutOfRange,
    MissingResult,
    MissingTruth,
)
from .evaluation import parse_ground_truth, run_experiment
from .fusion import FusionConfig, describe_image
from .index import (
    IndexEntry,
    RepresentativeMode,
    build_index,
    load_index_file,
    query_classes,
    refine,
    save_index,
)

EXIT_OK = 0
EXIT_FORMAT = 2
EXIT_CONFIG = 3
EXIT_LABELING = 4
EXIT_USAGE = 5


class CliFailure(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems map to the 5-family
        self.print_usage(sys.stderr)
        raise CliFailure(EXIT_USAGE, f"{self.prog}: {message}")


def _info(message: str) -> None:
    print(message, file=sys.stderr)


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

def _load_cli_config(args) -> dict:
    """Merge the optional JSON config file with flags; flags win."""
    config: dict = {}
    if getattr(args, "config", None):
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                config = json.load(fh)
        except OSError as exc:
            raise CliFailure(EXIT_CONFIG, f"config file {args.config}: {exc}")
        except json.JSONDecodeError as exc:
            raise CliFailure(EXIT_CONFIG, f"config file {args.config} is not valid JSON: {exc}")
        if not isinstance(config, dict):
            raise CliFailure(EXIT_CONFIG, f"config file {args.config} must hold a JSON object")
    if getattr(args, "scales", None):
        config["scales"] = args.scales
    if getattr(args, "mode", None):
        config["representative_mode"] = args.mode
    return config


def _fusion_from_config(config: dict) -> tuple[FusionConfig, tuple[int, ...]]:
    try:
        fusion = FusionConfig.from_dict(config.get("fusion", {}))
        scales = tuple(int(s) for s in config.get("scales", DEFAULT_SCALES))
        if not scales or any(s < 1 for s in scales):
            raise ValueError(f"scales must be integers >= 1, got {list(scales)}")
    except (ValueError, KeyError, TypeError) as exc:
        raise CliFailure(EXIT_CONFIG, f"invalid configuration: {exc}")
    return fusion, scales


def _int_list(text: str) -> list[int]:
    try:
        values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated integer list: {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("empty integer list")
    return values


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _read_fmap_file(path: Path) -> feature_io.FeatureMapSet:
    try:
        return feature_io.read_feature_map_file(path)
    except FormatError as exc:
        raise CliFailure(EXIT_FORMAT, f"{path}: {exc}")
    except OSError as exc:
        raise CliFailure(EXIT_FORMAT, f"{path}: {exc}")


def _fmap_dir_files(directory: str) -> list[Path]:
    root = Path(directory)
    if not root.is_dir():
        raise CliFailure(EXIT_FORMAT, f"{directory}: not a directory")
    files = sorted(p for p in root.iterdir() if p.is_file() and p.suffix == ".fmap")
    if not files:
        raise CliFailure(EXIT_FORMAT, f"{directory}: no .fmap files found")
    return files


def cmd_extract(args) -> int:
    config = _load_cli_config(args)
    fusion, scales = _fusion_from_config(config)
    files = _fmap_dir_files(args.fmaps)

    def one(path: Path):
        fmap_set = _read_fmap_file(path)
        try:
            descriptor = describe_image(fmap_set, fusion, default_scales=scales)
        except CbirError as exc:
            raise CliFailure(EXIT_CONFIG, f"{path}: {exc}")
        _info(f"extracted {fmap_set.image_id} (dim {descriptor.dim})")
        return fmap_set.image_id, descriptor

    jobs = max(1, args.jobs)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(one, files))
    else:
        records = [one(path) for path in files]
    records.sort(key=lambda r: r[0])

    _atomic_write(Path(args.out), desc_io.write_descriptor_records(records))
    _info(f"wrote {len(records)} descriptor records to {args.out}")
    return EXIT_OK


def cmd_index(args) -> int:
    try:
        with open(args.desc, "rb") as fh:
            dim, records = desc_io.read_descriptor_records(fh.read())
    except FormatError as exc:
        raise CliFailure(EXIT_FORMAT, f"{args.desc}: {exc}")
    except OSError as exc:
        raise CliFailure(EXIT_FORMAT, f"{args.desc}: {exc}")

    try:
        with open(args.labels, "r", encoding="utf-8") as fh:
            labels = parse_ground_truth(fh.read())
    except OSError as exc:
        raise CliFailure(EXIT_FORMAT, f"{args.labels}: {exc}")
    except ValueError as exc:
        raise CliFailure(EXIT_FORMAT, f"{args.labels}: {exc}")

    unlabeled = sorted(image_id for image_id, _ in records if image_id not in labels)
    if unlabeled:
        raise CliFailure(EXIT_LABELING,
                         f"{len(unlabeled)} descriptor(s) without labels: {unlabeled[:5]}")

    entries = [IndexEntry(image_id, labels[image_id], descriptor)
               for image_id, descriptor in records]
    index = build_index(entries, RepresentativeMode.parse(args.mode))
    _atomic_write(Path(args.out), save_index(index))
    _info(f"indexed {len(entries)} images, {len(index.representatives)} classes, dim {dim}")
    return EXIT_OK


def cmd_query(args) -> int:
    config = _load_cli_config(args)
    fusion, scales = _fusion_from_config(config)
    try:
        index = load_index_file(args.index)
    except FormatError as exc:
        raise CliFailure(EXIT_FORMAT, f"{args.index}: {exc}")
    except OSError as exc:
        raise CliFailure(EXIT_FORMAT, f"{args.index}: {exc}")

    fmap_set = _read_fmap_file(Path(args.fmap))
    try:
        descriptor = describe_image(fmap_set, fusion, default_scales=scales)
    except CbirError as exc:
        raise CliFailure(EXIT_CONFIG, f"{args.fmap}: {exc}")

    # an explicit --k is enforced strictly; the default adapts to small indexes
    k = args.k if args.k is not None else min(5, len(index.representatives))
    try:
        class_result = query_classes(index, descriptor, k)
        lines = [{"id": cid, "distance": dist, "stage": "CLASS"}
                 for cid, dist in class_result.ranked]
        if args.refine is not None:
            m = args.refine if args.refine > 0 else int(config.get("refine_candidates", 5))
            m = min(m, len(index.representatives))
            candidates = [cid for cid, _ in query_classes(index, descriptor, m).ranked]
            pool_size = sum(len(index.entries_of(c)) for c in candidates)
            image_result = refine(index, descriptor, candidates, min(k, pool_size))
            lines += [{"id": image_id, "distance": dist, "stage": "IMAGE"}
                      for image_id, dist in image_result.ranked]
    except (DimensionMismatch, KOutOfRange) as exc:
        raise CliFailure(EXIT_USAGE, str(exc))

    for line in lines:
        print(json.dumps(line, sort_keys=True))
    return EXIT_OK


def cmd_eval(args) -> int:
    config = _load_cli_config(args)
    fusion, scales = _fusion_from_config(config)
    mode = RepresentativeMode.parse(config.get("representative_mode", "mean"))

    index_sets = [_read_fmap_file(p) for p in _fmap_dir_files(args.index_fmaps)]
    query_sets = [_read_fmap_file(p) for p in _fmap_dir_files(args.query_fmaps)]
    try:
        with open(args.truth, "r", encoding="utf-8") as fh:
            truth = parse_ground_truth(fh.read())
    except OSError as exc:
        raise CliFailure(EXIT_FORMAT, f"{args.truth}: {exc}")
    except ValueError as exc:
        raise CliFailure(EXIT_FORMAT, f"{args.truth}: {exc}")

    index_labels = None
    if args.index_labels:
        try:
            with open(args.index_labels, "r", encoding="utf-8") as fh:
                index_labels = parse_ground_truth(fh.read())
        except (OSError, ValueError) as exc:
            raise CliFailure(EXIT_FORMAT, f"{args.index_labels}: {exc}")

    _info("metric: retrieval recall@k over a held-out query split "
          "(not a trained classifier's accuracy)")
    try:
        report = run_experiment(index_sets, query_sets, truth, fusion, scales,
                                args.ks, index_labels=index_labels, mode=mode)
    except (MissingTruth, MissingResult) as exc:
        raise CliFailure(EXIT_LABELING, str(exc))
    except DimensionMismatch as exc:
        raise CliFailure(EXIT_USAGE, str(exc))

    _atomic_write(Path(args.out), report.to_json().encode("utf-8"))
    _info(f"evaluated {report.n_queries} queries; recall@1 = {report.top1_accuracy:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cbirkit",
                     description="Pooled global descriptors and L2 retrieval over FMAP dumps.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("extract", help="compute combined descriptors for a directory of FMAP files")
    p.add_argument("--fmaps", required=True, help="directory of .fmap files")
    p.add_argument("--config", help="JSON config file (fusion, scales)")
    p.add_argument("--scales", type=_int_list, help="comma-separated scale list, e.g. 1,2,3")
    p.add_argument("--out", required=True, help="output DESC file")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers (default 1)")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("index", help="build a class-representative index from descriptors")
    p.add_argument("--desc", required=True, help="DESC file from extract")
    p.add_argument("--labels", required=True, help="image_id<TAB>class_id lines")
    p.add_argument("--mode", choices=["mean", "exemplar"], default="mean")
    p.add_argument("--out", required=True, help="output INDX file")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("query", help="rank classes (and optionally images) for one query image")
    p.add_argument("--index", required=True, help="INDX file")
    p.add_argument("--fmap", required=True, help="query FMAP file")
    p.add_argument("--config", help="JSON config file (must match the index's)")
    p.add_argument("--scales", type=_int_list)
    p.add_argument("--k", type=int, default=None,
                   help="results per stage (default: min(5, classes))")
    p.add_argument("--refine", type=int, nargs="?", const=0, default=None, metavar="M",
                   help="re-rank images inside the top M classes (default M from config, else 5)")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("eval", help="run an end-to-end retrieval experiment and write a report")
    p.add_argument("--index-fmaps", required=True, dest="index_fmaps")
    p.add_argument("--query-fmaps", required=True, dest="query_fmaps")
    p.add_argument("--truth", required=True, help="query labels, image_id<TAB>class_id")
    p.add_argument("--index-labels", dest="index_labels",
                   help="index-split labels (defaults to --truth)")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--scales", type=_int_list)
    p.add_argument("--mode", choices=["mean", "exemplar"])
    p.add_argument("--ks", type=_int_list, default=[1, 2, 4, 8],
                   help="comma-separated k values (default 1,2,4,8)")
    p.add_argument("--out", required=True, help="output JSON report")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except CliFailure as exc:
        _info(f"error: {exc}")
        return exc.code
    except FormatError as exc:
        _info(f"error: {exc}")
        return EXIT_FORMAT
    except CbirError as exc:
        _info(f"error: {exc}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
