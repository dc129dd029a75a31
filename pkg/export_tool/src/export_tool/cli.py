"""Command-line front end: cvge-export export --root DIR --backbone NAME ..."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .backbones import EXPORT_SIZES, FEATURE_SOURCES, REGISTRY
from .errors import ExportToolError
from .export import ExportJob, export_embeddings
from .scan import SPLITS, VIEWS


def _parse_views(value: str) -> tuple[str, ...]:
    views = tuple(part.strip() for part in value.split(",") if part.strip())
    return views


def cmd_export(args) -> int:
    job = ExportJob(
        root=Path(args.root),
        backbone=args.backbone,
        size=args.size,
        out_dir=Path(args.out),
        views=_parse_views(args.views),
        split=args.split,
        features=args.features,
        batch_size=args.batch_size,
    )
    paths = export_embeddings(job)
    for key in ("manifest", *job.views):
        print(f"{key}: {paths[key]}", file=sys.stderr)
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cvge-export",
        description="Export backbone embeddings for a view/location image tree",
    )
    parser.add_argument("--version", action="version", version=f"cvge-export {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export", help="scan a dataset tree and write CVGE files")
    p.set_defaults(func=cmd_export)
    p.add_argument("--root", required=True, help="dataset root directory")
    p.add_argument("--backbone", required=True, choices=sorted(REGISTRY))
    p.add_argument("--size", type=int, required=True, choices=EXPORT_SIZES)
    p.add_argument("--views", default=",".join(VIEWS), help="comma-separated view names")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--split", default="train", choices=SPLITS)
    p.add_argument(
        "--features",
        default="pretrained",
        choices=FEATURE_SOURCES,
        help="feature source; 'projection' is the deterministic no-weights stand-in",
    )
    p.add_argument("--batch-size", dest="batch_size", type=int, default=16)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ExportToolError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


def entrypoint() -> None:
    sys.exit(main(sys.argv[1:]))
