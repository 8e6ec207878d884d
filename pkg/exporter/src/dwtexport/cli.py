"""dwt-export: convert an upstream checkpoint to a DWT weight file."""

from __future__ import annotations

import argparse
import sys

from .export import ExportError, export


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dwt-export",
        description="Convert an upstream pretrained classifier state dict to DWT.",
    )
    parser.add_argument("--ckpt", required=True, help="upstream .pt state-dict checkpoint")
    parser.add_argument("--classes", type=int, required=True, help="output class count")
    parser.add_argument("--out", required=True, help="DWT file to write")
    parser.add_argument("--seed", type=int, default=0,
                        help="seed for head reinitialization (default 0)")
    parser.add_argument("--dtype", choices=["f32", "f16"], default="f32")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 0
    try:
        for line in export(args.ckpt, args.classes, args.out,
                           seed=args.seed, dtype=args.dtype):
            print(line)
    except ExportError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
