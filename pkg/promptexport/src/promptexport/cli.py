"""Command-line entry point: promptexport --prompts dump.ndjson --out cache.cemb"""

from __future__ import annotations

import argparse
import json
import sys

from .export import DEFAULT_MODEL, ExportError, ExporterConfig, export


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="promptexport",
        description="Encode a rendered-prompt dump with a frozen sentence "
                    "encoder and write a CEMB embedding cache",
    )
    parser.add_argument("--prompts", required=True,
                        help="NDJSON prompt dump from the primary pipeline")
    parser.add_argument("--out", required=True, help="output .cemb path")
    parser.add_argument("--model", default=DEFAULT_MODEL,
                        help="model id or local directory "
                             f"(default: {DEFAULT_MODEL})")
    parser.add_argument("--max-length", type=int, default=512,
                        help="token limit D; longer prompts are truncated")
    parser.add_argument("--batch-size", type=int, default=32)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = ExporterConfig(model=args.model, max_length=args.max_length,
                                batch_size=args.batch_size)
        summary = export(args.prompts, args.out, config)
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(summary, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
