"""embed-export --vocab DIR --out FILE [--encoder NAME] [--dim D] [--batch B]"""

from __future__ import annotations

import argparse
import sys

from .core import (DEFAULT_ENCODER, EncoderUnavailable, ExportIntegrityError,
                   export_embeddings)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embed-export",
        description="Export entity-title embeddings in the `N d` / `id v1..vd` text format")
    parser.add_argument("--vocab", required=True, help="directory holding entity2id.txt")
    parser.add_argument("--out", required=True, help="output embedding file")
    parser.add_argument("--encoder", default=DEFAULT_ENCODER,
                        help=f"pretrained model name, or 'hashing' for the offline "
                             f"built-in (default: {DEFAULT_ENCODER})")
    parser.add_argument("--dim", type=int, default=None,
                        help="embedding width; required to differ from 768 only for 'hashing'")
    parser.add_argument("--batch", type=int, default=32, help="encoder batch size")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        matrix = export_embeddings(args.vocab, args.out, encoder=args.encoder,
                                   dim=args.dim, batch_size=args.batch)
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc}", file=sys.stderr)
        return 2
    except ExportIntegrityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except EncoderUnavailable as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    print(f"wrote {matrix.shape[0]} x {matrix.shape[1]} embeddings to {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
