"""Command-line front end for checkpoint extraction.

Example (writes one MOER file per revision plus series.manifest):

    moe-trace-extract allenai/OLMoE-1B-7B-0924 --out traces/ \\
        --revision step5000-tokens21B --revision main --tokens-per-text 673
"""

from __future__ import annotations

import argparse
import sys
import tempfile
from pathlib import Path

from .corpus import DEFAULT_TEXTS
from .extract import ExtractionJob, UnsupportedModelError, extract


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="moe-trace-extract",
        description="Extract per-token router gate logits from MoE checkpoints "
                    "into MOER trace files")
    parser.add_argument("model", help="hub model identifier, e.g. allenai/OLMoE-1B-7B-0924")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--revision", action="append", default=[],
                        help="checkpoint revision tag; repeat for a series "
                             "(default: the main revision)")
    parser.add_argument("--texts", default=None,
                        help="text file, one document per line "
                             "(default: the built-in public-domain corpus)")
    parser.add_argument("--tokens-per-text", type=int, default=673,
                        help="truncate each document to this many tokens")
    parser.add_argument("--max-total-tokens", type=int, default=None,
                        help="optional cap on the total token budget across documents")
    parser.add_argument("--device", default="cpu")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.texts is None:
        tmp = tempfile.NamedTemporaryFile("w", suffix=".txt", delete=False)
        tmp.write("\n".join(DEFAULT_TEXTS) + "\n")
        tmp.close()
        texts_file = tmp.name
    else:
        texts_file = args.texts
    job = ExtractionJob(
        model_id=args.model,
        texts_file=texts_file,
        output_dir=args.out,
        revisions=args.revision,
        max_tokens_per_text=args.tokens_per_text,
        max_total_tokens=args.max_total_tokens,
        device=args.device,
    )
    try:
        results = extract(job)
    except UnsupportedModelError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    failures = 0
    for res in results:
        if res.error is None:
            sys.stdout.write(f"{res.revision}: wrote {res.path} ({res.tokens} tokens)\n")
        else:
            failures += 1
            sys.stderr.write(f"{res.revision}: FAILED: {res.error}\n")
    if any(res.error is None for res in results):
        sys.stdout.write(f"manifest: {Path(args.out) / 'series.manifest'}\n")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
