"""Command-line front end. Per-clip failures keep exit code 0; fatal errors
(unloadable model, unreadable manifest, empty job) exit 1, usage errors 2."""

from __future__ import annotations

import argparse
import sys

from .errors import ExportError
from .export import ExportJob, export


def _parse_layers(text: str) -> tuple[int, int] | None:
    if text == "all":
        return None
    lo, sep, hi = text.partition(":")
    try:
        if sep:
            return int(lo), int(hi)
        return int(lo), int(lo)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected 'all', an index, or first:last, got '{text}'"
        ) from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="sifb-export",
        description="Export SIFB feature files from every waveform in a manifest.",
    )
    p.add_argument("--manifest", required=True, help="JSON-lines manifest of audio clips")
    p.add_argument("--model", required=True,
                   help="stub:identity, stub:logmel[:layers], or module.path:attr")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--layers", type=_parse_layers, default=None,
                   help="'all' (default), one index, or first:last inclusive")
    p.add_argument("--sample-rate", dest="sample_rate", type=int, default=16000)
    p.add_argument("--threads", type=int, default=1)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    job = ExportJob(manifest=args.manifest, model=args.model, out_dir=args.out,
                    layers=args.layers, sample_rate=args.sample_rate,
                    threads=args.threads)
    try:
        report = export(job)
    except ExportError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    print(f"exported {len(report.exported)} clip(s), {len(report.files)} file(s), "
          f"{len(report.failures)} failure(s) -> {report.manifest_path}")
    for failure in report.failures:
        print(f"  failed {failure.clip_id}: {failure.reason}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
