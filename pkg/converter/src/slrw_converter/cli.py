"""Command-line entry point for the checkpoint converter."""

from __future__ import annotations

import argparse
import sys

from slrw_converter.convert import ConversionError, convert, parse_input_range


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slrw-convert",
        description="Convert a Keras MobileNetV2 checkpoint to an .slrw weight bundle.",
    )
    parser.add_argument(
        "--source",
        required=True,
        help=".keras/.h5 checkpoint path, or 'imagenet' to fetch the stock pretrained model",
    )
    parser.add_argument("--out", required=True, help="bundle path to write")
    parser.add_argument(
        "--fixture", default=None, help="also write a reference-prediction fixture here"
    )
    parser.add_argument(
        "--fixture-count", type=int, default=4, help="generated fixture images"
    )
    parser.add_argument(
        "--input-range",
        default="0,1",
        help="input range the source model was trained on, e.g. '-1,1'",
    )
    parser.add_argument("--seed", type=int, default=0)
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        report = convert(
            args.source,
            args.out,
            fixture_out=args.fixture,
            fixture_count=args.fixture_count,
            input_range=parse_input_range(args.input_range),
            seed=args.seed,
        )
    except ConversionError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    print(f"mapped {report.mapped} parameters -> {report.bundle_path}")
    for name in report.skipped:
        print(f"skipped source parameter: {name}")
    if report.fixture_path:
        print(f"fixture written: {report.fixture_path}")
    return 0


def main() -> None:
    sys.exit(run())
