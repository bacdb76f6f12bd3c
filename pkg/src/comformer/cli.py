"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal invariant
violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline as P
from .checkpoint import CheckpointError
from .java import LexError, ParseError, UnsupportedConstruct
from .metrics import EmptyCorpus, InvalidSpec

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

DATA_ERRORS = (
    P.FormatError,
    P.IoError,
    P.TooFewPairs,
    EmptyCorpus,
    InvalidSpec,
    CheckpointError,
    LexError,
    ParseError,
    UnsupportedConstruct,
    FileNotFoundError,
    json.JSONDecodeError,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config value; dotted keys reach into model (model.d_model=64)")
    p.add_argument("--out", help="run directory (overrides out_dir)")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="comformer", description="Transformer code-comment generation pipeline")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train-bpe", help="ingest and split the corpus, then fit BPE on the training split")
    _config_args(p)
    p.add_argument("--corpus")
    p.add_argument("--comments", help="comment file of a parallel-text corpus")
    p.add_argument("--format", dest="corpus_format", choices=["jsonl", "parallel-text"])

    p = sub.add_parser("preprocess", help="parse and BPE-encode every split")
    _config_args(p)

    p = sub.add_parser("train", help="train the model on the preprocessed data")
    _config_args(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--resume", action="store_true", help="continue from <out>/last")

    p = sub.add_parser("generate", help="comment one Java method")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", default="-", help="Java source file, '-' for stdin")
    p.add_argument("--beam", type=int, default=5)
    p.add_argument("--alpha", type=float, default=0.0)

    p = sub.add_parser("evaluate", help="score generated comments on the test split")
    _config_args(p)
    p.add_argument("--beam", type=int)
    p.add_argument("--bucket-width", type=int)

    p = sub.add_parser("stats", help="length statistics of a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--comments")
    p.add_argument("--format", dest="corpus_format", choices=["jsonl", "parallel-text"], default="jsonl")
    p.add_argument("--output", help="also write the report here")

    p = sub.add_parser("sample", help="draw the human-study sample from evaluation output")
    _config_args(p)
    p.add_argument("--e", type=float, default=0.05, help="error margin")
    p.add_argument("--confidence", type=float, default=0.95)

    p = sub.add_parser("run", help="train-bpe, preprocess, train and evaluate in one go")
    _config_args(p)
    p.add_argument("--corpus")
    p.add_argument("--comments")
    p.add_argument("--format", dest="corpus_format", choices=["jsonl", "parallel-text"])
    p.add_argument("--epochs", type=int)
    return parser


def _resolve_config(args) -> P.RunConfig:
    overrides = list(args.set)
    for key in ("out", "seed", "workers", "corpus", "comments", "corpus_format", "epochs", "beam", "bucket_width"):
        value = getattr(args, key, None)
        if value is not None:
            name = {"out": "out_dir", "beam": "beam_width"}.get(key, key)
            overrides.append(f"{name}={json.dumps(value)}")
    try:
        return P.load_config(args.config, overrides)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, P.FormatError):
            raise
        raise UsageError(str(exc)) from exc


def _dispatch(args) -> int:
    cmd = args.command
    if cmd == "generate":
        source = sys.stdin.read() if args.input == "-" else Path(args.input).read_text(encoding="utf-8")
        print(P.generate(args.checkpoint, source, args.beam, args.alpha))
        return EXIT_OK
    if cmd == "stats":
        result = P.ingest(args.corpus, args.corpus_format, args.comments)
        stats, failures = P.stats_for_pairs(result.pairs)
        text = stats.to_text() + f"malformed: {result.skipped}\nlex_failures: {failures}\n"
        sys.stdout.write(text)
        if args.output:
            Path(args.output).write_text(text, encoding="utf-8")
        return EXIT_OK

    config = _resolve_config(args)
    if cmd in ("train-bpe", "run"):
        P.stage_train_bpe(config)
    if cmd in ("preprocess", "run"):
        counts = P.stage_preprocess(config)
        print(" ".join(f"{k}={v}" for k, v in counts.items()))
    if cmd in ("train", "run"):
        path = P.stage_train(config, resume=getattr(args, "resume", False))
        print(f"checkpoint: {path}")
    if cmd in ("evaluate", "run"):
        report = P.stage_evaluate(config)
        sys.stdout.write(report.to_text())
    if cmd == "sample":
        print(f"sample: {P.stage_sample(config, args.e, args.confidence)}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return _dispatch(args)
    except UsageError as exc:
        print(f"comformer: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as exc:
        print(f"comformer: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - anything else is a broken invariant
        print(f"comformer: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
