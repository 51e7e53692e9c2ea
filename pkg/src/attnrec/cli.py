"""Command-line entry point: ``attnrec <command> [--config FILE] [--set section.key=value ...]``.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import gradcheck, pipeline
from .attncf import CheckpointError
from .config import ConfigError, RunConfig, load_config
from .corpus import CorpusError
from .embed import EmbeddingFormatError
from .numkit import NumericError
from .sampler import InfeasibleSample

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("attnrec")

DATA_ERRORS = (CorpusError, EmbeddingFormatError, CheckpointError, pipeline.DataError, InfeasibleSample,
               OSError)
NUMERIC_ERRORS = (NumericError, FloatingPointError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", "-c", help="INI-style run configuration")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
    common.add_argument("--output-dir", "-o", help="shorthand for --set run.output_dir=DIR")
    common.add_argument("--quiet", "-q", action="store_true", help="only log warnings")

    parser = _Parser(prog="attnrec", description="Attention-based recommender pipeline.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("synth", parents=[common], help="generate a planted-cluster interaction log")
    sub.add_parser("ingest", parents=[common], help="parse, filter and index an interaction log")
    sub.add_parser("embed", parents=[common], help="train skip-gram item embeddings")
    p = sub.add_parser("train", parents=[common], help="train the attention model or the DAN baseline")
    p.add_argument("--model", choices=["attn", "dan"], default="attn")
    p.add_argument("--depth", type=int, help="attention depth (defaults to model.depth)")
    p.add_argument("--name", help="checkpoint name (defaults to the model name)")
    p = sub.add_parser("tune-ws", parents=[common], help="fit weighted-sum weights with CMA-ES")
    p.add_argument("--self-test", action="store_true", help="run the sphere-function check and exit")
    sub.add_parser("evaluate", parents=[common], help="rank candidate pools and write reports")
    sub.add_parser("pipeline", parents=[common], help="run every stage end to end")
    p = sub.add_parser("grad-check", help="finite-difference checks of every backward pass")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quiet", "-q", action="store_true")
    return parser


def _setup_logging(quiet: bool) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(message)s"))
    log.handlers[:] = [handler]
    log.setLevel(logging.WARNING if quiet else logging.INFO)
    log.propagate = False


def cmd_grad_check(args) -> int:
    results = gradcheck.run_all(seed=args.seed)
    ok = True
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.name:<14} max rel error {r.max_rel_error:.3e}  ({status})")
        ok &= r.passed
    return EXIT_OK if ok else EXIT_NUMERIC


def run_stage(command: str, cfg: RunConfig, args) -> int:
    layout = pipeline.Layout(cfg.run.output_dir)
    if command == "tune-ws" and args.self_test:
        dist, ok = pipeline.sphere_self_test(cfg.run.seed)
        print(f"sphere self-test: distance to optimum {dist:.3e} ({'ok' if ok else 'FAIL'})")
        return EXIT_OK if ok else EXIT_NUMERIC
    if cfg.run.threads > 1:
        log.warning("threads=%d requested; stages run single-threaded", cfg.run.threads)
    layout.root.mkdir(parents=True, exist_ok=True)
    layout.partial.write_text(command + "\n", encoding="utf-8")
    layout.config.write_text(cfg.to_ini(), encoding="utf-8")
    emit = pipeline.EventLog(layout.logs / "events.jsonl", command)
    emit("start", config_hash=cfg.digest())
    if command == "synth":
        pipeline.stage_synth(cfg, layout, emit)
    elif command == "ingest":
        pipeline.stage_ingest(cfg, layout, emit)
    elif command == "embed":
        pipeline.stage_embed(cfg, layout, emit)
    elif command == "train":
        pipeline.stage_train(cfg, layout, emit, args.model, depth=args.depth, name=args.name)
    elif command == "tune-ws":
        pipeline.stage_tune_ws(cfg, layout, emit)
    elif command == "evaluate":
        pipeline.stage_evaluate(cfg, layout, emit)
    elif command == "pipeline":
        pipeline.stage_pipeline(cfg, layout, emit)
    manifest = pipeline.write_manifest(cfg, layout)
    layout.partial.unlink()
    emit("done", artifacts=len(manifest["artifacts"]))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    _setup_logging(args.quiet)
    if args.command == "grad-check":
        return cmd_grad_check(args)
    overrides = list(args.overrides)
    if args.output_dir:
        overrides.append(f"run.output_dir={args.output_dir}")
    if args.command == "train" and args.depth is not None and args.depth < 1:
        print("attnrec: error: --depth must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"attnrec: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return run_stage(args.command, cfg, args)
    except NUMERIC_ERRORS as exc:
        print(f"attnrec: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DATA_ERRORS as exc:
        print(f"attnrec: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        # remaining precondition failures come from inconsistent inputs
        print(f"attnrec: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
