"""Command-line entry point.

Commands: gen-synth, embed, train, score, correlate, run-all. Common flags:
--config PATH (JSON), --seed N, --out DIR; every flag overrides its config
key. On failure a single machine-parsable JSON line goes to stderr and the
exit code is nonzero. An output directory is locked for the duration of a
command so concurrent writers fail loudly.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import os
import sys

from . import pipeline
from .errors import FeatAlignError, LockError

_COMMANDS = {
    "gen-synth": pipeline.cmd_gen_synth,
    "embed": pipeline.cmd_embed,
    "train": pipeline.cmd_train,
    "score": pipeline.cmd_score,
    "correlate": pipeline.cmd_correlate,
    "run-all": pipeline.cmd_run_all,
}
_NEED_SEED = {"gen-synth", "train", "run-all", "score"}


@contextlib.contextmanager
def _output_lock(out_dir: str):
    os.makedirs(out_dir, exist_ok=True)
    lock_path = os.path.join(out_dir, ".lock")
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise LockError(f"{out_dir}: another command holds the lock ({lock_path})") from None
    try:
        os.close(fd)
        yield
    finally:
        with contextlib.suppress(FileNotFoundError):
            os.remove(lock_path)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="featalign",
        description="Score the training maturity of perception-module feature maps "
        "against scene ground truth in a shared embedding space.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in _COMMANDS.items():
        p = sub.add_parser(name, help=(fn.__doc__ or "").strip().splitlines()[0])
        p.add_argument("--config", help="JSON pipeline config")
        p.add_argument("--out", required=True, help="output directory for artifacts")
        p.add_argument("--seed", type=int, help="RNG seed (required for generation/training)")
        p.add_argument("--module-tag", dest="module_tag", help="label for the evaluated module")
        p.add_argument("--space", choices=("2d", "3d"), help="representation space")
        p.add_argument("--gt", help="GT scene JSON file")
        p.add_argument("--features", help="feature dataset dir (comma-separate to pool for training)")
        p.add_argument("--embeddings", help="'builtin' or an embedding interchange JSONL")
        p.add_argument("--metrics", help="metric series CSV (phase,mAP,NDS)")
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = pipeline.load_pipeline_config(
            args.config,
            args.out,
            module_tag=args.module_tag,
            space=args.space,
            seed=args.seed,
            gt=args.gt,
            features=args.features,
            embeddings=args.embeddings,
            metrics=args.metrics,
        )
        if args.command in _NEED_SEED:
            cfg.require_seed()
        with _output_lock(cfg.out_dir):
            _COMMANDS[args.command](cfg)
    except FeatAlignError as e:
        print(json.dumps({"error": e.code, "message": e.message}), file=sys.stderr)
        return 2
    except OSError as e:
        print(json.dumps({"error": "io", "message": str(e)}), file=sys.stderr)
        return 2
    return 0


def main():
    raise SystemExit(run())
