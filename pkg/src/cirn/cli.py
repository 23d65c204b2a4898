"""Command-line entry points: ``train``, ``eval``, ``gradcheck`` and ``ablate``.

Exit codes: 0 success, 1 runtime or data failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import List, Optional

from . import checkpoint as ckpt
from . import config as run_config
from .data import Vocabulary, encode_records, load_jsonl
from .errors import CIRNError, ConfigError, DataError, FormatError
from .trainer import evaluate

logger = logging.getLogger("cirn")


def _load_run(args) -> run_config.RunConfig:
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.out is not None:
        overrides.append(f"out={json.dumps(args.out)}")
    return run_config.load(args.config, overrides)


def cmd_train(args) -> int:
    from .experiments import train_run

    run = _load_run(args)
    res = train_run(run, out_dir=run.out)
    print(f"{res.split} accuracy {res.final.accuracy:.4f} loss {res.final.loss:.4f} "
          f"after {res.trainer.state.step} steps ({res.trainer.state.mode}); outputs in {run.out}")
    return 0


def cmd_eval(args) -> int:
    c = ckpt.load(args.checkpoint)
    model = ckpt.restore_model(c)
    vocab_size = model.config.encoder.vocab_size
    if args.vocab:
        vocab = Vocabulary.load(args.vocab)
    elif c.vocab is not None:
        vocab = Vocabulary(c.vocab)
    else:
        raise FormatError("checkpoint carries no vocabulary; pass --vocab")
    if len(vocab) != vocab_size:
        raise FormatError(f"vocabulary has {len(vocab)} tokens but the checkpoint expects {vocab_size}")
    if not Path(args.data).is_file():
        raise DataError(f"dataset not found: {args.data}")
    records, _ = load_jsonl(args.data)
    max_len = c.header.get("trainer_config", {}).get("max_sentence_len", 32)
    res = evaluate(model, *encode_records(records, vocab, max_len))
    print(res.report())
    if args.out:
        Path(args.out).write_text(json.dumps(
            {"split": Path(args.data).stem, "accuracy": res.accuracy, "loss": res.loss,
             "confusion": res.confusion.tolist()}, indent=2) + "\n")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite, summarize

    start = time.time()
    reports = run_suite(tol=args.tol, seed=args.seed or 0)
    print(summarize(reports, time.time() - start))
    return 0 if all(r.passed for r in reports) else 1


def cmd_ablate(args) -> int:
    from .experiments import format_ablation_table, run_ablation

    run = _load_run(args)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [run.seed]
    table = run_ablation(run, seeds, out_dir=run.out)
    print(format_ablation_table(table, seeds))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cirn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def run_flags(p):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted override, repeatable")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("train", help="train a model")
    run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a JSON-lines dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--vocab", help="vocabulary file overriding the one stored in the checkpoint")
    p.add_argument("--out", help="write the report as JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every operation and the full model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--f64", action="store_true", default=True, help="64-bit mode (always on)")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="train the full model and every ablation on shared data")
    run_flags(p)
    p.add_argument("--seeds", help="comma-separated seeds (default: the run seed)")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (CIRNError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
