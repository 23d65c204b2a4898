"""Training runs and the ablation suite, driven by a :class:`RunConfig`."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import checkpoint as ckpt
from .config import RunConfig
from .data import (ExampleRecord, Vocabulary, build_vocab, encode_records, load_jsonl,
                   mix_datasets)
from .errors import DataError
from .model import ABLATIONS, CIRN, ModelConfig
from .synthetic import keyword_corpus, position_match_corpus, subset_negation_corpus
from .trainer import EvalResult, Trainer, evaluate

logger = logging.getLogger(__name__)


@dataclass
class Corpus:
    train: List[ExampleRecord]
    dev: Optional[List[ExampleRecord]]
    vocab: Vocabulary


def _read(path: str) -> List[ExampleRecord]:
    if not Path(path).is_file():
        raise DataError(f"dataset not found: {path}")
    records, skipped = load_jsonl(path)
    if skipped:
        logger.info("%s: skipped %d unlabelled records", path, skipped)
    return records


def synthetic_records(cfg, seed: int):
    rng = np.random.default_rng([seed, 17])
    if cfg.task == "subset_negation":
        make = lambda k: subset_negation_corpus(k, rng, vocab_size=cfg.vocab_size)
    elif cfg.task == "position_match":
        make = lambda k: position_match_corpus(k, rng, vocab_size=cfg.vocab_size, length=cfg.length)
    else:
        make = lambda k: keyword_corpus(k, rng)
    train = make(cfg.train_size)
    return train, (make(cfg.dev_size) if cfg.dev_size else None)


def prepare_data(run: RunConfig) -> Corpus:
    data = run.data
    if data.train is not None:
        train = _read(data.train)
        dev = _read(data.dev) if data.dev else None
    else:
        train, dev = synthetic_records(data.synthetic, run.seed)
    if data.auxiliary:
        train = mix_datasets(train, _read(data.auxiliary), data.auxiliary_fraction,
                             np.random.default_rng([run.seed, 23]))
    if not train:
        raise DataError("training set is empty")
    vocab = build_vocab(train, data.min_frequency, data.max_vocab)
    return Corpus(train, dev, vocab)


@dataclass
class RunResult:
    model: CIRN
    trainer: Trainer
    final: EvalResult
    split: str


def train_run(run: RunConfig, corpus: Optional[Corpus] = None, out_dir: Optional[str] = None) -> RunResult:
    """Train one model; with ``out_dir`` also write config, vocab, log, checkpoints and metrics."""
    corpus = corpus or prepare_data(run)
    tcfg = run.trainer
    model_cfg = ModelConfig(run.encoder_config(len(corpus.vocab)), run.densenet, run.ablation)
    model = CIRN(model_cfg, seed=run.seed)
    train_enc = encode_records(corpus.train, corpus.vocab, tcfg.max_sentence_len)
    dev_enc = encode_records(corpus.dev, corpus.vocab, tcfg.max_sentence_len) if corpus.dev else None

    out = Path(out_dir) if out_dir else None
    log_lines: List[str] = []
    if out:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(run.to_dict(), indent=2, sort_keys=True) + "\n")
        corpus.vocab.save(out / "vocab.txt")

    trainer = Trainer(model, tcfg, train_enc, dev_enc, log=log_lines.append)

    def on_eval(tr: Trainer, res: EvalResult):
        if out and tr.state.best_step == tr.state.step:
            ckpt.save_training_state(out / "best.ckpt", tr, corpus.vocab.itos)

    trainer.run(on_eval=on_eval)
    split, enc = ("dev", dev_enc) if dev_enc else ("train", train_enc)
    final = evaluate(model, *enc, batch_size=tcfg.batch_size)
    if out:
        (out / "train.log").write_text("".join(line + "\n" for line in log_lines), encoding="utf-8")
        ckpt.save_training_state(out / "last.ckpt", trainer, corpus.vocab.itos)
        if not (out / "best.ckpt").exists():
            ckpt.save_training_state(out / "best.ckpt", trainer, corpus.vocab.itos)
        metrics = {"split": split, "accuracy": final.accuracy, "loss": final.loss,
                   "steps": trainer.state.step, "mode": trainer.state.mode}
        (out / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    return RunResult(model, trainer, final, split)


def run_ablation(run: RunConfig, seeds: Sequence[int] = (0,), ablations: Sequence[str] = ABLATIONS,
                 out_dir: Optional[str] = None) -> Dict[str, List[float]]:
    """Dev accuracy per ablation and seed; every row of a seed shares its data and data order."""
    table: Dict[str, List[float]] = {a: [] for a in ablations}
    for seed in seeds:
        seeded = replace(run, seed=seed, trainer=replace(run.trainer, seed=seed))
        corpus = prepare_data(seeded)
        for ablation in ablations:
            sub = str(Path(out_dir) / f"seed{seed}" / ablation) if out_dir else None
            res = train_run(replace(seeded, ablation=ablation), corpus, sub)
            table[ablation].append(res.final.accuracy)
            logger.info("seed %d %-16s %s accuracy %.4f", seed, ablation, res.split, res.final.accuracy)
    if out_dir:
        write_ablation_table(table, seeds, Path(out_dir))
    return table


ROW_TITLES = {
    "none": "full model",
    "last_layer_only": "final layer only",
    "no_interaction": "no interaction matrix",
    "no_densenet": "no feature extraction",
}


def format_ablation_table(table: Dict[str, List[float]], seeds: Sequence[int]) -> str:
    head = f"{'#':<3}{'variant':<24}" + "".join(f"{'seed ' + str(s):>10}" for s in seeds) + f"{'mean':>10}"
    lines = [head]
    for k, (name, accs) in enumerate(table.items(), start=1):
        lines.append(f"{k:<3}{ROW_TITLES.get(name, name):<24}" + "".join(f"{a:>10.4f}" for a in accs)
                     + f"{np.mean(accs):>10.4f}")
    return "\n".join(lines)


def write_ablation_table(table: Dict[str, List[float]], seeds: Sequence[int], out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    rows = [{"variant": name, "seeds": list(seeds), "accuracy": accs, "mean": float(np.mean(accs))}
            for name, accs in table.items()]
    (out / "ablation.json").write_text(json.dumps(rows, indent=2) + "\n")
    with open(out / "ablation.csv", "w", encoding="utf-8") as fh:
        fh.write("variant,seed,accuracy\n")
        for name, accs in table.items():
            for s, a in zip(seeds, accs):
                fh.write(f"{name},{s},{a!r}\n")
