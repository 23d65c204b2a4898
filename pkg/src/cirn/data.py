"""Dataset loading, vocabulary, pair tokenization and batching."""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ContractError, DataError

LABELS = ("entailment", "contradiction", "neutral")
LABEL_TO_ID = {name: i for i, name in enumerate(LABELS)}

PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"
SPECIALS = (PAD, UNK, CLS, SEP)
PAD_ID, UNK_ID, CLS_ID, SEP_ID = 0, 1, 2, 3

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


@dataclass(frozen=True)
class ExampleRecord:
    sentence1: str
    sentence2: str
    label: str

    def __post_init__(self):
        if self.label not in LABEL_TO_ID:
            raise DataError(f"unknown label {self.label!r}")
        if not tokenize(self.sentence1) or not tokenize(self.sentence2):
            raise DataError("both sentences must be non-empty after normalization")

    @property
    def label_id(self) -> int:
        return LABEL_TO_ID[self.label]


def tokenize(text: str) -> List[str]:
    """Lowercase and split on whitespace and punctuation boundaries."""
    return _TOKEN_RE.findall(text.lower())


def load_jsonl(path) -> Tuple[List[ExampleRecord], int]:
    """Read SNLI-style JSON lines; returns ``(records, skipped)``.

    Lines whose ``gold_label`` is ``"-"`` carry no annotator consensus and are
    skipped.
    """
    records, skipped = [], 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                s1, s2, label = obj["sentence1"], obj["sentence2"], obj["gold_label"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: malformed record ({exc})") from None
            if label == "-":
                skipped += 1
                continue
            try:
                records.append(ExampleRecord(s1, s2, label))
            except DataError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    return records, skipped


def write_jsonl(records: Sequence[ExampleRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps({"sentence1": r.sentence1, "sentence2": r.sentence2,
                                 "gold_label": r.label}) + "\n")


class Vocabulary:
    """Bijection between retained tokens and dense ids; specials occupy ids 0-3."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[:4]) != SPECIALS:
            raise DataError("vocabulary must start with [PAD], [UNK], [CLS], [SEP]")
        if len(set(tokens)) != len(tokens):
            raise DataError("vocabulary contains duplicate tokens")
        self.itos = tokens
        self.stoi = {t: i for i, t in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def encode(self, tokens: Sequence[str]) -> List[int]:
        return [self.stoi.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Sequence[int]) -> List[str]:
        return [self.itos[i] for i in ids]

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.itos), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        text = Path(path).read_text(encoding="utf-8")
        return cls(text.split("\n")[:-1] if text.endswith("\n") else text.split("\n"))


def build_vocab(records: Sequence[ExampleRecord], min_frequency: int = 1,
                max_size: Optional[int] = None) -> Vocabulary:
    """Keep tokens seen at least ``min_frequency`` times, most frequent first.

    Ties are broken lexicographically; ``max_size`` counts the four specials.
    """
    if not records:
        raise ContractError("build_vocab needs at least one record")
    counts = Counter()
    for r in records:
        counts.update(tokenize(r.sentence1))
        counts.update(tokenize(r.sentence2))
    kept = sorted((t for t, c in counts.items() if c >= min_frequency and t not in SPECIALS),
                  key=lambda t: (-counts[t], t))
    if max_size is not None:
        kept = kept[:max(0, max_size - len(SPECIALS))]
    return Vocabulary(list(SPECIALS) + kept)


@dataclass(frozen=True)
class TokenizedPair:
    token_ids: Tuple[int, ...]
    segment_ids: Tuple[int, ...]
    n: int
    m: int

    @property
    def length(self) -> int:
        return len(self.token_ids)

    @property
    def s1_range(self) -> range:
        return range(1, 1 + self.n)

    @property
    def s2_range(self) -> range:
        return range(self.n + 2, self.n + 2 + self.m)


def tokenize_pair(s1: str, s2: str, vocab: Vocabulary, max_sentence_len: int = 32) -> TokenizedPair:
    """Encode as ``[CLS] s1 [SEP] s2 [SEP]``, truncating each sentence to its first tokens."""
    if max_sentence_len < 1:
        raise ContractError("max_sentence_len must be >= 1")
    t1 = tokenize(s1)[:max_sentence_len]
    t2 = tokenize(s2)[:max_sentence_len]
    if not t1 or not t2:
        raise DataError("empty sentence after tokenization")
    ids = [CLS_ID] + vocab.encode(t1) + [SEP_ID] + vocab.encode(t2) + [SEP_ID]
    segments = [0] * (len(t1) + 2) + [1] * (len(t2) + 1)
    return TokenizedPair(tuple(ids), tuple(segments), len(t1), len(t2))


def mix_datasets(primary: Sequence, auxiliary: Sequence, fraction: float,
                 rng: np.random.Generator) -> list:
    """Append a uniform sample of ``floor(fraction * len(auxiliary))`` auxiliary records, then shuffle."""
    if not 0 <= fraction <= 1:
        raise ContractError(f"fraction must lie in [0, 1], got {fraction}")
    k = int(np.floor(fraction * len(auxiliary)))
    picked = rng.choice(len(auxiliary), size=k, replace=False) if k else np.array([], dtype=int)
    mixed = list(primary) + [auxiliary[i] for i in sorted(picked)]
    order = rng.permutation(len(mixed))
    return [mixed[i] for i in order]


@dataclass(frozen=True)
class Batch:
    token_ids: np.ndarray       # B×N int
    segment_ids: np.ndarray     # B×N int
    attention_mask: np.ndarray  # B×N {0,1}
    n: np.ndarray               # B
    m: np.ndarray               # B
    labels: Optional[np.ndarray]

    def __len__(self) -> int:
        return self.token_ids.shape[0]

    @property
    def seq_len(self) -> int:
        return self.token_ids.shape[1]


def make_batch(pairs: Sequence[TokenizedPair], labels: Optional[Sequence[int]] = None) -> Batch:
    width = max(p.length for p in pairs)
    B = len(pairs)
    tok = np.full((B, width), PAD_ID, dtype=np.int64)
    seg = np.zeros((B, width), dtype=np.int64)
    mask = np.zeros((B, width), dtype=np.int64)
    for i, p in enumerate(pairs):
        tok[i, :p.length] = p.token_ids
        seg[i, :p.length] = p.segment_ids
        mask[i, :p.length] = 1
    for arr in (tok, seg, mask):
        arr.setflags(write=False)
    lab = None if labels is None else np.asarray(labels, dtype=np.int64)
    return Batch(tok, seg, mask, np.array([p.n for p in pairs]), np.array([p.m for p in pairs]), lab)


def encode_records(records: Sequence[ExampleRecord], vocab: Vocabulary,
                   max_sentence_len: int) -> Tuple[List[TokenizedPair], np.ndarray]:
    pairs = [tokenize_pair(r.sentence1, r.sentence2, vocab, max_sentence_len) for r in records]
    return pairs, np.array([r.label_id for r in records], dtype=np.int64)


def batch_iter(records: Sequence[ExampleRecord], vocab: Vocabulary, batch_size: int,
               max_sentence_len: int = 32, shuffle: bool = False,
               rng: Optional[np.random.Generator] = None) -> Iterator[Batch]:
    if batch_size < 1:
        raise ContractError("batch_size must be >= 1")
    pairs, labels = encode_records(records, vocab, max_sentence_len)
    yield from iter_encoded(pairs, labels, batch_size, rng.permutation(len(pairs)) if shuffle else None)


def iter_encoded(pairs: Sequence[TokenizedPair], labels: np.ndarray, batch_size: int,
                 order: Optional[np.ndarray] = None) -> Iterator[Batch]:
    order = np.arange(len(pairs)) if order is None else order
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        yield make_batch([pairs[i] for i in idx], labels[idx])
