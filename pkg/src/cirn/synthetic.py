"""Small synthetic NLI corpora with known labelling rules."""

from __future__ import annotations

from typing import List

import numpy as np

from .data import ExampleRecord

NEGATION = "not"


def _words(size: int) -> List[str]:
    return [f"w{i}" for i in range(size)]


def subset_negation_corpus(count: int, rng: np.random.Generator, vocab_size: int = 16,
                           premise_len=(4, 7)) -> List[ExampleRecord]:
    """Label rule: contradiction iff the hypothesis contains ``not``; else entailment
    iff every hypothesis token occurs in the premise; else neutral.

    Classes are generated in rotation so the corpus is balanced.
    """
    words = _words(vocab_size)
    out = []
    for k in range(count):
        plen = int(rng.integers(premise_len[0], premise_len[1] + 1))
        premise = list(rng.choice(words, size=plen, replace=False))
        hlen = int(rng.integers(1, 4))
        kind = k % 3
        if kind == 0:
            hyp = list(rng.choice(premise, size=min(hlen, plen), replace=False))
            label = "entailment"
        elif kind == 1:
            hyp = list(rng.choice(words, size=hlen, replace=False))
            hyp.insert(int(rng.integers(0, len(hyp) + 1)), NEGATION)
            label = "contradiction"
        else:
            outside = [w for w in words if w not in premise]
            hyp = list(rng.choice(premise, size=min(hlen - 1, plen), replace=False))
            hyp.insert(int(rng.integers(0, len(hyp) + 1)), str(rng.choice(outside)))
            label = "neutral"
        out.append(ExampleRecord(" ".join(premise), " ".join(hyp), label))
    return out


def position_match_corpus(count: int, rng: np.random.Generator, vocab_size: int = 8,
                          length: int = 5) -> List[ExampleRecord]:
    """Entailment iff the two sentences share a token at the same position, else neutral.

    Every example shares exactly one planted token; in negatives it sits at a
    different position, so the bag of shared words carries no signal.
    """
    words = _words(vocab_size)
    out = []
    for k in range(count):
        positive = k % 2 == 0
        while True:
            # both sentences are redrawn: a premise like "w0 w0 w0 w0" admits no negative
            s1 = list(rng.choice(words, size=length))
            s2 = list(rng.choice(words, size=length))
            i = int(rng.integers(length))
            j = i if positive else int((i + rng.integers(1, length)) % length)
            s2[j] = s1[i]
            matches = sum(a == b for a, b in zip(s1, s2))
            if (matches > 0) == positive:
                break
        out.append(ExampleRecord(" ".join(s1), " ".join(s2), "entailment" if positive else "neutral"))
    return out


def keyword_corpus(count: int, rng: np.random.Generator) -> List[ExampleRecord]:
    """Linearly separable task: the first premise token alone determines the label."""
    keys = {"alpha": "entailment", "beta": "contradiction", "gamma": "neutral"}
    fillers = _words(6)
    names = list(keys)
    out = []
    for k in range(count):
        key = names[k % 3]
        s1 = [key] + list(rng.choice(fillers, size=2))
        s2 = list(rng.choice(fillers, size=2))
        out.append(ExampleRecord(" ".join(s1), " ".join(s2), keys[key]))
    return out
