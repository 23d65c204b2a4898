import numpy as np
import pytest

from cirn import tensor as T
from cirn.data import TokenizedPair, make_batch
from cirn.gradcheck import toy_model_config


def pair_from_lengths(rng, n, m, vocab_size=12):
    ids = [2] + list(rng.integers(4, vocab_size, n)) + [3] + list(rng.integers(4, vocab_size, m)) + [3]
    return TokenizedPair(tuple(int(i) for i in ids), (0,) * (n + 2) + (1,) * (m + 1), n, m)


@pytest.fixture
def f64():
    with T.default_dtype(np.float64):
        yield


@pytest.fixture
def toy_config():
    return toy_model_config(12)


@pytest.fixture
def ragged_batch():
    rng = np.random.default_rng(11)
    pairs = [pair_from_lengths(rng, 4, 3), pair_from_lengths(rng, 2, 5), pair_from_lengths(rng, 5, 5)]
    return make_batch(pairs, [0, 1, 2])


_ACCEPTANCE = []


@pytest.fixture
def record():
    """Store a one-line verdict for an acceptance criterion; printed in the terminal summary."""
    def _record(number, title, passed, detail=""):
        _ACCEPTANCE.append((number, f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title}  {detail}".rstrip()))
        return passed
    return _record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_ACCEPTANCE):
        terminalreporter.write_line(line)
