import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cirn.data import (CLS_ID, PAD_ID, SEP_ID, UNK_ID, ExampleRecord, Vocabulary, batch_iter, build_vocab,
                       encode_records, load_jsonl, make_batch, mix_datasets, tokenize, tokenize_pair,
                       write_jsonl)
from cirn.errors import ContractError, DataError


def write_lines(path, objs):
    path.write_text("".join(json.dumps(o) + "\n" for o in objs), encoding="utf-8")


@pytest.fixture
def small_vocab():
    recs = [ExampleRecord("a b c", "a d", "entailment"), ExampleRecord("b b e", "c", "neutral")]
    return build_vocab(recs)


class TestTokenize:
    def test_lowercase_and_punctuation(self):
        assert tokenize("A man, sleeping.") == ["a", "man", ",", "sleeping", "."]

    def test_whitespace_only(self):
        assert tokenize("   \t") == []


class TestLoadJsonl:
    def test_skips_no_consensus(self, tmp_path):
        p = tmp_path / "d.jsonl"
        write_lines(p, [{"sentence1": "a", "sentence2": "b", "gold_label": "-"},
                        {"sentence1": "a", "sentence2": "b", "gold_label": "neutral"}])
        records, skipped = load_jsonl(p)
        assert skipped == 1
        assert [r.label for r in records] == ["neutral"]

    def test_unknown_label_names_line(self, tmp_path):
        p = tmp_path / "d.jsonl"
        write_lines(p, [{"sentence1": "a", "sentence2": "b", "gold_label": "neutral"},
                        {"sentence1": "a", "sentence2": "b", "gold_label": "maybe"}])
        with pytest.raises(DataError, match=":2:"):
            load_jsonl(p)

    def test_malformed_line(self, tmp_path):
        p = tmp_path / "d.jsonl"
        p.write_text("{not json\n")
        with pytest.raises(DataError, match=":1:"):
            load_jsonl(p)

    def test_empty_sentence(self, tmp_path):
        p = tmp_path / "d.jsonl"
        write_lines(p, [{"sentence1": " ", "sentence2": "b", "gold_label": "neutral"}])
        with pytest.raises(DataError):
            load_jsonl(p)

    def test_round_trip(self, tmp_path):
        recs = [ExampleRecord("x y", "z", "contradiction"), ExampleRecord("p", "q r", "entailment")]
        write_jsonl(recs, tmp_path / "r.jsonl")
        assert load_jsonl(tmp_path / "r.jsonl") == (recs, 0)


class TestVocabulary:
    def test_specials_first(self, small_vocab):
        assert small_vocab.itos[:4] == ["[PAD]", "[UNK]", "[CLS]", "[SEP]"]

    def test_frequency_then_lexical_order(self, small_vocab):
        # b:3, a:2, c:2, d:1, e:1
        assert small_vocab.itos[4:] == ["b", "a", "c", "d", "e"]

    def test_min_frequency_and_cap(self):
        recs = [ExampleRecord("a a b", "c", "neutral")]
        assert build_vocab(recs, min_frequency=2).itos[4:] == ["a"]
        assert len(build_vocab(recs, max_size=5)) == 5

    def test_unknown_maps_to_unk(self, small_vocab):
        assert small_vocab.encode(["zzz"]) == [UNK_ID]

    def test_save_load(self, small_vocab, tmp_path):
        small_vocab.save(tmp_path / "v.txt")
        assert Vocabulary.load(tmp_path / "v.txt") == small_vocab

    def test_rejects_missing_specials(self):
        with pytest.raises(DataError):
            Vocabulary(["a", "b"])

    def test_empty_records(self):
        with pytest.raises(ContractError):
            build_vocab([])


class TestTokenizePair:
    def test_layout(self, small_vocab):
        p = tokenize_pair("a b", "c", small_vocab)
        assert p.token_ids[0] == CLS_ID
        assert p.token_ids[3] == SEP_ID and p.token_ids[-1] == SEP_ID
        assert p.segment_ids == (0, 0, 0, 0, 1, 1)
        assert (p.n, p.m, p.length) == (2, 1, 6)
        assert list(p.s1_range) == [1, 2] and list(p.s2_range) == [4]

    def test_truncation_keeps_first_tokens(self, small_vocab):
        p = tokenize_pair("a b c d e", "e d c", small_vocab, max_sentence_len=2)
        assert small_vocab.decode(p.token_ids[1:3]) == ["a", "b"]
        assert small_vocab.decode(p.token_ids[4:6]) == ["e", "d"]

    @given(st.integers(1, 60), st.integers(1, 60), st.sampled_from([48, 32, 24]))
    @settings(max_examples=60, deadline=None)
    def test_length_law(self, n, m, cap):
        vocab = Vocabulary(["[PAD]", "[UNK]", "[CLS]", "[SEP]", "w"])
        p = tokenize_pair(" ".join(["w"] * n), " ".join(["w"] * m), vocab, cap)
        assert p.length == p.n + p.m + 3
        assert (p.n, p.m) == (min(n, cap), min(m, cap))


class TestMix:
    def test_fraction_count(self):
        rng = np.random.default_rng(0)
        mixed = mix_datasets(list(range(10)), list(range(100, 140)), 0.15, rng)
        assert len(mixed) == 10 + 6
        assert sum(x >= 100 for x in mixed) == 6

    def test_zero_fraction(self):
        assert sorted(mix_datasets([1, 2], [5, 6], 0.0, np.random.default_rng(0))) == [1, 2]

    def test_bad_fraction(self):
        with pytest.raises(ContractError):
            mix_datasets([1], [2], 1.5, np.random.default_rng(0))


class TestBatching:
    def test_padding_and_mask(self, small_vocab):
        pairs = [tokenize_pair("a b c", "d", small_vocab), tokenize_pair("a", "b", small_vocab)]
        b = make_batch(pairs, [0, 2])
        assert b.token_ids.shape == (2, 7)
        np.testing.assert_array_equal(b.attention_mask[1], [1, 1, 1, 1, 1, 0, 0])
        assert b.token_ids[1, 5] == PAD_ID
        np.testing.assert_array_equal(b.n, [3, 1])
        np.testing.assert_array_equal(b.labels, [0, 2])

    def test_batches_are_read_only(self, small_vocab):
        b = make_batch([tokenize_pair("a", "b", small_vocab)])
        with pytest.raises(ValueError):
            b.token_ids[0, 0] = 5

    def test_batch_iter_covers_everything(self, small_vocab):
        recs = [ExampleRecord("a b", "c", "neutral")] * 7
        sizes = [len(b) for b in batch_iter(recs, small_vocab, 3)]
        assert sizes == [3, 3, 1]

    def test_encode_records_labels(self, small_vocab):
        recs = [ExampleRecord("a", "b", "contradiction"), ExampleRecord("a", "b", "entailment")]
        _, labels = encode_records(recs, small_vocab, 32)
        np.testing.assert_array_equal(labels, [1, 0])
