"""From JSON lines to padded integer batches."""

import json
import tempfile
from pathlib import Path

from cirn.data import build_vocab, encode_records, load_jsonl, make_batch, tokenize_pair

lines = [
    {"sentence1": "A man inspects a uniform.", "sentence2": "The man is sleeping.", "gold_label": "contradiction"},
    {"sentence1": "Two kids play in a park.", "sentence2": "Children are outdoors.", "gold_label": "entailment"},
    {"sentence1": "A dog runs.", "sentence2": "A dog chases a ball.", "gold_label": "neutral"},
    {"sentence1": "Someone waits.", "sentence2": "Nobody agrees on this one.", "gold_label": "-"},
]
path = Path(tempfile.mkdtemp()) / "tiny.jsonl"
path.write_text("".join(json.dumps(obj) + "\n" for obj in lines))

# Records without annotator consensus ("-") are dropped and counted.
records, skipped = load_jsonl(path)
print(f"{len(records)} records, {skipped} skipped")

vocab = build_vocab(records)
print("vocabulary:", vocab.itos[:12], "...")

# Each pair becomes [CLS] premise [SEP] hypothesis [SEP].
pair = tokenize_pair(records[0].sentence1, records[0].sentence2, vocab)
print(vocab.decode(pair.token_ids))
print("segments:", pair.segment_ids)
print(f"n={pair.n} m={pair.m} length={pair.length} (always n + m + 3)")

# Long sentences keep their first tokens.
short = tokenize_pair(records[0].sentence1, records[0].sentence2, vocab, max_sentence_len=3)
print("capped at 3:", vocab.decode(short.token_ids))

pairs, labels = encode_records(records, vocab, 32)
batch = make_batch(pairs, labels)
print("token ids:\n", batch.token_ids)
print("attention mask:\n", batch.attention_mask)
