"""Every encoder layer contributes its own premise-by-hypothesis interaction grid."""

import tempfile
from pathlib import Path

import numpy as np

from cirn.data import build_vocab, encode_records, make_batch
from cirn.encoder import EncoderConfig, encode_layers, init_encoder_params
from cirn.interaction import export_csv, stack_interactions
from cirn.synthetic import position_match_corpus

records = position_match_corpus(4, np.random.default_rng(0))
vocab = build_vocab(records)
pairs, labels = encode_records(records, vocab, 8)
batch = make_batch(pairs, labels)

cfg = EncoderConfig(vocab_size=len(vocab), d=8, layers=3, heads=2, ffn_dim=16, max_positions=32, dropout_rate=0)
params = init_encoder_params(cfg, np.random.default_rng(1))
layers = encode_layers(batch, params, cfg)
print(f"{len(layers)} layer outputs, each {layers[0].shape}")

# Cell (i, j) of layer l holds the element-wise product of premise token i
# and hypothesis token j, taken from that layer's output.
stack = stack_interactions(layers, batch)
print("stack:", stack.values.shape, "= batch x n x m x d x layers")

first = records[0]
print(first.sentence1, "|", first.sentence2, "|", first.label)
energy = np.abs(stack.values.data[0]).sum(axis=(2, 3))
print("summed magnitude per cell:\n", np.round(energy, 2))

# Dumping one example as a flat table is handy for plotting elsewhere.
out = Path(tempfile.mkdtemp()) / "stack.csv"
export_csv(stack, out)
print("wrote", out, "with", len(out.read_text().splitlines()) - 1, "rows")
