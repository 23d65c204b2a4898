"""Fit a toy model on a rule-based corpus, checkpoint halfway, resume, and compare."""

import tempfile
from pathlib import Path

import numpy as np

from cirn import checkpoint as ckpt
from cirn.data import build_vocab, encode_records
from cirn.gradcheck import toy_model_config
from cirn.model import CIRN
from cirn.synthetic import subset_negation_corpus
from cirn.trainer import Trainer, TrainerConfig, evaluate

# Entailment when every hypothesis word is in the premise, contradiction when
# the hypothesis says "not", neutral otherwise.
records = subset_negation_corpus(200, np.random.default_rng(0))
for r in records[:3]:
    print(f"{r.sentence1!r:32} {r.sentence2!r:20} {r.label}")

vocab = build_vocab(records)
data = encode_records(records, vocab, 16)
config = TrainerConfig(max_epochs=150, eval_every_steps=60)

lines = []
trainer = Trainer(CIRN(toy_model_config(len(vocab)), seed=0), config, data, dev=data, log=lines.append)
half = trainer.total_steps // 2
trainer.run(steps=half)
print(f"after {half} steps: train accuracy {evaluate(trainer.model, *data).accuracy:.3f}")

path = Path(tempfile.mkdtemp()) / "half.ckpt"
ckpt.save_training_state(path, trainer, vocab.itos)
print(f"checkpoint: {path.stat().st_size} bytes")

trainer.run()
resumed = ckpt.resume_trainer(ckpt.load(path), data, dev=data)
resumed.run()
print(f"after {trainer.state.step} steps: train accuracy {evaluate(trainer.model, *data).accuracy:.3f}")

same = all(p.data.tobytes() == resumed.model.params[name].data.tobytes()
           for name, p in trainer.model.params.items())
print("resumed run matches the uninterrupted one bit for bit:", same)
print("last log lines (step, split, loss, accuracy, optimiser, L2 weight):")
print("\n".join(lines[-2:]))
