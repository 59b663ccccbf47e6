"""
Teacher, pseudo labels, student
===============================

A small synthetic benchmark where commas, periods and question marks
follow from nearby trigger words, with some label noise. A teacher
trained on the labeled split labels a larger raw stream; a student is
then trained from the same initial weights on both sources, weighting
the pseudo-labeled loss by alpha and smoothing each source separately.
Takes a few minutes on one core.
"""

import itertools
import logging

from discst.corpus import build_vocabulary, render
from discst.decode import WindowSpec
from discst.model import ModelConfig, init_params
from discst.selftrain import STConfig, TrainingData, evaluate, pseudo_label, train_student, train_supervised
from discst.synthetic import generate_benchmark

logging.basicConfig(level=logging.INFO, format="%(message)s")

bench = generate_benchmark(train_words=30_000, unlabeled_words=150_000, dev_words=5_000, test_words=5_000)
print(render(bench.train[0])[:300], "...")

words = itertools.chain((w for e in bench.train for w in e.words), (w for u in bench.unlabeled for w in u))
vocab = build_vocabulary(words, max_size=2000)
data = TrainingData(vocab, bench.train, bench.dev)

model_cfg = ModelConfig(vocab_size=len(vocab), d_model=64, num_heads=4, d_ff=128, max_positions=64, dtype="float32")
init = init_params(model_cfg, seed=0, vocab_fingerprint=vocab.fingerprint())
cfg = STConfig(epochs=12, batch_size=8, learning_rate=2e-3, max_len=64, window=WindowSpec(64, 20, 8))

teacher, report = train_supervised(data, init, cfg, beta=0.0)
print("teacher dev F1 per epoch:", [round(f, 3) for f in report.val_f1])

pseudo = pseudo_label(teacher, bench.unlabeled, vocab, cfg.window)
print("pseudo:", render(pseudo[0])[:200], "...")

vanilla, v_rep = train_student(data, pseudo, init, cfg)
disc, d_rep = train_student(data, pseudo, init, cfg.replace(alpha=0.5, beta_human=0.05, beta_pseudo=0.2))

for name, params in (("teacher", teacher), ("vanilla ST", vanilla), ("disc ST", disc)):
    m = evaluate(params, data, cfg.window, bench.test)
    print(m.table(name).splitlines()[-1])
