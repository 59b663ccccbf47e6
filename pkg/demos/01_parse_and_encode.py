"""
From punctuated text to model inputs
====================================

Every word gets one label: the mark that follows it, or NONE.
Words are then split into subword pieces; the model reads the
label of a word off its last piece.
"""

import numpy as np

from discst.corpus import build_vocabulary, chunk_for_training, encode, parse_punctuated_text, render
from discst.labels import CHINESE5

text = """So, what did you think? I liked the talk, but it ran long.
Well... okay!! we bought apples, pears and plums."""

examples = parse_punctuated_text(text)
for ex in examples:
    print(list(zip(ex.words, (lab.name for lab in ex.labels))))

# "..." and "!!" collapse to their first mark; "!" is not a class, so it is dropped
print(render(examples[1]))

# A vocabulary keeps frequent words whole and falls back to characters.
vocab = build_vocabulary((w for ex in examples for w in ex.words), max_size=60)
print(len(vocab), "pieces:", vocab.subwords[:12], "...")

enc = encode(examples[0], vocab)
print("ids      ", enc.subword_ids)
print("last ids ", enc.last_subtoken_index)
for j, word in enumerate(examples[0].words):
    lo = 0 if j == 0 else enc.last_subtoken_index[j - 1] + 1
    pieces = [vocab.subwords[i] for i in enc.subword_ids[lo : enc.last_subtoken_index[j] + 1]]
    print(f"  {word:>8} -> {pieces}")

# Long examples are cut into training chunks. Each chunk may carry a few
# words of left context whose labels are masked out of the loss.
chunks = chunk_for_training(enc, max_len=8, overlap=3)
for c in chunks:
    print(len(c), c.label_mask.astype(int) if c.label_mask is not None else "all labeled")
owned = sum(int(c.target_mask().sum()) for c in chunks)
assert owned == enc.num_words

# Chinese mode adds the enumeration comma as a fifth class.
zh = parse_punctuated_text("我们 买了 苹果 、 梨 和 李子 。", CHINESE5)
print([(w, lab.name) for w, lab in zip(zh[0].words, zh[0].labels)])
print(np.bincount([int(x) for x in zh[0].labels], minlength=5))
