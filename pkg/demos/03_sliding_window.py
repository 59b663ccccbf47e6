"""
Decoding long transcripts with overlapping windows
==================================================

A window of W subwords moves by S = W - Lo - Ro. Each window only
contributes predictions where it sees Lo tokens to the left and Ro
to the right; the last window is pulled back to end at the input end.
"""

import numpy as np

from discst.corpus import EncodedExample
from discst.decode import WindowSpec, decode_long, half_window_spec, plan_windows
from discst.model import ModelConfig, collate, forward, init_params

spec = WindowSpec(window=120, left_overlap=35, right_overlap=15)
print("step", spec.step)
for w in plan_windows(200, spec):
    print(f"window [{w.start:3d}, {w.end:3d})  keeps [{w.keep_start:3d}, {w.keep_end:3d})")

# The older scheme steps by half a window with equal margins.
print(half_window_spec(120))

# Small picture of which window owns each position.
small = WindowSpec(10, 3, 2)
T = 27
owner = np.zeros(T, int)
for k, w in enumerate(plan_windows(T, small)):
    owner[w.keep_start : w.keep_end] = k
print("".join(str(k) for k in owner))

# With T <= W the decoder is just one forward pass.
cfg = ModelConfig(vocab_size=30, num_layers=1, d_model=16, num_heads=2, d_ff=16, max_positions=32,
                  dropout_rate=0.0)
params = init_params(cfg, 1)
rng = np.random.default_rng(0)
ex = EncodedExample(rng.integers(0, 30, 20), np.arange(1, 20, 2), None)
full = forward(params, collate([ex]))[0][0].argmax(-1)
assert np.array_equal(decode_long(params, ex, WindowSpec(32, 8, 4)), full)

# A long input: every word gets exactly one label.
long_ex = EncodedExample(rng.integers(0, 30, 300), np.arange(2, 300, 3), None)
labels = decode_long(params, long_ex, WindowSpec(32, 10, 6))
print(len(labels), "labels for", long_ex.num_words, "words")
