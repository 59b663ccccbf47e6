"""
Checking backprop by finite differences
=======================================

The encoder's backward pass is written by hand, so compare it with
central differences on a model small enough to perturb every weight.
"""

import numpy as np

from discst.corpus import EncodedExample
from discst.loss import batch_loss
from discst.model import ModelConfig, backward, collate, forward, init_params

cfg = ModelConfig(vocab_size=12, num_classes=4, num_layers=2, d_model=8, num_heads=2, d_ff=12,
                  max_positions=10, dropout_rate=0.0, dtype="float64")
params = init_params(cfg, seed=0)
print(params.num_parameters(), "parameters")

batch = collate([
    EncodedExample(np.array([3, 4, 5, 6, 7]), np.array([1, 2, 4]), np.array([0, 1, 2])),
    EncodedExample(np.array([8, 9, 10]), np.array([0, 2]), np.array([3, 0])),
])


def loss():
    logits, _ = forward(params, batch)
    return batch_loss(logits, batch.labels, batch.target_mask, beta=0.1)[0]


logits, cache = forward(params, batch)
_, dlogits, _ = batch_loss(logits, batch.labels, batch.target_mask, beta=0.1)
grads = backward(params, cache, dlogits)

eps = 1e-6
for name, w in params.items():
    num = np.zeros_like(w)
    for idx in np.ndindex(w.shape):
        old = w[idx]
        w[idx] = old + eps
        up = loss()
        w[idx] = old - eps
        num[idx] = (up - loss()) / (2 * eps)
        w[idx] = old
    scale = max(np.abs(num).max(), np.abs(grads[name]).max())
    err = np.abs(num - grads[name]).max() / scale if scale > 1e-7 else 0.0
    print(f"{name:10s} {str(w.shape):12s} rel err {err:.1e}")

# The key bias adds the same amount to every attention score of a query,
# which softmax ignores, so its gradient is zero up to rounding.
print("key-bias gradient norm:", np.linalg.norm(grads["l0.bk"]))
