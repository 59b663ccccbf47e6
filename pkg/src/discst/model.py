"""Pre-LN transformer encoder with a per-word softmax head, in plain numpy.

Forward returns a cache of activations; ``backward`` turns an upstream
gradient on the word logits into exact gradients for every tensor. Each word
is classified from the final hidden state at its last subword position.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import EncodedExample
from .errors import ConfigError, DataError, TrainingError

CHECKPOINT_VERSION = 1
LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    num_classes: int = 4
    num_layers: int = 2
    d_model: int = 64
    num_heads: int = 4
    d_ff: int = 128
    max_positions: int = 160
    dropout_rate: float = 0.1
    seed: int = 0
    dtype: str = "float64"

    def __post_init__(self):
        if self.d_model % self.num_heads:
            raise ConfigError(f"d_model={self.d_model} not divisible by num_heads={self.num_heads}")
        if min(self.vocab_size, self.num_classes, self.num_layers, self.d_model, self.d_ff, self.max_positions) < 1:
            raise ConfigError("model dimensions must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError(f"dtype must be float64 or float32, got {self.dtype!r}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


class ModelParams:
    """All trainable tensors, keyed by name, plus the config they were built for."""

    def __init__(self, config: ModelConfig, tensors: dict[str, np.ndarray], vocab_fingerprint: str = ""):
        self.config = config
        self.tensors = tensors
        self.vocab_fingerprint = vocab_fingerprint

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()}, self.vocab_fingerprint)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.tensors):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.tensors[name]).tobytes())
        return h.hexdigest()

    def all_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.tensors.values())

    def num_parameters(self) -> int:
        return sum(v.size for v in self.tensors.values())


def sinusoid_table(n_positions: int, d_model: int) -> np.ndarray:
    pos = np.arange(n_positions)[:, None]
    freq = 10000.0 ** (-2.0 * np.arange((d_model + 1) // 2)[None] / d_model)
    table = np.zeros((n_positions, d_model))
    table[:, 0::2] = np.sin(pos * freq)
    table[:, 1::2] = np.cos(pos * freq)[:, : d_model // 2]
    return table


def init_params(config: ModelConfig, seed: int | None = None, vocab_fingerprint: str = "") -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, unit layer-norm gains.

    The token table is a lookup from a one-hot input, so its fan-in is 1. The
    positional table starts from sinusoids (entries in [-1, 1]) and is trained
    like any other tensor; random positions make offset patterns much slower
    to learn.
    """
    rng = np.random.default_rng(config.seed if seed is None else seed)
    dt = np.dtype(config.dtype)
    D, F = config.d_model, config.d_ff

    def uniform(fan_in, shape):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape).astype(dt)

    t: dict[str, np.ndarray] = {}
    t["tok_emb"] = uniform(1, (config.vocab_size, D))
    t["pos_emb"] = sinusoid_table(config.max_positions, D).astype(dt)
    for layer in range(config.num_layers):
        p = f"l{layer}."
        t[p + "ln1.g"] = np.ones(D, dt)
        t[p + "ln1.b"] = np.zeros(D, dt)
        for name in ("wq", "wk", "wv", "wo"):
            t[p + name] = uniform(D, (D, D))
            t[p + "b" + name[1]] = np.zeros(D, dt)
        t[p + "ln2.g"] = np.ones(D, dt)
        t[p + "ln2.b"] = np.zeros(D, dt)
        t[p + "w1"] = uniform(D, (D, F))
        t[p + "b1"] = np.zeros(F, dt)
        t[p + "w2"] = uniform(F, (F, D))
        t[p + "b2"] = np.zeros(D, dt)
    t["lnf.g"] = np.ones(D, dt)
    t["lnf.b"] = np.zeros(D, dt)
    t["cls.w"] = uniform(D, (D, config.num_classes))
    t["cls.b"] = np.zeros(config.num_classes, dt)
    return ModelParams(config, t, vocab_fingerprint)


# ---------------------------------------------------------------------------
# batching


@dataclass
class Batch:
    ids: np.ndarray  # (B, T) subword ids, padded
    key_mask: np.ndarray  # (B, T) True at real tokens
    gather: np.ndarray  # (B, N) last-subtoken index per word, 0 at padding
    word_mask: np.ndarray  # (B, N) True at real words
    labels: np.ndarray  # (B, N) class index, 0 where absent
    target_mask: np.ndarray  # (B, N) True where a training target exists

    @property
    def shape(self) -> tuple[int, int]:
        return self.ids.shape


def collate(examples: Sequence[EncodedExample], pad_id: int = 0) -> Batch:
    if not examples:
        raise DataError("cannot collate an empty batch")
    B = len(examples)
    T = max(len(e) for e in examples)
    N = max(e.num_words for e in examples)
    ids = np.full((B, T), pad_id, dtype=np.int64)
    key_mask = np.zeros((B, T), dtype=bool)
    gather = np.zeros((B, N), dtype=np.int64)
    word_mask = np.zeros((B, N), dtype=bool)
    labels = np.zeros((B, N), dtype=np.int64)
    target_mask = np.zeros((B, N), dtype=bool)
    for b, e in enumerate(examples):
        ids[b, : len(e)] = e.subword_ids
        key_mask[b, : len(e)] = True
        n = e.num_words
        gather[b, :n] = e.last_subtoken_index
        word_mask[b, :n] = True
        if e.labels is not None:
            labels[b, :n] = e.labels
            target_mask[b, :n] = e.target_mask()
    return Batch(ids, key_mask, gather, word_mask, labels, target_mask)


# ---------------------------------------------------------------------------
# primitives


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Max-shifted softmax. Entries at -inf get probability exactly 0."""
    logits = np.asarray(logits)
    m = np.max(logits, axis=axis, keepdims=True)
    e = np.exp(logits - m)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    m = np.max(logits, axis=axis, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def _layer_norm(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(-1, keepdims=True) + LN_EPS)
    xhat = xc * rstd
    return xhat * g + b, (xhat, rstd, g)


def _layer_norm_backward(dy, cache):
    xhat, rstd, g = cache
    dg = (dy * xhat).reshape(-1, xhat.shape[-1]).sum(0)
    db = dy.reshape(-1, xhat.shape[-1]).sum(0)
    dxhat = dy * g
    dx = rstd * (dxhat - dxhat.mean(-1, keepdims=True) - xhat * (dxhat * xhat).mean(-1, keepdims=True))
    return dx, dg, db


def _gelu(x):
    t = np.tanh(_GELU_C * x * (1.0 + 0.044715 * x * x))
    return 0.5 * x * (1.0 + t), t


def _gelu_backward(dy, x, t):
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x * x))


def _dropout(x, rate, rng):
    if rate <= 0.0 or rng is None:
        return x, None
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * keep, keep


def _linear_grad(x, dy):
    """Weight and bias gradients of y = x @ w + b, flattened over leading axes."""
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    return x2.T @ dy2, dy2.sum(0)


# ---------------------------------------------------------------------------
# forward / backward


@dataclass(eq=False)
class ForwardCache:
    params: ModelParams
    batch: Batch
    layers: list = field(default_factory=list)
    emb_keep: np.ndarray | None = None
    final_ln: tuple | None = None
    hidden: np.ndarray | None = None
    gathered: np.ndarray | None = None
    consumed: bool = False


def check_batch(params: ModelParams, batch: Batch) -> None:
    cfg = params.config
    B, T = batch.ids.shape
    if T > cfg.max_positions:
        lengths = batch.key_mask.sum(1)
        b = int(np.argmax(lengths > cfg.max_positions))
        raise DataError(f"example {b} has {int(lengths[b])} subwords > max_positions={cfg.max_positions}")
    bad = (batch.ids >= cfg.vocab_size) | (batch.ids < 0)
    if bad.any():
        b = int(np.argwhere(bad)[0, 0])
        raise DataError(f"example {b} contains subword ids outside [0, {cfg.vocab_size})")


def encoder_forward(params: ModelParams, batch: Batch, train_mode: bool = False,
                    rng: np.random.Generator | None = None) -> tuple[np.ndarray, ForwardCache]:
    """Final (layer-normed) hidden states, shape (B, T, D)."""
    check_batch(params, batch)
    cfg = params.config
    P = params.tensors
    rate = cfg.dropout_rate if train_mode else 0.0
    if train_mode and rate > 0 and rng is None:
        raise ConfigError("train_mode with dropout needs an rng")
    B, T = batch.ids.shape
    H = cfg.num_heads
    dh = cfg.d_model // H
    scale = 1.0 / math.sqrt(dh)
    cache = ForwardCache(params, batch)

    x = P["tok_emb"][batch.ids] + P["pos_emb"][:T][None]
    x, cache.emb_keep = _dropout(x, rate, rng)
    neg = np.where(batch.key_mask, 0.0, -np.inf)[:, None, None, :].astype(x.dtype)

    for layer in range(cfg.num_layers):
        p = f"l{layer}."
        c = {}
        h, c["ln1"] = _layer_norm(x, P[p + "ln1.g"], P[p + "ln1.b"])
        c["h"] = h
        q = (h @ P[p + "wq"] + P[p + "bq"]).reshape(B, T, H, dh).transpose(0, 2, 1, 3)
        k = (h @ P[p + "wk"] + P[p + "bk"]).reshape(B, T, H, dh).transpose(0, 2, 1, 3)
        v = (h @ P[p + "wv"] + P[p + "bv"]).reshape(B, T, H, dh).transpose(0, 2, 1, 3)
        a = softmax(q @ k.transpose(0, 1, 3, 2) * scale + neg)
        ctx = (a @ v).transpose(0, 2, 1, 3).reshape(B, T, cfg.d_model)
        o = ctx @ P[p + "wo"] + P[p + "bo"]
        o, c["attn_keep"] = _dropout(o, rate, rng)
        c.update(q=q, k=k, v=v, a=a, ctx=ctx)
        x = x + o

        h2, c["ln2"] = _layer_norm(x, P[p + "ln2.g"], P[p + "ln2.b"])
        c["h2"] = h2
        u = h2 @ P[p + "w1"] + P[p + "b1"]
        gu, t = _gelu(u)
        f = gu @ P[p + "w2"] + P[p + "b2"]
        f, c["ff_keep"] = _dropout(f, rate, rng)
        c.update(u=u, t=t, gu=gu)
        x = x + f
        cache.layers.append(c)

    hidden, cache.final_ln = _layer_norm(x, P["lnf.g"], P["lnf.b"])
    cache.hidden = hidden
    return hidden, cache


def encoder_backward(params: ModelParams, cache: ForwardCache, dhidden: np.ndarray,
                     grads: dict[str, np.ndarray] | None = None) -> dict[str, np.ndarray]:
    """Accumulate encoder gradients from d(loss)/d(hidden) into ``grads``."""
    if cache.params is not params:
        raise ConfigError("forward cache was produced with a different parameter set")
    if cache.consumed:
        raise ConfigError("forward cache has already been used for a backward pass")
    cache.consumed = True
    cfg = params.config
    P = params.tensors
    batch = cache.batch
    B, T = batch.ids.shape
    H = cfg.num_heads
    dh = cfg.d_model // H
    scale = 1.0 / math.sqrt(dh)
    if grads is None:
        grads = {}
    for name, val in P.items():
        grads.setdefault(name, np.zeros_like(val))

    dx, dg, db = _layer_norm_backward(dhidden, cache.final_ln)
    grads["lnf.g"] += dg
    grads["lnf.b"] += db

    for layer in reversed(range(cfg.num_layers)):
        p = f"l{layer}."
        c = cache.layers[layer]
        # feed-forward branch
        df = dx if c["ff_keep"] is None else dx * c["ff_keep"]
        gw, gb = _linear_grad(c["gu"], df)
        grads[p + "w2"] += gw
        grads[p + "b2"] += gb
        du = _gelu_backward(df @ P[p + "w2"].T, c["u"], c["t"])
        gw, gb = _linear_grad(c["h2"], du)
        grads[p + "w1"] += gw
        grads[p + "b1"] += gb
        dh2 = du @ P[p + "w1"].T
        dln, dg, db = _layer_norm_backward(dh2, c["ln2"])
        grads[p + "ln2.g"] += dg
        grads[p + "ln2.b"] += db
        dx = dx + dln

        # attention branch
        do = dx if c["attn_keep"] is None else dx * c["attn_keep"]
        gw, gb = _linear_grad(c["ctx"], do)
        grads[p + "wo"] += gw
        grads[p + "bo"] += gb
        dctx = (do @ P[p + "wo"].T).reshape(B, T, H, dh).transpose(0, 2, 1, 3)
        a = c["a"]
        da = dctx @ c["v"].transpose(0, 1, 3, 2)
        dv = a.transpose(0, 1, 3, 2) @ dctx
        ds = a * (da - (da * a).sum(-1, keepdims=True)) * scale
        dq = ds @ c["k"]
        dk = ds.transpose(0, 1, 3, 2) @ c["q"]
        h = c["h"]
        dh_total = np.zeros_like(h)
        for name, dproj in (("q", dq), ("k", dk), ("v", dv)):
            dproj = dproj.transpose(0, 2, 1, 3).reshape(B, T, cfg.d_model)
            gw, gb = _linear_grad(h, dproj)
            grads[p + "w" + name] += gw
            grads[p + "b" + name] += gb
            dh_total += dproj @ P[p + "w" + name].T
        dln, dg, db = _layer_norm_backward(dh_total, c["ln1"])
        grads[p + "ln1.g"] += dg
        grads[p + "ln1.b"] += db
        dx = dx + dln

    if cache.emb_keep is not None:
        dx = dx * cache.emb_keep
    grads["pos_emb"][:T] += dx.sum(0)
    np.add.at(grads["tok_emb"], batch.ids.reshape(-1), dx.reshape(-1, cfg.d_model))
    return grads


def forward(params: ModelParams, batch: Batch, train_mode: bool = False,
            rng: np.random.Generator | None = None) -> tuple[np.ndarray, ForwardCache]:
    """Per-word class logits of shape (B, N, K) and the cache for ``backward``."""
    hidden, cache = encoder_forward(params, batch, train_mode, rng)
    B = hidden.shape[0]
    gathered = hidden[np.arange(B)[:, None], batch.gather]
    cache.gathered = gathered
    logits = gathered @ params["cls.w"] + params["cls.b"]
    return logits, cache


def backward(params: ModelParams, cache: ForwardCache, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Exact gradients of every tensor given d(loss)/d(logits)."""
    if cache.gathered is None:
        raise ConfigError("cache does not come from a classifier forward pass")
    batch = cache.batch
    dlogits = dlogits * batch.word_mask[..., None]
    grads = {}
    gw, gb = _linear_grad(cache.gathered, dlogits)
    dgathered = dlogits @ params["cls.w"].T
    B = dlogits.shape[0]
    dhidden = np.zeros_like(cache.hidden)
    np.add.at(dhidden, (np.repeat(np.arange(B), batch.gather.shape[1]), batch.gather.reshape(-1)),
              dgathered.reshape(-1, dgathered.shape[-1]))
    grads = encoder_backward(params, cache, dhidden)
    grads["cls.w"] += gw
    grads["cls.b"] += gb
    return grads


def predict(params: ModelParams, examples: Sequence[EncodedExample], batch_size: int = 64,
            pad_id: int = 0) -> list[np.ndarray]:
    """Eval-mode argmax class per word (ties go to the smallest index)."""
    out = []
    for i in range(0, len(examples), batch_size):
        chunk = examples[i : i + batch_size]
        logits, _ = forward(params, collate(chunk, pad_id))
        pred = logits.argmax(-1)
        out.extend(pred[b, : e.num_words].copy() for b, e in enumerate(chunk))
    return out


# ---------------------------------------------------------------------------
# optimisation


@dataclass
class AdamState:
    total_steps: int
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def scheduled_lr(base_lr: float, step: int, total_steps: int) -> float:
    """Linear decay from ``base_lr`` at step 0 to zero at ``total_steps``."""
    if total_steps <= 0:
        return base_lr
    return base_lr * max(0.0, 1.0 - step / total_steps)


def optimizer_step(params: ModelParams, grads: dict[str, np.ndarray], state: AdamState,
                   learning_rate: float) -> tuple[ModelParams, AdamState]:
    """One Adam update. Returns new params; the input params are left untouched."""
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient in {name!r} at step {state.step}")
        if g.shape != params[name].shape:
            raise ConfigError(f"gradient shape {g.shape} != parameter shape {params[name].shape} for {name!r}")
    lr = scheduled_lr(learning_rate, state.step, state.total_steps)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    new = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            new[name] = p
            continue
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        # overflow is reported below as a TrainingError rather than a numpy warning
        with np.errstate(over="ignore", invalid="ignore"):
            new[name] = (p - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype, copy=False)
    out = ModelParams(params.config, new, params.vocab_fingerprint)
    if not out.all_finite():
        raise TrainingError(f"parameters became non-finite at step {state.step}")
    return out, state


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(params: ModelParams, path: str | Path) -> None:
    meta = {
        "format": "discst-checkpoint",
        "version": CHECKPOINT_VERSION,
        "config": params.config.to_dict(),
        "vocab_fingerprint": params.vocab_fingerprint,
        "names": sorted(params.tensors),
    }
    arrays = {"tensor/" + k: v for k, v in params.tensors.items()}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def load_checkpoint(path: str | Path) -> ModelParams:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        if meta.get("format") != "discst-checkpoint":
            raise DataError(f"{path} is not a checkpoint file")
        if meta["version"] != CHECKPOINT_VERSION:
            raise DataError(f"unsupported checkpoint version {meta['version']}")
        tensors = {name: data["tensor/" + name].copy() for name in meta["names"]}
    return ModelParams(ModelConfig(**meta["config"]), tensors, meta["vocab_fingerprint"])
