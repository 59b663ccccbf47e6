"""Double-overlap sliding-window decoding for sequences longer than the model window.

Windows of ``W`` subwords advance by ``S = W - Lo - Ro``. Each window only
contributes predictions for the span where it has ``Lo`` tokens of left and
``Ro`` tokens of right context; the first window keeps everything up to its
right margin and the last window is pulled back to end exactly at ``T`` and
keeps everything after the previous keep range.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .corpus import EncodedExample
from .errors import ConfigError
from .model import ModelParams, collate, forward


@dataclass(frozen=True)
class WindowSpec:
    window: int = 120
    left_overlap: int = 35
    right_overlap: int = 15

    def __post_init__(self):
        if self.window < 1 or self.left_overlap < 0 or self.right_overlap < 0:
            raise ConfigError(f"invalid window geometry {self}")
        if self.step < 1:
            raise ConfigError(
                f"step = window - left_overlap - right_overlap must be >= 1, got {self.step} for {self}"
            )

    @property
    def step(self) -> int:
        return self.window - self.left_overlap - self.right_overlap


def half_window_spec(window: int) -> WindowSpec:
    """Fixed half-window stepping: equal overlaps of W/4 on both sides, step W/2."""
    quarter = window // 4
    return WindowSpec(window, quarter, quarter)


class Window(NamedTuple):
    start: int
    end: int
    keep_start: int
    keep_end: int


def plan_table(lengths, spec: WindowSpec) -> tuple[np.ndarray, np.ndarray]:
    """Window plans for many sequence lengths at once.

    Returns ``(owner, table)``: ``table`` has one row ``(start, end,
    keep_start, keep_end)`` per window, rows grouped by sequence in order,
    and ``owner[i]`` is the index into ``lengths`` that row ``i`` belongs to.
    """
    T = np.asarray(lengths, dtype=np.int64).ravel()
    if np.any(T < 1):
        raise ConfigError(f"sequence length must be >= 1, got {int(T.min())}")
    W, Lo, Ro, S = spec.window, spec.left_overlap, spec.right_overlap, spec.step
    long = T > W
    # windows k = 1..K start at k*S and end before T; one more window is pulled back to end at T
    K = np.where(long, (T - W - 1) // S, 0)
    n = np.where(long, K + 2, 1)
    owner = np.repeat(np.arange(len(T)), n)
    k = np.arange(int(n.sum())) - np.repeat(np.cumsum(n) - n, n)
    Tw = T[owner]
    start = k * S
    end = start + W
    keep_start = np.where(k == 0, 0, start + Lo)
    keep_end = end - Ro
    last = long[owner] & (k == n[owner] - 1)
    start = np.where(last, Tw - W, start)
    keep_start = np.where(last, K[owner] * S + W - Ro, keep_start)
    end = np.where(last, Tw, end)
    keep_end = np.where(last, Tw, keep_end)
    short = ~long[owner]
    start = np.where(short, 0, start)
    end = np.where(short, Tw, end)
    keep_start = np.where(short, 0, keep_start)
    keep_end = np.where(short, Tw, keep_end)
    return owner, np.stack([start, end, keep_start, keep_end], axis=1)


def plan_windows(T: int, spec: WindowSpec) -> list[Window]:
    _, table = plan_table([T], spec)
    return [Window(*row) for row in table.tolist()]


def check_plan(T: int, plan: Sequence[Window]) -> None:
    """Raise AssertionError unless keep ranges tile [0, T) inside their windows."""
    pos = 0
    for w in plan:
        assert 0 <= w.start <= w.keep_start < w.keep_end <= w.end <= T, w
        assert w.keep_start == pos, (w, pos)
        pos = w.keep_end
    assert pos == T, (pos, T)


def _window_pieces(example: EncodedExample, plan: Sequence[Window]):
    """Sub-examples holding, per window, the words whose last subtoken it keeps."""
    last = example.last_subtoken_index
    pieces = []
    for w in plan:
        lo = np.searchsorted(last, w.keep_start, side="left")
        hi = np.searchsorted(last, w.keep_end, side="left")
        if hi == lo:
            continue
        sub = EncodedExample(example.subword_ids[w.start : w.end], last[lo:hi] - w.start, None)
        pieces.append((lo, hi, sub))
    return pieces


def decode_many(params: ModelParams, examples: Sequence[EncodedExample], spec: WindowSpec,
                batch_size: int = 64, pad_id: int = 0) -> list[np.ndarray]:
    """Argmax class per word for each example, windows batched by length."""
    if spec.window > params.config.max_positions:
        raise ConfigError(f"window {spec.window} exceeds max_positions={params.config.max_positions}")
    outputs = [np.zeros(e.num_words, dtype=np.int64) for e in examples]
    jobs = []
    for i, ex in enumerate(examples):
        for lo, hi, sub in _window_pieces(ex, plan_windows(len(ex), spec)):
            jobs.append((len(sub), i, lo, hi, sub))
    # equal-length windows share a batch so no padding is involved
    jobs.sort(key=lambda j: (j[0], j[1], j[2]))
    for _, same_len in itertools.groupby(jobs, key=lambda j: j[0]):
        same_len = list(same_len)
        for start in range(0, len(same_len), batch_size):
            group = same_len[start : start + batch_size]
            logits, _ = forward(params, collate([j[4] for j in group], pad_id))
            pred = logits.argmax(-1)
            for b, (_, i, lo, hi, _) in enumerate(group):
                outputs[i][lo:hi] = pred[b, : hi - lo]
    return outputs


def decode_long(params: ModelParams, encoded: EncodedExample, spec: WindowSpec, pad_id: int = 0) -> np.ndarray:
    return decode_many(params, [encoded], spec, pad_id=pad_id)[0]
