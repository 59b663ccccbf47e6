"""Corpus ingestion: punctuated text to word/label sequences, subword vocabulary, encoding.

Text is split on whitespace; every target punctuation mark becomes the label of
the word before it. Words are then encoded with greedy longest-match subword
pieces, and each word is represented downstream by its last piece.
"""

from __future__ import annotations

import collections
import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .labels import ENGLISH4, RENDER_CHAR, LabelSet, PunctLabel, Source, get_label_set

logger = logging.getLogger(__name__)

PAD, UNK, MASK = "[PAD]", "[UNK]", "[MASK]"
SPECIALS = (PAD, UNK, MASK)
CONTINUATION = "##"


@dataclass(frozen=True)
class LabeledExample:
    words: tuple[str, ...]
    labels: tuple[PunctLabel, ...]
    source: Source = Source.HUMAN

    def __post_init__(self):
        if len(self.words) == 0:
            raise DataError("example must contain at least one word")
        if len(self.words) != len(self.labels):
            raise DataError(f"{len(self.words)} words but {len(self.labels)} labels")


@dataclass(frozen=True, eq=False)
class EncodedExample:
    """Subword ids plus, for each word, the index of its final piece.

    ``labels`` may be None for unlabeled input. ``label_mask`` marks which word
    positions carry a training target; None means all of them.
    """

    subword_ids: np.ndarray
    last_subtoken_index: np.ndarray
    labels: np.ndarray | None
    source: Source = Source.HUMAN
    label_mask: np.ndarray | None = None

    @property
    def num_words(self) -> int:
        return len(self.last_subtoken_index)

    def __len__(self) -> int:
        return len(self.subword_ids)

    def target_mask(self) -> np.ndarray:
        if self.label_mask is None:
            return np.ones(self.num_words, dtype=bool)
        return self.label_mask

    def __eq__(self, other):
        if not isinstance(other, EncodedExample):
            return NotImplemented

        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.dtype == b.dtype and np.array_equal(a, b)

        return (
            self.source == other.source
            and same(self.subword_ids, other.subword_ids)
            and same(self.last_subtoken_index, other.last_subtoken_index)
            and same(self.labels, other.labels)
            and same(self.label_mask, other.label_mask)
        )


# ---------------------------------------------------------------------------
# parsing


def parse_punctuated_text(
    text: str,
    label_set: LabelSet | str = ENGLISH4,
    lowercase: bool = True,
    stats: collections.Counter | None = None,
) -> list[LabeledExample]:
    """Parse punctuated text, one example per non-empty line.

    A run of consecutive marks (whitespace allowed in between) is reduced to
    its first mark. Marks with no preceding word on the line are dropped.
    """
    label_set = get_label_set(label_set)
    marks = label_set.char_map()
    out = []
    for line in text.splitlines():
        if lowercase:
            line = line.lower()
        words: list[str] = []
        labels: list[PunctLabel] = []
        current: list[str] = []
        # True between the end of a word and the first mark that follows it
        open_slot = False
        for ch in line:
            if ch in marks or ch.isspace():
                if current:
                    words.append("".join(current))
                    labels.append(PunctLabel.NONE)
                    current = []
                    open_slot = True
                if ch in marks and open_slot:
                    labels[-1] = marks[ch]
                    open_slot = False
            else:
                current.append(ch)
        if current:
            words.append("".join(current))
            labels.append(PunctLabel.NONE)
        if not words:
            if stats is not None:
                stats["skipped_empty"] += 1
            if line.strip():
                logger.warning("skipping line with no words: %r", line[:40])
            continue
        out.append(LabeledExample(tuple(words), tuple(labels)))
    return out


def render(example: LabeledExample) -> str:
    """Inverse of parsing for a single example: words joined by spaces, marks attached."""
    return " ".join(w + RENDER_CHAR[lab] for w, lab in zip(example.words, example.labels))


def strip_labels(example: LabeledExample) -> LabeledExample:
    return LabeledExample(example.words, (PunctLabel.NONE,) * len(example.words), example.source)


# ---------------------------------------------------------------------------
# vocabulary


class Vocabulary:
    """Subword inventory with greedy longest-match word encoding.

    Pieces that continue a word carry the ``##`` prefix. Every character seen
    while building is present both as a word-initial and a continuation piece,
    so any word made of known characters encodes without UNK.
    """

    def __init__(self, subwords: Sequence[str]):
        self.subwords = list(subwords)
        if tuple(self.subwords[: len(SPECIALS)]) != SPECIALS:
            raise ConfigError(f"vocabulary must start with specials {SPECIALS}")
        self.ids = {s: i for i, s in enumerate(self.subwords)}
        if len(self.ids) != len(self.subwords):
            raise ConfigError("duplicate subwords in vocabulary")
        self.pad_id, self.unk_id, self.mask_id = (self.ids[s] for s in SPECIALS)
        self._max_piece = max(len(s) for s in self.subwords)
        self._cache: dict[str, tuple[int, ...]] = {}

    def __len__(self) -> int:
        return len(self.subwords)

    def __contains__(self, piece: str) -> bool:
        return piece in self.ids

    def encode_word(self, word: str) -> tuple[int, ...]:
        cached = self._cache.get(word)
        if cached is not None:
            return cached
        if word in self.ids and word not in SPECIALS:
            pieces = (self.ids[word],)
        else:
            pieces = self._greedy(word)
        self._cache[word] = pieces
        return pieces

    def _greedy(self, word: str) -> tuple[int, ...]:
        pieces = []
        start = 0
        while start < len(word):
            prefix = CONTINUATION if start else ""
            end = min(len(word), start + self._max_piece)
            while end > start:
                cand = prefix + word[start:end]
                if cand in self.ids and cand not in SPECIALS:
                    pieces.append(self.ids[cand])
                    break
                end -= 1
            else:
                pieces.append(self.unk_id)
                end = start + 1
            start = end
        if not pieces:
            pieces.append(self.unk_id)
        return tuple(pieces)

    def decode(self, ids: Iterable[int]) -> str:
        """Join pieces back into a single word (continuation prefixes removed)."""
        out = []
        for i in ids:
            s = self.subwords[int(i)]
            out.append(s[len(CONTINUATION):] if s.startswith(CONTINUATION) else s)
        return "".join(out)

    def fingerprint(self) -> str:
        return hashlib.sha256("\n".join(self.subwords).encode("utf-8")).hexdigest()

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.subwords) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(lines)


def build_vocabulary(corpus: Iterable[str], max_size: int = 8000, min_freq: int = 1) -> Vocabulary:
    """Build a vocabulary from a stream of word tokens.

    Layout: specials, then the most frequent whole words (ties broken
    lexicographically), then the per-character fallback pieces.
    """
    counts = collections.Counter(corpus)
    if not counts:
        raise ConfigError("cannot build a vocabulary from an empty corpus")
    chars = sorted({ch for w in counts for ch in w})
    fallback = []
    for ch in chars:
        fallback.append(ch)
        fallback.append(CONTINUATION + ch)
    budget = max_size - len(SPECIALS) - len(fallback)
    if budget < 0:
        raise ConfigError(
            f"max_size={max_size} cannot hold {len(SPECIALS)} specials "
            f"+ {len(fallback)} character pieces"
        )
    fallback_set = set(fallback)
    ranked = sorted(
        (w for w, c in counts.items() if c >= min_freq and w not in fallback_set and w not in SPECIALS),
        key=lambda w: (-counts[w], w),
    )
    return Vocabulary(list(SPECIALS) + ranked[:budget] + fallback)


# ---------------------------------------------------------------------------
# encoding


def encode_words(
    words: Sequence[str],
    vocab: Vocabulary,
    labels: Sequence[int] | None = None,
    source: Source = Source.HUMAN,
) -> EncodedExample:
    ids: list[int] = []
    last = np.empty(len(words), dtype=np.int64)
    for j, w in enumerate(words):
        ids.extend(vocab.encode_word(w))
        last[j] = len(ids) - 1
    lab = None if labels is None else np.asarray([int(x) for x in labels], dtype=np.int64)
    return EncodedExample(np.asarray(ids, dtype=np.int64), last, lab, source)


def encode(example: LabeledExample, vocab: Vocabulary) -> EncodedExample:
    return encode_words(example.words, vocab, example.labels, example.source)


def chunk_for_training(
    example: EncodedExample,
    max_len: int,
    overlap: int = 0,
    stats: collections.Counter | None = None,
) -> list[EncodedExample]:
    """Split an encoded example into model-length chunks at word boundaries.

    Each chunk carries up to ``overlap`` subwords of preceding words as
    unlabeled left context (``label_mask`` False) followed by the words it owns.
    Every word position is owned by exactly one chunk.
    """
    if not max_len > overlap >= 0:
        raise ConfigError(f"need max_len > overlap >= 0, got max_len={max_len}, overlap={overlap}")
    if len(example) <= max_len:
        return [example]

    # per-word piece ranges, truncating words longer than max_len
    starts = np.concatenate([[0], example.last_subtoken_index[:-1] + 1])
    pieces = []
    for s, e in zip(starts, example.last_subtoken_index + 1):
        ids = example.subword_ids[s:e]
        if len(ids) > max_len:
            if stats is not None:
                stats["truncated_words"] += 1
            logger.warning("truncating a %d-piece word to max_len=%d", len(ids), max_len)
            ids = np.concatenate([ids[: max_len - 1], ids[-1:]])
        pieces.append(ids)
    lengths = np.array([len(p) for p in pieces])
    offset = np.concatenate([[0], np.cumsum(lengths)])
    n = len(pieces)
    base_mask = example.target_mask()

    chunks = []
    ctx, own = 0, 0
    while own < n:
        # shrink context until at least the first owned word fits
        while offset[own + 1] - offset[ctx] > max_len:
            ctx += 1
        end = own + 1
        while end < n and offset[end + 1] - offset[ctx] <= max_len:
            end += 1
        ids = np.concatenate(pieces[ctx:end])
        last = offset[ctx + 1 : end + 1] - offset[ctx] - 1
        mask = base_mask[ctx:end].copy()
        mask[: own - ctx] = False
        labels = None if example.labels is None else example.labels[ctx:end].copy()
        chunks.append(EncodedExample(ids.astype(np.int64), last.astype(np.int64), labels, example.source, mask))
        own = end
        ctx = own
        while ctx > 0 and offset[own] - offset[ctx - 1] <= overlap:
            ctx -= 1
    return chunks


# ---------------------------------------------------------------------------
# file formats


def read_text_corpus(path: str | Path, label_set: LabelSet | str = ENGLISH4, lowercase: bool = True,
                     stats: collections.Counter | None = None) -> list[LabeledExample]:
    return parse_punctuated_text(Path(path).read_text(encoding="utf-8"), label_set, lowercase, stats)


def write_tsv(examples: Iterable[LabeledExample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for k, ex in enumerate(examples):
            if k:
                fh.write("\n")
            for w, lab in zip(ex.words, ex.labels):
                fh.write(f"{w}\t{PunctLabel(lab).name}\n")


def read_tsv(path: str | Path, source: Source = Source.HUMAN) -> list[LabeledExample]:
    examples = []
    words, labels = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                if words:
                    examples.append(LabeledExample(tuple(words), tuple(labels), source))
                    words, labels = [], []
                continue
            try:
                word, name = line.split("\t")
                labels.append(PunctLabel[name])
            except (ValueError, KeyError):
                raise DataError(f"{path}:{lineno}: expected 'token<TAB>LABEL', got {line!r}") from None
            words.append(word)
    if words:
        examples.append(LabeledExample(tuple(words), tuple(labels), source))
    return examples


def read_unpunctuated(path: str | Path, lowercase: bool = True) -> list[list[str]]:
    """Whitespace-tokenised lines of raw text; blank lines are skipped."""
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        words = (line.lower() if lowercase else line).split()
        if words:
            out.append(words)
    return out


def label_histogram(examples: Iterable[LabeledExample]) -> dict[str, int]:
    counts = collections.Counter(PunctLabel(lab).name for ex in examples for lab in ex.labels)
    return dict(sorted(counts.items()))
