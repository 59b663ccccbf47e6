"""Synthetic punctuated-transcript benchmark.

Punctuation is a deterministic function of local trigger words, and labeled
splits additionally receive random label corruption:

* a sentence ends with ``?`` when it opens with a question word or an
  auxiliary (question sentences are at most five words long), otherwise
  with ``.``;
* a sentence-initial discourse marker (``so``, ``well``, ...) is followed by ``,``;
* the word before a clause-joining ``but`` takes ``,``;
* list items are separated by ``,`` (or the enumeration comma in chinese5 mode).

Content nouns follow a Zipf distribution over a large inventory of made-up
words, so much of the tail shows up in the unlabeled stream but never in the
labeled training split.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import LabeledExample
from .labels import ENGLISH4, LabelSet, PunctLabel, Source, get_label_set

SUBJECTS = ("i", "we", "they", "you", "he", "she", "people", "everyone", "someone", "nobody")
VERBS = (
    "think", "know", "said", "went", "like", "want", "need", "saw", "made", "took", "found",
    "gave", "told", "used", "tried", "left", "felt", "kept", "brought", "began", "showed", "heard",
    "played", "moved", "paid", "met", "learned", "changed", "bought", "built", "wrote", "read",
    "sold", "opened", "closed", "carried", "watched", "followed", "stopped", "created",
)
QUESTION_OPENERS = ("what", "why", "how", "where", "when", "who", "do", "did", "can", "could", "would", "is", "are")
MARKERS = ("so", "well", "however", "actually", "okay", "now", "anyway", "honestly")
DETERMINERS = ("the", "a", "this", "that", "my", "your", "our", "some")
ADJECTIVES = (
    "big", "small", "old", "new", "good", "bad", "long", "short", "great", "little", "young",
    "important", "different", "large", "local", "social", "real", "strong", "whole", "free",
)
PREPOSITIONS = ("in", "on", "at", "with", "from", "about", "for", "into", "over", "after")
ADVERBS = ("really", "just", "also", "never", "often", "always", "still", "maybe")

_ONSETS = ("b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st", "pl", "gr", "sh", "tr")
_VOWELS = ("a", "e", "i", "o", "u", "ai", "ou", "ee")
_CODAS = ("", "n", "r", "s", "t", "m", "nd", "rk", "ll", "x")


def make_nouns(n: int, rng: np.random.Generator) -> list[str]:
    """Distinct pronounceable nonce words, 1-4 syllables."""
    reserved = set(SUBJECTS + VERBS + QUESTION_OPENERS + MARKERS + DETERMINERS + ADJECTIVES
                   + PREPOSITIONS + ADVERBS + ("but", "and", "because"))
    out: list[str] = []
    seen = set()
    while len(out) < n:
        k = int(rng.integers(1, 5))
        w = "".join(
            _ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))] + _CODAS[rng.integers(len(_CODAS))]
            for _ in range(k)
        )
        if w not in seen and w not in reserved:
            seen.add(w)
            out.append(w)
    return out


@dataclass
class SyntheticLanguage:
    """Sentence generator over a fixed lexicon."""

    label_set: LabelSet
    nouns: list[str]
    noun_probs: np.ndarray
    list_prob: float = 0.12
    but_prob: float = 0.2
    and_prob: float = 0.15
    marker_prob: float = 0.2
    question_prob: float = 0.25

    @classmethod
    def create(cls, seed: int = 0, num_nouns: int = 4000, zipf: float = 1.05,
               label_set: LabelSet | str = ENGLISH4) -> "SyntheticLanguage":
        rng = np.random.default_rng(seed)
        nouns = make_nouns(num_nouns, rng)
        weights = 1.0 / np.arange(1, num_nouns + 1) ** zipf
        return cls(get_label_set(label_set), nouns, weights / weights.sum())

    def __post_init__(self):
        self._cdf = np.cumsum(self.noun_probs)
        self._cdf[-1] = 1.0

    def _noun(self, rng) -> str:
        return self.nouns[int(np.searchsorted(self._cdf, rng.random(), side="right"))]

    def _noun_phrase(self, rng, words, labels):
        if rng.random() < 0.7:
            words.append(DETERMINERS[rng.integers(len(DETERMINERS))])
            labels.append(PunctLabel.NONE)
        if rng.random() < 0.3:
            words.append(ADJECTIVES[rng.integers(len(ADJECTIVES))])
            labels.append(PunctLabel.NONE)
        words.append(self._noun(rng))
        labels.append(PunctLabel.NONE)

    def _object(self, rng, words, labels):
        if rng.random() < self.list_prob:
            sep = PunctLabel.ENUM_COMMA if PunctLabel.ENUM_COMMA in self.label_set else PunctLabel.COMMA
            n_items = int(rng.integers(3, 5))
            for j in range(n_items):
                if j == n_items - 1:
                    words.append("and")
                    labels.append(PunctLabel.NONE)
                words.append(self._noun(rng))
                labels.append(sep if j < n_items - 2 else PunctLabel.NONE)
        else:
            self._noun_phrase(rng, words, labels)
        if rng.random() < 0.3:
            words.append(PREPOSITIONS[rng.integers(len(PREPOSITIONS))])
            labels.append(PunctLabel.NONE)
            self._noun_phrase(rng, words, labels)

    def _clause(self, rng, words, labels):
        words.append(SUBJECTS[rng.integers(len(SUBJECTS))])
        labels.append(PunctLabel.NONE)
        if rng.random() < 0.25:
            words.append(ADVERBS[rng.integers(len(ADVERBS))])
            labels.append(PunctLabel.NONE)
        words.append(VERBS[rng.integers(len(VERBS))])
        labels.append(PunctLabel.NONE)
        self._object(rng, words, labels)

    def sentence(self, rng: np.random.Generator) -> tuple[list[str], list[PunctLabel]]:
        words: list[str] = []
        labels: list[PunctLabel] = []
        if rng.random() < self.question_prob:
            # short on purpose: the opener stays within a few words of the mark
            words.append(QUESTION_OPENERS[rng.integers(len(QUESTION_OPENERS))])
            words.append(SUBJECTS[rng.integers(len(SUBJECTS))])
            words.append(VERBS[rng.integers(len(VERBS))])
            labels += [PunctLabel.NONE] * 3
            if rng.random() < 0.5:
                words.append(DETERMINERS[rng.integers(len(DETERMINERS))])
                labels.append(PunctLabel.NONE)
            words.append(self._noun(rng))
            labels.append(PunctLabel.QUESTION)
            return words, labels
        if rng.random() < self.marker_prob:
            words.append(MARKERS[rng.integers(len(MARKERS))])
            labels.append(PunctLabel.COMMA)
        self._clause(rng, words, labels)
        r = rng.random()
        if r < self.but_prob:
            labels[-1] = PunctLabel.COMMA
            words.append("but")
            labels.append(PunctLabel.NONE)
            self._clause(rng, words, labels)
        elif r < self.but_prob + self.and_prob:
            words.append("and")
            labels.append(PunctLabel.NONE)
            self._clause(rng, words, labels)
        labels[-1] = PunctLabel.PERIOD
        return words, labels

    def paragraph(self, rng: np.random.Generator, min_sentences: int = 6,
                  max_sentences: int = 20) -> tuple[list[str], list[PunctLabel]]:
        words: list[str] = []
        labels: list[PunctLabel] = []
        for _ in range(int(rng.integers(min_sentences, max_sentences + 1))):
            w, lab = self.sentence(rng)
            words += w
            labels += lab
        return words, labels


def corrupt_labels(labels, noise: float, label_set: LabelSet, rng: np.random.Generator) -> list[PunctLabel]:
    """Replace each label, with probability ``noise``, by a different random class."""
    classes = list(label_set.labels)
    out = list(labels)
    for j, lab in enumerate(out):
        if rng.random() < noise:
            out[j] = classes[(classes.index(lab) + int(rng.integers(1, len(classes)))) % len(classes)]
    return out


@dataclass
class SyntheticBenchmark:
    train: list[LabeledExample]
    dev: list[LabeledExample]
    test: list[LabeledExample]
    unlabeled: list[list[str]]
    label_set: LabelSet
    clean_test: list[LabeledExample]

    @staticmethod
    def num_words(examples) -> int:
        return sum(len(e.words) if isinstance(e, LabeledExample) else len(e) for e in examples)


def generate_benchmark(
    train_words: int = 50_000,
    unlabeled_words: int = 500_000,
    dev_words: int = 30_000,
    test_words: int = 10_000,
    noise: float = 0.05,
    seed: int = 0,
    label_set: LabelSet | str = ENGLISH4,
    num_nouns: int = 4000,
    punct_noise_only: bool = True,
) -> SyntheticBenchmark:
    """Generate train/dev/test (noisy labels) plus an unlabeled word stream.

    With ``punct_noise_only`` the corruption is applied to punctuated
    positions only (marks dropped or swapped), which is the usual character
    of annotation noise. ``clean_test`` holds the uncorrupted test labels.
    """
    label_set = get_label_set(label_set)
    lang = SyntheticLanguage.create(seed, num_nouns=num_nouns, label_set=label_set)
    rng = np.random.default_rng([seed, 1])

    def split(n_words, noisy):
        examples, clean = [], []
        total = 0
        while total < n_words:
            words, labels = lang.paragraph(rng)
            clean.append(LabeledExample(tuple(words), tuple(labels), Source.HUMAN))
            if noisy and noise > 0:
                if punct_noise_only:
                    noisy_labels = list(labels)
                    for j, lab in enumerate(labels):
                        if lab != PunctLabel.NONE and rng.random() < noise:
                            noisy_labels[j] = corrupt_labels([lab], 1.0, label_set, rng)[0]
                else:
                    noisy_labels = corrupt_labels(labels, noise, label_set, rng)
                labels = noisy_labels
            examples.append(LabeledExample(tuple(words), tuple(labels), Source.HUMAN))
            total += len(words)
        return examples, clean

    train, _ = split(train_words, True)
    dev, _ = split(dev_words, True)
    test, clean_test = split(test_words, True)
    unlabeled = []
    total = 0
    while total < unlabeled_words:
        words, _ = lang.paragraph(rng)
        unlabeled.append(words)
        total += len(words)
    return SyntheticBenchmark(train, dev, test, unlabeled, label_set, clean_test)
