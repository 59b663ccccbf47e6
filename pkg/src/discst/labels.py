"""Punctuation label inventory and the two supported label-set modes."""

from __future__ import annotations

import enum
from dataclasses import dataclass


class PunctLabel(enum.IntEnum):
    """Punctuation mark that follows a word. The integer value is the class index."""

    NONE = 0
    COMMA = 1
    PERIOD = 2
    QUESTION = 3
    ENUM_COMMA = 4


class Source(enum.Enum):
    HUMAN = "human"
    PSEUDO = "pseudo"


# Characters recognised as each mark. Full-width forms map onto the same classes.
MARK_CHARS = {
    PunctLabel.COMMA: (",", "，"),
    PunctLabel.PERIOD: (".", "。"),
    PunctLabel.QUESTION: ("?", "？"),
    PunctLabel.ENUM_COMMA: ("、",),
}

# Canonical character used when rendering a label back into text.
RENDER_CHAR = {
    PunctLabel.NONE: "",
    PunctLabel.COMMA: ",",
    PunctLabel.PERIOD: ".",
    PunctLabel.QUESTION: "?",
    PunctLabel.ENUM_COMMA: "、",
}


@dataclass(frozen=True)
class LabelSet:
    """The active classes of a run; ``labels[i]`` has class index ``i``."""

    name: str
    labels: tuple[PunctLabel, ...]

    @property
    def num_classes(self) -> int:
        return len(self.labels)

    @property
    def punct_labels(self) -> tuple[PunctLabel, ...]:
        return tuple(lab for lab in self.labels if lab != PunctLabel.NONE)

    def char_map(self) -> dict[str, PunctLabel]:
        out = {}
        for lab in self.punct_labels:
            for ch in MARK_CHARS[lab]:
                out[ch] = lab
        return out

    def __contains__(self, label) -> bool:
        return label in self.labels


ENGLISH4 = LabelSet(
    "english4",
    (PunctLabel.NONE, PunctLabel.COMMA, PunctLabel.PERIOD, PunctLabel.QUESTION),
)
CHINESE5 = LabelSet("chinese5", ENGLISH4.labels + (PunctLabel.ENUM_COMMA,))

LABEL_SETS = {ENGLISH4.name: ENGLISH4, CHINESE5.name: CHINESE5}


def get_label_set(name: str | LabelSet) -> LabelSet:
    if isinstance(name, LabelSet):
        return name
    try:
        return LABEL_SETS[name]
    except KeyError:
        raise ValueError(f"unknown label set {name!r}; expected one of {sorted(LABEL_SETS)}") from None
