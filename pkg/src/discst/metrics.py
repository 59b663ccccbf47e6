"""Token-based precision / recall / F1 over punctuation classes, and a paired randomization test."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .labels import ENGLISH4, LabelSet, PunctLabel, get_label_set

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClassScores:
    precision: float
    recall: float
    f1: float
    tp: int = 0
    n_pred: int = 0
    n_gold: int = 0


@dataclass
class Metrics:
    per_class: dict[str, ClassScores]
    overall: ClassScores
    average: str = "micro"
    zero_division: list[str] = field(default_factory=list)

    @property
    def f1(self) -> float:
        return self.overall.f1

    def to_dict(self) -> dict:
        def block(s: ClassScores):
            return {"precision": s.precision, "recall": s.recall, "f1": s.f1,
                    "tp": s.tp, "n_pred": s.n_pred, "n_gold": s.n_gold}

        return {
            "average": self.average,
            "per_class": {k: block(v) for k, v in self.per_class.items()},
            "overall": block(self.overall),
            "zero_division": list(self.zero_division),
        }

    def to_text(self) -> str:
        lines = [f"average = {self.average}"]
        for name, s in list(self.per_class.items()) + [("OVERALL", self.overall)]:
            lines.append(f"[{name}]")
            lines.append(f"precision = {s.precision:.6f}")
            lines.append(f"recall = {s.recall:.6f}")
            lines.append(f"f1 = {s.f1:.6f}")
            lines.append(f"tp = {s.tp}")
            lines.append(f"n_pred = {s.n_pred}")
            lines.append(f"n_gold = {s.n_gold}")
        if self.zero_division:
            lines.append(f"zero_division = {','.join(self.zero_division)}")
        return "\n".join(lines) + "\n"

    def table(self, name: str = "model") -> str:
        """One row, percentages, P/R/F1 per class then Overall."""
        cols = list(self.per_class) + ["Overall"]
        scores = list(self.per_class.values()) + [self.overall]
        head1 = f"{'Model':<28}" + "".join(f"| {c.title():^20} " for c in cols)
        head2 = f"{'':<28}" + "".join(f"| {'P':>6}{'R':>7}{'F1':>7} " for _ in cols)
        row = f"{name:<28}" + "".join(
            f"| {100 * s.precision:6.1f}{100 * s.recall:7.1f}{100 * s.f1:7.1f} " for s in scores
        )
        return "\n".join([head1, head2, row])


def _f1(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def _flatten(pred, gold) -> tuple[np.ndarray, np.ndarray]:
    pred = list(pred)
    gold = list(gold)
    if len(pred) != len(gold):
        raise DataError(f"{len(pred)} predicted sequences but {len(gold)} gold sequences")
    if not pred:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    if np.ndim(pred[0]) == 0:
        return np.asarray(pred, dtype=np.int64), np.asarray(gold, dtype=np.int64)
    for i, (p, g) in enumerate(zip(pred, gold)):
        if len(p) != len(g):
            raise DataError(f"sequence {i}: {len(p)} predicted labels but {len(g)} gold labels")
    return (np.concatenate([np.asarray(p, dtype=np.int64) for p in pred]),
            np.concatenate([np.asarray(g, dtype=np.int64) for g in gold]))


def score(pred, gold, label_set: LabelSet | str = ENGLISH4, average: str = "micro") -> Metrics:
    """Per-class and overall P/R/F1 over the non-NONE classes.

    ``pred`` and ``gold`` are parallel lists of label sequences (or two flat
    sequences). Zero denominators give 0 and are listed in ``zero_division``.
    """
    if average not in ("micro", "macro"):
        raise ConfigError(f"average must be 'micro' or 'macro', got {average!r}")
    label_set = get_label_set(label_set)
    p, g = _flatten(pred, gold)
    flags = []
    per_class = {}
    tp_sum = pred_sum = gold_sum = 0
    for lab in label_set.punct_labels:
        c = int(lab)
        tp = int(np.sum((p == c) & (g == c)))
        n_pred = int(np.sum(p == c))
        n_gold = int(np.sum(g == c))
        if n_pred == 0:
            flags.append(f"{lab.name}.precision")
        if n_gold == 0:
            flags.append(f"{lab.name}.recall")
        prec = tp / n_pred if n_pred else 0.0
        rec = tp / n_gold if n_gold else 0.0
        per_class[lab.name] = ClassScores(prec, rec, _f1(prec, rec), tp, n_pred, n_gold)
        tp_sum += tp
        pred_sum += n_pred
        gold_sum += n_gold
    if average == "micro":
        if pred_sum == 0:
            flags.append("overall.precision")
        if gold_sum == 0:
            flags.append("overall.recall")
        prec = tp_sum / pred_sum if pred_sum else 0.0
        rec = tp_sum / gold_sum if gold_sum else 0.0
        f1 = _f1(prec, rec)
    else:
        prec = float(np.mean([s.precision for s in per_class.values()]))
        rec = float(np.mean([s.recall for s in per_class.values()]))
        f1 = float(np.mean([s.f1 for s in per_class.values()]))
    overall = ClassScores(prec, rec, f1, tp_sum, pred_sum, gold_sum)
    return Metrics(per_class, overall, average, flags)


def paired_significance(pred_a, pred_b, gold, trials: int = 10000, seed: int = 0,
                        label_set: LabelSet | str = ENGLISH4) -> float:
    """Two-sided approximate-randomization p-value for the overall micro-F1 difference.

    Under the null, the two systems' predictions are exchangeable at every
    token, so each trial swaps A and B independently per token with
    probability 1/2.
    """
    if trials < 1000:
        raise ConfigError(f"trials must be >= 1000, got {trials}")
    label_set = get_label_set(label_set)
    a, g = _flatten(pred_a, gold)
    b, g2 = _flatten(pred_b, gold)
    if len(a) != len(b):
        raise DataError("pred_a and pred_b differ in length")
    punct = np.isin(g, [int(x) for x in label_set.punct_labels])
    # per-token contributions to the micro counts: true positive, predicted positive
    tp_a = ((a == g) & punct).astype(np.int64)
    tp_b = ((b == g) & punct).astype(np.int64)
    pp_a = (a != int(PunctLabel.NONE)).astype(np.int64)
    pp_b = (b != int(PunctLabel.NONE)).astype(np.int64)
    n_gold = int(punct.sum())

    def f1(tp, pp):
        denom = pp + n_gold
        return np.where(denom > 0, 2.0 * tp / np.maximum(denom, 1), 0.0)

    observed = abs(f1(tp_a.sum(), pp_a.sum()) - f1(tp_b.sum(), pp_b.sum()))
    diff = (tp_a != tp_b) | (pp_a != pp_b)
    if not diff.any():
        return 1.0
    da_tp, db_tp = tp_a[diff], tp_b[diff]
    da_pp, db_pp = pp_a[diff], pp_b[diff]
    base_tp, base_pp = tp_a[~diff].sum(), pp_a[~diff].sum()
    rng = np.random.default_rng(seed)
    hits = 0
    chunk = max(1, min(trials, 2_000_000 // max(1, int(diff.sum()))))
    done = 0
    while done < trials:
        n = min(chunk, trials - done)
        swap = rng.random((n, len(da_tp))) < 0.5
        tp1 = base_tp + np.where(swap, db_tp, da_tp).sum(1)
        tp2 = base_tp + np.where(swap, da_tp, db_tp).sum(1)
        pp1 = base_pp + np.where(swap, db_pp, da_pp).sum(1)
        pp2 = base_pp + np.where(swap, da_pp, db_pp).sum(1)
        stat = np.abs(f1(tp1, pp1) - f1(tp2, pp2))
        hits += int(np.sum(stat >= observed - 1e-12))
        done += n
    return (hits + 1) / (trials + 1)
