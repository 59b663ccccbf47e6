"""Ablation ladder: supervised baseline, then self-training with one ingredient added per row.

Rows, per seed:

1. ``baseline``: supervised training on human labels (no smoothing). This
   model is also the teacher for every self-training row, so all rows share
   the same pseudo labels.
2. ``vanilla ST``: student with alpha = 1 and no smoothing.
3. ``+ weighted loss``: best alpha from ``alphas`` (1.0 always included).
4. ``+ label smoothing``: best shared beta (beta_human = beta_pseudo) at that alpha.
5. ``+ discriminative LS``: best (beta_human, beta_pseudo) pair at that alpha,
   the shared-beta winner included.

Each row's search space contains the previous row's choice and ties keep the
earlier choice, so validation F1 never drops down the ladder within a seed.
Identical configurations are trained once and reused.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import LabeledExample
from .model import ModelConfig, init_params
from .selftrain import (
    STConfig,
    TrainingData,
    evaluate,
    labels_fingerprint,
    pseudo_label,
    train_student,
    train_supervised,
)

logger = logging.getLogger(__name__)

ROW_NAMES = ("baseline", "vanilla ST", "+ weighted loss", "+ label smoothing", "+ discriminative LS")


@dataclass(frozen=True)
class LadderGrid:
    alphas: tuple[float, ...] = (1.0, 0.5)
    shared_betas: tuple[float, ...] = (0.0, 0.1)
    pairs: tuple[tuple[float, float], ...] = ((0.05, 0.2),)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class SeedResult:
    seed: int
    val_f1: dict[str, float] = field(default_factory=dict)
    test_f1: dict[str, float] = field(default_factory=dict)
    chosen: dict[str, tuple[float, float, float]] = field(default_factory=dict)
    teacher_fingerprint: str = ""
    pseudo_fingerprint: str = ""
    baseline_seconds: float = 0.0
    seconds: float = 0.0


@dataclass
class AblationResult:
    seeds: list[SeedResult]
    grid: LadderGrid
    config: dict
    model_config: dict

    def mean(self, row: str, split: str = "val") -> float:
        vals = [getattr(s, f"{split}_f1")[row] for s in self.seeds if row in getattr(s, f"{split}_f1")]
        return float(np.mean(vals)) if vals else float("nan")

    def to_dict(self) -> dict:
        return {
            "rows": list(ROW_NAMES),
            "grid": self.grid.to_dict(),
            "config": self.config,
            "model_config": self.model_config,
            "seeds": [dataclasses.asdict(s) for s in self.seeds],
            "mean_val_f1": {r: self.mean(r, "val") for r in ROW_NAMES},
            "mean_test_f1": {r: self.mean(r, "test") for r in ROW_NAMES},
        }

    def report(self) -> str:
        """Fixed-column ladder: mean validation / test F1 (percent) and the change per row."""
        lines = [
            f"{'Model':<24}{'val F1':>9}{'delta':>8}{'test F1':>9}{'delta':>8}   chosen (alpha, b1, b2) per seed",
        ]
        prev_v = prev_t = None
        for row in ROW_NAMES:
            v, t = 100 * self.mean(row, "val"), 100 * self.mean(row, "test")
            dv = "" if prev_v is None else f"{v - prev_v:+.2f}"
            dt = "" if prev_t is None else f"{t - prev_t:+.2f}"
            chosen = " ".join(
                "({:g},{:g},{:g})".format(*s.chosen[row]) for s in self.seeds if row in s.chosen
            )
            lines.append(f"{row:<24}{v:9.2f}{dv:>8}{t:9.2f}{dt:>8}   {chosen}")
            prev_v, prev_t = v, t
        lines.append(f"seeds: {[s.seed for s in self.seeds]}")
        return "\n".join(lines) + "\n"


def run_seed(data: TrainingData, unlabeled, test: Sequence[LabeledExample], model_config: ModelConfig,
             config: STConfig, seed: int, grid: LadderGrid = LadderGrid(), result: SeedResult | None = None,
             on_row=None, models: dict | None = None) -> SeedResult:
    """All five rows for one seed.

    ``on_row`` is called after each row (for checkpointing progress). If
    ``models`` is a dict it receives the parameters chosen for each row.
    """
    t0 = time.perf_counter()
    res = result or SeedResult(seed)
    cfg = config.replace(seed=seed)
    init = init_params(model_config, seed, data.vocab.fingerprint())
    teacher, rep = train_supervised(data, init, cfg, beta=0.0)
    res.teacher_fingerprint = rep.params_fingerprint
    res.baseline_seconds = time.perf_counter() - t0

    def record(row, key, val, params):
        res.val_f1[row] = val
        res.test_f1[row] = evaluate(params, data, cfg.window, test).f1
        res.chosen[row] = key
        if models is not None:
            models[row] = params
        logger.info("seed %d %-22s val %.4f test %.4f %s", seed, row, val, res.test_f1[row], key)
        if on_row:
            on_row(res)

    record(ROW_NAMES[0], (0.0, 0.0, 0.0), rep.best_val_f1, teacher)
    pseudo = pseudo_label(teacher, unlabeled, data.vocab, cfg.window)
    res.pseudo_fingerprint = labels_fingerprint(pseudo)

    trained: dict[tuple[float, float, float], tuple[float, object]] = {}

    def student(key):
        if key not in trained:
            alpha, b1, b2 = key
            params, srep = train_student(data, pseudo, init, cfg.replace(alpha=alpha, beta_human=b1, beta_pseudo=b2))
            trained[key] = (srep.best_val_f1, params)
        return trained[key]

    def best_of(keys):
        best_key, best_val = None, -1.0
        for key in keys:
            val = student(key)[0]
            if val > best_val:
                best_key, best_val = key, val
        return best_key

    key = (1.0, 0.0, 0.0)
    record(ROW_NAMES[1], key, *student(key))

    alphas = [1.0] + [a for a in grid.alphas if a != 1.0]
    key = best_of([(a, 0.0, 0.0) for a in alphas])
    record(ROW_NAMES[2], key, *student(key))
    alpha = key[0]

    betas = [0.0] + [b for b in grid.shared_betas if b != 0.0]
    key = best_of([(alpha, b, b) for b in betas])
    record(ROW_NAMES[3], key, *student(key))

    pairs = [key] + [(alpha, b1, b2) for b1, b2 in grid.pairs if (alpha, b1, b2) != key]
    key = best_of(pairs)
    record(ROW_NAMES[4], key, *student(key))
    res.seconds = time.perf_counter() - t0
    return res


def run_ablation(data: TrainingData, unlabeled, test: Sequence[LabeledExample], model_config: ModelConfig,
                 config: STConfig, seeds: Sequence[int] = (0, 1, 2, 3, 4), grid: LadderGrid = LadderGrid(),
                 out_path: str | Path | None = None) -> AblationResult:
    """Run the ladder for every seed.

    With ``out_path`` the JSON result is rewritten after every row, so a crash
    or interruption leaves the finished rows on disk.
    """
    result = AblationResult([], grid, config.to_dict(), model_config.to_dict())

    def save(_=None):
        if out_path is not None:
            Path(out_path).write_text(json.dumps(result.to_dict(), indent=2))

    for seed in seeds:
        res = SeedResult(seed)
        result.seeds.append(res)
        run_seed(data, unlabeled, test, model_config, config, seed, grid, result=res, on_row=save)
        save()
    return result
