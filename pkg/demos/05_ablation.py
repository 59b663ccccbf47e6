"""
The ablation ladder
===================

Baseline, then vanilla self-training, then the loss weight, shared
label smoothing and per-source smoothing, each row searching a space
that contains the previous row's choice. Same as ``discst ablate``.

One seed on the full synthetic benchmark takes about six minutes;
pass more seeds on the command line, e.g. ``python 05_ablation.py 0 1 2``.
"""

import sys

from discst.ablation import LadderGrid, run_ablation
from discst.config import RunConfig, load_data

seeds = [int(s) for s in sys.argv[1:]] or [0]
cfg = RunConfig.load(None, [{"data": {"synthetic": {}}, "seeds": seeds}])
data = load_data(cfg, ("train", "dev", "test", "unlabeled"))
print(f"{sum(len(e.words) for e in data.train)} labeled words, "
      f"{sum(len(u) for u in data.unlabeled)} unlabeled, vocabulary {len(data.vocab)}")

result = run_ablation(data.training_data(cfg.label_set), data.unlabeled, data.test,
                      cfg.model_config(len(data.vocab)), cfg.st_config(), seeds,
                      LadderGrid(**cfg.ladder_kwargs()))
print(result.report())
