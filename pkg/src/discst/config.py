"""Run configuration: a nested JSON file, command-line overrides, and the data it points to.

Example file::

    {
      "label_set": "english4",
      "seeds": [0],
      "data": {"train": "train.tsv", "dev": "dev.tsv", "test": "test.tsv",
               "unlabeled": "raw.txt", "vocab_size": 3000},
      "model": {"num_layers": 2, "d_model": 64},
      "selftrain": {"alpha": 0.5, "beta_human": 0.05, "beta_pseudo": 0.2, "epochs": 14},
      "window": {"window": 64, "left_overlap": 20, "right_overlap": 8}
    }

``data.synthetic`` (a dict of ``generate_benchmark`` arguments) replaces the
file paths with a generated benchmark.
"""

from __future__ import annotations

import copy
import itertools
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .ablation import LadderGrid
from .corpus import LabeledExample, Vocabulary, build_vocabulary, read_text_corpus, read_tsv, read_unpunctuated
from .decode import WindowSpec
from .errors import ConfigError, DataError
from .labels import Source, get_label_set
from .model import ModelConfig
from .selftrain import STConfig, TrainingData
from .synthetic import generate_benchmark

DEFAULTS: dict[str, Any] = {
    "label_set": "english4",
    "seeds": [0],
    "data": {
        "train": None,
        "dev": None,
        "test": None,
        "unlabeled": None,
        "vocab": None,
        "vocab_size": 3000,
        "lowercase": True,
        "synthetic": None,
    },
    "model": {
        "num_layers": 2,
        "d_model": 64,
        "num_heads": 4,
        "d_ff": 128,
        "max_positions": 64,
        "dropout_rate": 0.1,
        "dtype": "float32",
    },
    "selftrain": {
        "alpha": 1.0,
        "beta_human": 0.0,
        "beta_pseudo": 0.0,
        "st_iterations": 1,
        "epochs": 14,
        "batch_size": 8,
        "learning_rate": 2e-3,
        "pseudo_ratio": 1.0,
        "max_len": 64,
        "chunk_overlap": 16,
        "grad_clip": 1.0,
    },
    "window": {"window": 64, "left_overlap": 20, "right_overlap": 8},
    "tune": {
        "alphas": [0.25, 0.5, 1.0],
        "betas_human": [0.0, 0.05, 0.1],
        "betas_pseudo": [0.05, 0.1, 0.2],
        "overlaps": [[0, 0], [8, 8], [16, 16], [20, 8], [24, 4], [28, 8], [32, 0]],
    },
    "ablation": {"alphas": [1.0, 0.5], "shared_betas": [0.0, 0.1], "pairs": [[0.05, 0.2]]},
}


def merge(base: dict, update: dict, where: str = "") -> dict:
    """Recursive dict update that rejects keys the defaults do not know."""
    out = copy.deepcopy(base)
    for key, value in update.items():
        if key not in out:
            raise ConfigError(f"unknown config key {where}{key!r}")
        if isinstance(out[key], dict) and isinstance(value, dict):
            out[key] = merge(out[key], value, f"{where}{key}.")
        else:
            out[key] = value
    return out


def parse_override(text: str) -> dict:
    """``section.key=value`` into a nested dict; the value is JSON when it parses, else a string."""
    if "=" not in text:
        raise ConfigError(f"override must look like section.key=value, got {text!r}")
    dotted, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    out: dict = {}
    node = out
    parts = dotted.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value
    return out


@dataclass
class RunConfig:
    raw: dict
    base_dir: Path

    @classmethod
    def load(cls, path: str | Path | None = None, overrides: list[dict] = ()) -> "RunConfig":
        resolved = copy.deepcopy(DEFAULTS)
        base_dir = Path.cwd()
        if path is not None:
            path = Path(path)
            try:
                text = path.read_text(encoding="utf-8")
            except OSError as exc:
                raise DataError(f"cannot read config {path}: {exc}") from None
            try:
                resolved = merge(resolved, json.loads(text))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON: {exc}") from None
            base_dir = path.parent.resolve()
        for o in overrides:
            resolved = merge(resolved, o)
        cfg = cls(resolved, base_dir)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        get_label_set(self.raw["label_set"])
        if not self.raw["seeds"] or not all(isinstance(s, int) for s in self.raw["seeds"]):
            raise ConfigError("seeds must be a non-empty list of integers")
        self.st_config()
        LadderGrid(**self.ladder_kwargs())

    def path(self, key: str) -> Path | None:
        value = self.raw["data"][key]
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    def require_paths(self, *keys: str) -> None:
        """Every named data path is configured and exists (skipped for synthetic data)."""
        if self.raw["data"]["synthetic"] is not None:
            return
        for key in keys:
            p = self.path(key)
            if p is None:
                raise ConfigError(f"data.{key} is not set")
            if not p.exists():
                raise DataError(f"data.{key}: {p} does not exist")

    @property
    def label_set(self):
        return get_label_set(self.raw["label_set"])

    @property
    def seeds(self) -> list[int]:
        return list(self.raw["seeds"])

    def window(self) -> WindowSpec:
        return WindowSpec(**self.raw["window"])

    def st_config(self, seed: int | None = None) -> STConfig:
        st = dict(self.raw["selftrain"])
        beta_h, beta_p = st.pop("beta_human"), st.pop("beta_pseudo")
        cfg = STConfig(window=self.window(), seed=self.seeds[0] if seed is None else seed, **st)
        return cfg.replace(beta_human=beta_h, beta_pseudo=beta_p)

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(vocab_size=vocab_size, num_classes=self.label_set.num_classes, **self.raw["model"])

    def ladder_kwargs(self) -> dict:
        a = self.raw["ablation"]
        return {"alphas": tuple(a["alphas"]), "shared_betas": tuple(a["shared_betas"]),
                "pairs": tuple(tuple(p) for p in a["pairs"])}

    def grid(self) -> list[tuple[float, float, float]]:
        t = self.raw["tune"]
        return list(itertools.product(t["alphas"], t["betas_human"], t["betas_pseudo"]))

    def to_json(self) -> str:
        return json.dumps(self.raw, indent=2, sort_keys=True) + "\n"


@dataclass
class LoadedData:
    train: list[LabeledExample]
    dev: list[LabeledExample]
    test: list[LabeledExample]
    unlabeled: list[list[str]]
    vocab: Vocabulary

    def training_data(self, label_set) -> TrainingData:
        return TrainingData(self.vocab, self.train, self.dev, label_set)


def _read_labeled(path: Path, cfg: RunConfig) -> list[LabeledExample]:
    if path.suffix == ".tsv":
        examples = read_tsv(path, Source.HUMAN)
    else:
        examples = read_text_corpus(path, cfg.label_set, cfg.raw["data"]["lowercase"])
    allowed = set(cfg.label_set.labels)
    for k, ex in enumerate(examples):
        bad = set(ex.labels) - allowed
        if bad:
            raise DataError(f"{path}: example {k} uses labels {sorted(b.name for b in bad)} "
                            f"outside label set {cfg.label_set.name}")
    if not examples:
        raise DataError(f"{path}: no examples")
    return examples


def load_data(cfg: RunConfig, need: tuple[str, ...] = ("train", "dev")) -> LoadedData:
    """Read (or generate) the splits in ``need`` and load or build the vocabulary."""
    d = cfg.raw["data"]
    if d["synthetic"] is not None:
        bench = generate_benchmark(label_set=cfg.label_set, **d["synthetic"])
        train, dev, test, unlabeled = bench.train, bench.dev, bench.test, bench.unlabeled
    else:
        cfg.require_paths(*need)
        train = _read_labeled(cfg.path("train"), cfg) if "train" in need else []
        dev = _read_labeled(cfg.path("dev"), cfg) if "dev" in need else []
        test = _read_labeled(cfg.path("test"), cfg) if "test" in need else []
        unlabeled = read_unpunctuated(cfg.path("unlabeled"), d["lowercase"]) if "unlabeled" in need else []
    if d["vocab"] is not None:
        cfg.require_paths("vocab")
        vocab = Vocabulary.load(cfg.path("vocab"))
    else:
        words = itertools.chain((w for e in train for w in e.words), (w for u in unlabeled for w in u))
        vocab = build_vocabulary(words, max_size=d["vocab_size"])
    return LoadedData(train, dev, test, unlabeled, vocab)
